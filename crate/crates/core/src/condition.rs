//! Fourier embedding of pointmaps and assembly of the channel-stacked
//! correspondence conditions.
//!
//! Mesh-conditioned layout (default), `6L + 5` channels:
//!
//! ```text
//! [ embed(x) | embed(y) | embed(z) | depth | nx ny nz | mask ]
//! embed(a) = sin(b^0 pi a), cos(b^0 pi a), ..., sin(b^(L-1) pi a), cos(b^(L-1) pi a)
//! ```
//!
//! The projected-pointmap layout keeps only the embedding and the mask
//! (`6L + 1` channels).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{to_camera_space, CameraPose, Pointmap, Vec3};
use crate::surface::MeshRender;
use crate::tensor::{write_tensor, BinaryMask, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedConfig {
    pub num_frequencies: usize,
    pub base: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            num_frequencies: 4,
            base: 2.0,
        }
    }
}

impl EmbedConfig {
    pub fn new(num_frequencies: usize, base: f64) -> Result<Self> {
        let c = Self {
            num_frequencies,
            base,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frequencies == 0 {
            return Err(Error::Config("embedding needs at least one frequency".into()));
        }
        if !(self.base > 1.0 && self.base.is_finite()) {
            return Err(Error::Config(format!("frequency base must exceed 1, got {}", self.base)));
        }
        Ok(())
    }

    pub fn embed_channels(&self) -> usize {
        6 * self.num_frequencies
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionLayout {
    /// Embedding, depth, normals, mask.
    Mesh,
    /// Embedding and mask only.
    ProjectedPointmap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTensor {
    pub layout: ConditionLayout,
    pub config: EmbedConfig,
    pub tensor: Tensor,
}

impl ConditionTensor {
    pub fn height(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[1]
    }

    pub fn channels(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn mask_channel(&self) -> usize {
        self.channels() - 1
    }

    pub fn channel_names(&self) -> Vec<String> {
        channel_names(self.layout, &self.config)
    }

    /// One `index name` line per channel, in storage order.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "# {}x{}x{} condition, L={} base={}",
            self.height(),
            self.width(),
            self.channels(),
            self.config.num_frequencies,
            self.config.base
        )
        .unwrap();
        for (i, name) in self.channel_names().iter().enumerate() {
            writeln!(s, "{i} {name}").unwrap();
        }
        s
    }

    /// Writes the tensor and a `<path>.channels.txt` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_tensor(&self.tensor, path)?;
        let sidecar = sidecar_path(path);
        std::fs::write(&sidecar, self.manifest()).map_err(|e| Error::io(sidecar, e))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".channels.txt");
    path.with_file_name(name)
}

pub fn channel_names(layout: ConditionLayout, config: &EmbedConfig) -> Vec<String> {
    let mut names = Vec::new();
    for axis in ["x", "y", "z"] {
        for k in 0..config.num_frequencies {
            names.push(format!("embed_{axis}_sin_{k}"));
            names.push(format!("embed_{axis}_cos_{k}"));
        }
    }
    if layout == ConditionLayout::Mesh {
        names.extend(["depth", "normal_x", "normal_y", "normal_z"].map(String::from));
    }
    names.push("mask".into());
    names
}

/// Per-pixel sin/cos features of each coordinate at `base^k * pi`
/// frequencies. Invalid pixels produce zeros.
pub fn fourier_embed(pointmap: &Pointmap, config: &EmbedConfig) -> Result<Tensor> {
    config.validate()?;
    let (h, w) = (pointmap.height(), pointmap.width());
    let c = config.embed_channels();
    let freqs: Vec<f64> = (0..config.num_frequencies)
        .map(|k| config.base.powi(k as i32) * PI)
        .collect();
    let mut data = vec![0.0f32; h * w * c];
    for (pix, p) in pointmap.points().iter().enumerate() {
        if !pointmap.valid().get(pix) {
            continue;
        }
        let out = &mut data[pix * c..(pix + 1) * c];
        let mut ch = 0;
        for axis in 0..3 {
            for f in &freqs {
                let (s, co) = (f * p[axis]).sin_cos();
                out[ch] = s as f32;
                out[ch + 1] = co as f32;
                ch += 2;
            }
        }
    }
    Tensor::new(vec![h, w, c], data)
}

fn stack(
    embed: &Tensor,
    depth: Option<(&[f64], &[[f64; 3]])>,
    mask: &BinaryMask,
    config: &EmbedConfig,
    layout: ConditionLayout,
) -> Result<ConditionTensor> {
    let (h, w) = (mask.height(), mask.width());
    let e = config.embed_channels();
    let c = if layout == ConditionLayout::Mesh { e + 5 } else { e + 1 };
    let max_depth = depth
        .map(|(d, _)| {
            d.iter()
                .enumerate()
                .filter(|(i, _)| mask.get(*i))
                .map(|(_, &v)| v)
                .fold(0.0, f64::max)
        })
        .unwrap_or(0.0);
    let mut data = vec![0.0f32; h * w * c];
    for pix in 0..h * w {
        if !mask.get(pix) {
            continue;
        }
        let out = &mut data[pix * c..(pix + 1) * c];
        out[..e].copy_from_slice(&embed.data()[pix * e..(pix + 1) * e]);
        if let Some((d, n)) = depth {
            out[e] = if max_depth > 0.0 { (d[pix] / max_depth) as f32 } else { 0.0 };
            for k in 0..3 {
                out[e + 1 + k] = n[pix][k] as f32;
            }
        }
        out[c - 1] = 1.0;
    }
    Ok(ConditionTensor {
        layout,
        config: *config,
        tensor: Tensor::new(vec![h, w, c], data)?,
    })
}

/// Target condition from a (normal-filtered) mesh render. An all-empty mask
/// is valid and yields an all-zero tensor.
pub fn assemble_target_condition(render: &MeshRender, config: &EmbedConfig) -> Result<ConditionTensor> {
    let n = render.height() * render.width();
    if render.depth.len() != n || render.normals.len() != n {
        return Err(Error::Shape("render buffers disagree with mask size".into()));
    }
    for pix in 0..n {
        let m = render.mask.get(pix);
        if m != (render.depth[pix] > 0.0) || m != render.pointmap.valid().get(pix) {
            return Err(Error::Precondition(format!(
                "render mask, depth and pointmap disagree at pixel {pix}"
            )));
        }
    }
    let embed = fourier_embed(&render.pointmap, config)?;
    let normals: Vec<[f64; 3]> = render.normals.iter().map(|v| [v.x, v.y, v.z]).collect();
    stack(&embed, Some((&render.depth, &normals)), &render.mask, config, ConditionLayout::Mesh)
}

/// Reference condition from dense per-view predictions; the mask channel is
/// constant one.
pub fn assemble_reference_condition(
    pointmap: &Pointmap,
    depth: &Tensor,
    normals: &Tensor,
    config: &EmbedConfig,
) -> Result<ConditionTensor> {
    let (h, w) = (pointmap.height(), pointmap.width());
    depth.expect_grid(h, w, None)?;
    normals.expect_grid(h, w, Some(3))?;
    if pointmap.valid().count() != h * w {
        return Err(Error::Precondition(format!(
            "reference pointmap has {} invalid pixels",
            h * w - pointmap.valid().count()
        )));
    }
    if let Some(i) = depth.data().iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Precondition(format!("reference depth is not positive at pixel {i}")));
    }
    let normal_rows: Vec<[f64; 3]> = normals
        .data()
        .chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();
    if let Some(i) = normal_rows.iter().position(|n| n.iter().all(|&v| v == 0.0)) {
        return Err(Error::Precondition(format!("reference normal missing at pixel {i}")));
    }
    let depth: Vec<f64> = depth.data().iter().map(|&d| d as f64).collect();
    let embed = fourier_embed(pointmap, config)?;
    stack(&embed, Some((&depth, &normal_rows)), pointmap.valid(), config, ConditionLayout::Mesh)
}

/// Condition built directly from a z-buffered projected pointmap: the
/// embedding plus its coverage mask.
pub fn assemble_pointmap_condition(projected: &Pointmap, config: &EmbedConfig) -> Result<ConditionTensor> {
    let embed = fourier_embed(projected, config)?;
    stack(&embed, None, projected.valid(), config, ConditionLayout::ProjectedPointmap)
}

/// Maps pointmaps into a target camera's frame and rescales them by one
/// shared factor so every coordinate lies in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSpaceNormalizer {
    pub camera: CameraPose,
    pub scale: f64,
}

impl CameraSpaceNormalizer {
    pub fn fit<'a>(camera: &CameraPose, pointmaps: impl IntoIterator<Item = &'a Pointmap>) -> Self {
        let mut scale: f64 = 0.0;
        for pm in pointmaps {
            let cam = to_camera_space(pm, camera);
            for (i, p) in cam.points().iter().enumerate() {
                if cam.valid().get(i) {
                    scale = scale.max(p.amax());
                }
            }
        }
        Self {
            camera: camera.clone(),
            scale: if scale > 0.0 { scale } else { 1.0 },
        }
    }

    pub fn apply(&self, pointmap: &Pointmap) -> Pointmap {
        to_camera_space(pointmap, &self.camera)
            .map_valid(|p| p / self.scale)
            .expect("scaling keeps points finite")
    }

    /// Rotates a world-frame direction into the camera frame.
    pub fn rotate(&self, direction: &Vec3) -> Vec3 {
        self.camera.rotation() * direction
    }

    /// Normalizes the pointmap and rotates the normals; depth is untouched.
    pub fn apply_render(&self, render: &MeshRender) -> MeshRender {
        MeshRender {
            pointmap: self.apply(&render.pointmap),
            normals: render.normals.iter().map(|n| self.rotate(n)).collect(),
            ..render.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn one_pixel(p: Vec3) -> Pointmap {
        Pointmap::new(1, 1, vec![p], BinaryMask::ones(1, 1), None).unwrap()
    }

    #[test]
    fn zero_coordinate_embeds_to_sin0_cos1() {
        let cfg = EmbedConfig::new(1, 2.0).unwrap();
        let t = fourier_embed(&one_pixel(Vec3::zeros()), &cfg).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn embedding_shape() {
        let pm = Pointmap::empty(3, 5);
        let t = fourier_embed(&pm, &EmbedConfig::default()).unwrap();
        assert_eq!(t.dims(), &[3, 5, 24]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_coordinate_two_levels() {
        let cfg = EmbedConfig::new(2, 2.0).unwrap();
        let t = fourier_embed(&one_pixel(Vec3::new(0.5, 0.0, 0.0)), &cfg).unwrap();
        let expected = [
            (PI / 2.0).sin(),
            (PI / 2.0).cos(),
            PI.sin(),
            PI.cos(),
        ]
        .map(|v| v as f32);
        assert_eq!(&t.data()[..4], &expected);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(EmbedConfig::new(0, 2.0).is_err());
        assert!(EmbedConfig::new(4, 1.0).is_err());
    }

    #[test]
    fn channel_counts() {
        let cfg = EmbedConfig::default();
        assert_eq!(channel_names(ConditionLayout::Mesh, &cfg).len(), 29);
        assert_eq!(channel_names(ConditionLayout::ProjectedPointmap, &cfg).len(), 25);
    }

    #[test]
    fn sidecar_sits_next_to_tensor() {
        assert_eq!(
            sidecar_path(Path::new("out/cond.moai")),
            Path::new("out/cond.moai.channels.txt")
        );
    }

    #[test]
    fn reference_rejects_sparse_input() {
        let pm = Pointmap::new(
            1,
            2,
            vec![Vec3::new(1.0, 1.0, 1.0), Vec3::zeros()],
            BinaryMask::new(1, 2, vec![true, false]).unwrap(),
            None,
        )
        .unwrap();
        let depth = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let normals = Tensor::new(vec![1, 2, 3], vec![0.0, 0.0, -1.0, 0.0, 0.0, -1.0]).unwrap();
        let err = assemble_reference_condition(&pm, &depth, &normals, &EmbedConfig::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn normalizer_bounds_coordinates() {
        let cam = CameraPose::look_at(
            Vec3::new(0.0, -5.0, 0.0),
            Vec3::zeros(),
            Vec3::z(),
            crate::geometry::Intrinsics { fx: 10.0, fy: 10.0, cx: 1.0, cy: 1.0 },
        )
        .unwrap();
        let pm = Pointmap::new(
            1,
            2,
            vec![Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 1.0)],
            BinaryMask::ones(1, 2),
            None,
        )
        .unwrap();
        let norm = CameraSpaceNormalizer::fit(&cam, [&pm]);
        let out = norm.apply(&pm);
        let max = out.points().iter().map(|p| p.amax()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }
}
