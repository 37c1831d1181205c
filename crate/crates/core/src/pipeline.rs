//! Scene directories on disk and the warp -> mesh -> condition chain.
//!
//! A scene directory holds `scene.json` plus, per view `i`:
//!
//! ```text
//! view_<i>.png          shaded image
//! view_<i>.cam.txt      camera (4x4 world-to-camera, then fx fy cx cy)
//! view_<i>.points.moai  H x W x 3 world points
//! view_<i>.mask.moai    H x W validity
//! view_<i>.depth.moai   H x W camera depth
//! view_<i>.normals.moai H x W x 3 world normals
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::condition::{
    assemble_pointmap_condition, assemble_reference_condition, assemble_target_condition,
    CameraSpaceNormalizer, EmbedConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{merge_pointmaps, project_points, CameraPose, PointCloud, Pointmap, Vec3};
use crate::scene::{render_view, Scene, SceneSpec};
use crate::surface::{ball_pivot, estimate_radii, normal_mask, rasterize_mesh, MeshRender, TriMesh};
use crate::tensor::{load_image, read_tensor, save_image, write_tensor, BinaryMask, RgbImage, Tensor};

pub const MIN_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub spec: SceneSpec,
    pub views: usize,
    pub height: usize,
    pub width: usize,
}

pub fn view_path(dir: &Path, view: usize, suffix: &str) -> PathBuf {
    dir.join(format!("view_{view}.{suffix}"))
}

/// Renders every camera of `scene` and writes the scene directory.
pub fn write_scene(dir: &Path, spec: &SceneSpec, scene: &Scene) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let info = SceneInfo {
        spec: spec.clone(),
        views: scene.cameras.len(),
        height: scene.height,
        width: scene.width,
    };
    write_text(&dir.join("scene.json"), &(serde_json::to_string_pretty(&info).expect("plain data") + "\n"))?;
    for (i, cam) in scene.cameras.iter().enumerate() {
        let r = render_view(scene, cam, scene.height, scene.width);
        save_image(&r.image, view_path(dir, i, "png"))?;
        cam.save(view_path(dir, i, "cam.txt"))?;
        write_tensor(&r.pointmap.points_tensor(), view_path(dir, i, "points.moai"))?;
        write_tensor(&r.pointmap.valid().to_tensor(), view_path(dir, i, "mask.moai"))?;
        write_tensor(&vec_tensor(&r.depth, scene.height, scene.width)?, view_path(dir, i, "depth.moai"))?;
        write_tensor(&vec3_tensor(&r.normals, scene.height, scene.width)?, view_path(dir, i, "normals.moai"))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn vec_tensor(v: &[f64], h: usize, w: usize) -> Result<Tensor> {
    Tensor::new(vec![h, w], v.iter().map(|&x| x as f32).collect())
}

fn vec3_tensor(v: &[Vec3], h: usize, w: usize) -> Result<Tensor> {
    Tensor::new(vec![h, w, 3], v.iter().flat_map(|n| n.iter().map(|&x| x as f32)).collect())
}

pub fn read_scene_info(dir: &Path) -> Result<SceneInfo> {
    let path = dir.join("scene.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// One view as read back from a scene directory.
#[derive(Debug, Clone)]
pub struct LoadedView {
    pub camera: CameraPose,
    pub image: RgbImage,
    /// World points colored from the image.
    pub pointmap: Pointmap,
    pub depth: Tensor,
    pub normals: Tensor,
}

pub fn load_camera(dir: &Path, view: usize) -> Result<CameraPose> {
    CameraPose::load(view_path(dir, view, "cam.txt"))
}

pub fn load_view(dir: &Path, view: usize) -> Result<LoadedView> {
    let camera = load_camera(dir, view)?;
    let image = load_image(view_path(dir, view, "png"))?;
    let points = read_tensor(view_path(dir, view, "points.moai"))?;
    let mask = read_tensor(view_path(dir, view, "mask.moai"))?;
    let pointmap = Pointmap::from_tensors(&points, &mask, Some(&image.to_tensor()))?;
    let (h, w) = (pointmap.height(), pointmap.width());
    let depth = read_tensor(view_path(dir, view, "depth.moai"))?;
    depth.expect_grid(h, w, None)?;
    let normals = read_tensor(view_path(dir, view, "normals.moai"))?;
    normals.expect_grid(h, w, Some(3))?;
    Ok(LoadedView {
        camera,
        image,
        pointmap,
        depth,
        normals,
    })
}

/// Resolved pipeline settings. Build through [`ConfigOverrides`].
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub scene_dir: PathBuf,
    pub out_dir: PathBuf,
    pub target: usize,
    pub refs: Vec<usize>,
    /// Expected image size; must match the scene when given.
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub embed: EmbedConfig,
    pub radii: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

/// Partially specified settings, from a key=value file or from flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub scene_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub target: Option<usize>,
    pub refs: Option<Vec<usize>>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub embed_l: Option<usize>,
    pub embed_base: Option<f64>,
    pub radii: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|e| Error::Config(format!("bad list item {t:?}: {e}")))
        })
        .collect()
}

impl ConfigOverrides {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|e| Error::Config(format!("line {}: {key}: {e}", n + 1)))
            };
            match key {
                "scene_dir" => c.scene_dir = Some(value.into()),
                "out_dir" => c.out_dir = Some(value.into()),
                "target" => c.target = Some(num(value)?),
                "refs" => c.refs = Some(parse_list(value)?),
                "height" => c.height = Some(num(value)?),
                "width" => c.width = Some(num(value)?),
                "embed_l" => c.embed_l = Some(num(value)?),
                "embed_base" => {
                    c.embed_base = Some(
                        value
                            .parse()
                            .map_err(|e| Error::Config(format!("line {}: {key}: {e}", n + 1)))?,
                    )
                }
                "radii" => c.radii = Some(parse_list(value)?),
                "seed" => {
                    c.seed = Some(
                        value
                            .parse()
                            .map_err(|e| Error::Config(format!("line {}: {key}: {e}", n + 1)))?,
                    )
                }
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Fields set in `flags` take precedence.
    pub fn overridden_by(self, flags: ConfigOverrides) -> Self {
        Self {
            scene_dir: flags.scene_dir.or(self.scene_dir),
            out_dir: flags.out_dir.or(self.out_dir),
            target: flags.target.or(self.target),
            refs: flags.refs.or(self.refs),
            height: flags.height.or(self.height),
            width: flags.width.or(self.width),
            embed_l: flags.embed_l.or(self.embed_l),
            embed_base: flags.embed_base.or(self.embed_base),
            radii: flags.radii.or(self.radii),
            seed: flags.seed.or(self.seed),
        }
    }

    pub fn resolve(self) -> Result<PipelineConfig> {
        let defaults = EmbedConfig::default();
        let cfg = PipelineConfig {
            scene_dir: self.scene_dir.unwrap_or_else(|| PathBuf::from(".")),
            out_dir: self.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            target: self.target.ok_or_else(|| Error::Config("no target view given".into()))?,
            refs: self.refs.ok_or_else(|| Error::Config("no reference views given".into()))?,
            height: self.height,
            width: self.width,
            embed: EmbedConfig {
                num_frequencies: self.embed_l.unwrap_or(defaults.num_frequencies),
                base: self.embed_base.unwrap_or(defaults.base),
            },
            radii: self.radii,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scene_dir.as_os_str().is_empty() || self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("paths must be non-empty".into()));
        }
        if self.refs.is_empty() {
            return Err(Error::Config("at least one reference view is required".into()));
        }
        if self.refs.contains(&self.target) {
            return Err(Error::Config(format!("target {} is also a reference", self.target)));
        }
        let mut sorted = self.refs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.refs.len() {
            return Err(Error::Config(format!("duplicate reference views in {:?}", self.refs)));
        }
        for d in [self.height, self.width].into_iter().flatten() {
            if d < MIN_DIM {
                return Err(Error::Config(format!("image dimension {d} is below {MIN_DIM}")));
            }
        }
        self.embed.validate()?;
        if let Some(r) = &self.radii {
            if r.is_empty() || r.iter().any(|x| !(*x > 0.0 && x.is_finite())) || r.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Config(format!("radii must be positive and ascending, got {r:?}")));
            }
        }
        Ok(())
    }
}

/// Merges the reference pointmaps and splats them into the target camera.
pub fn warp_stage(refs: &[LoadedView], target: &CameraPose, height: usize, width: usize) -> Result<(PointCloud, Pointmap)> {
    let pms: Vec<Pointmap> = refs.iter().map(|r| r.pointmap.clone()).collect();
    let cloud = merge_pointmaps(&pms)?;
    let projected = project_points(&cloud, target, height, width);
    Ok((cloud, projected))
}

/// Ball-pivots the cloud and orients faces towards `viewpoint`.
pub fn mesh_stage(cloud: &PointCloud, radii: Option<&[f64]>, viewpoint: &Vec3) -> Result<(TriMesh, Vec<f64>)> {
    let radii = match radii {
        Some(r) => r.to_vec(),
        None => estimate_radii(cloud)?,
    };
    let mut mesh = ball_pivot(cloud, &radii)?;
    mesh.orient_towards(viewpoint);
    Ok((mesh, radii))
}

/// Rasterizes the mesh and drops back-facing pixels.
pub fn render_stage(mesh: &TriMesh, target: &CameraPose, height: usize, width: usize) -> Result<MeshRender> {
    let render = rasterize_mesh(mesh, target, height, width);
    let keep = normal_mask(&render, target);
    render.restrict(&keep)
}

pub fn centroid_of(cameras: &[&CameraPose]) -> Vec3 {
    cameras.iter().map(|c| c.center()).sum::<Vec3>() / cameras.len().max(1) as f64
}

/// Outcome of a pipeline run: artifacts written and summary numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub artifacts: Vec<PathBuf>,
    pub warp_coverage: f64,
    pub mesh_coverage: f64,
    pub faces: usize,
    pub radii: Vec<f64>,
}

pub const MANIFEST_NAME: &str = "manifest.json";
pub const TIMINGS_KEY: &str = "timings_ms";

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let mut timings = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut BTreeMap<String, f64>| {
        let now = Instant::now();
        timings.insert(name.to_string(), (now - clock).as_secs_f64() * 1e3);
        clock = now;
    };

    let info = read_scene_info(&cfg.scene_dir)?;
    for &v in cfg.refs.iter().chain([&cfg.target]) {
        if v >= info.views {
            return Err(Error::Config(format!("view {v} does not exist; the scene has {}", info.views)));
        }
    }
    if cfg.height.is_some_and(|h| h != info.height) || cfg.width.is_some_and(|w| w != info.width) {
        return Err(Error::Config(format!(
            "requested size {:?}x{:?} differs from the scene's {}x{}",
            cfg.height, cfg.width, info.height, info.width
        )));
    }
    let (h, w) = (info.height, info.width);
    let target = load_camera(&cfg.scene_dir, cfg.target)?;
    let refs = cfg
        .refs
        .iter()
        .map(|&v| load_view(&cfg.scene_dir, v))
        .collect::<Result<Vec<_>>>()?;
    lap("load", &mut timings);

    let (cloud, projected) = warp_stage(&refs, &target, h, w)?;
    lap("warp", &mut timings);

    let viewpoint = centroid_of(&refs.iter().map(|r| &r.camera).collect::<Vec<_>>());
    let (mesh, radii) = mesh_stage(&cloud, cfg.radii.as_deref(), &viewpoint)?;
    lap("mesh", &mut timings);

    let render = render_stage(&mesh, &target, h, w)?;
    lap("render", &mut timings);

    let norm = CameraSpaceNormalizer::fit(
        &target,
        refs.iter().map(|r| &r.pointmap).chain([&render.pointmap]),
    );
    let target_cond = assemble_target_condition(&norm.apply_render(&render), &cfg.embed)?;
    let warp_cond = assemble_pointmap_condition(&norm.apply(&projected), &cfg.embed)?;
    let ref_conds = refs
        .iter()
        .map(|r| {
            let rotated: Vec<f32> = r
                .normals
                .data()
                .chunks_exact(3)
                .flat_map(|n| {
                    let v = norm.rotate(&Vec3::new(n[0] as f64, n[1] as f64, n[2] as f64));
                    [v.x as f32, v.y as f32, v.z as f32]
                })
                .collect();
            let normals = Tensor::new(r.normals.dims().to_vec(), rotated)?;
            assemble_reference_condition(&norm.apply(&r.pointmap), &r.depth, &normals, &cfg.embed)
        })
        .collect::<Result<Vec<_>>>()?;
    lap("condition", &mut timings);

    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut artifacts = Vec::new();
    let mut put = |name: &str, t: &Tensor| -> Result<()> {
        let p = out.join(name);
        write_tensor(t, &p)?;
        artifacts.push(p);
        Ok(())
    };
    put("warp.points.moai", &projected.points_tensor())?;
    put("warp.mask.moai", &projected.valid().to_tensor())?;
    put("render.points.moai", &render.pointmap.points_tensor())?;
    put("render.depth.moai", &render.depth_tensor())?;
    put("render.normals.moai", &render.normals_tensor())?;
    put("render.mask.moai", &render.mask.to_tensor())?;
    let mut save_cond = |name: &str, c: &crate::condition::ConditionTensor| -> Result<()> {
        let p = out.join(name);
        c.save(&p)?;
        artifacts.push(p.clone());
        artifacts.push(crate::condition::sidecar_path(&p));
        Ok(())
    };
    save_cond("condition.target.moai", &target_cond)?;
    save_cond("condition.warp.moai", &warp_cond)?;
    for (r, c) in cfg.refs.iter().zip(&ref_conds) {
        save_cond(&format!("condition.ref_{r}.moai"), c)?;
    }
    let mesh_path = out.join("mesh.ply");
    mesh.save(&mesh_path)?;
    artifacts.push(mesh_path);
    lap("write", &mut timings);

    let report = PipelineReport {
        warp_coverage: projected.valid().fraction(),
        mesh_coverage: render.mask.fraction(),
        faces: mesh.faces().len(),
        radii,
        artifacts,
    };
    let manifest = json!({
        "config": {
            "scene_dir": cfg.scene_dir.display().to_string(),
            "target": cfg.target,
            "refs": cfg.refs,
            "height": h,
            "width": w,
            "embed_l": cfg.embed.num_frequencies,
            "embed_base": cfg.embed.base,
            "radii": cfg.radii,
            "seed": cfg.seed,
        },
        "stats": {
            "cloud_points": cloud.len(),
            "faces": report.faces,
            "radii": report.radii,
            "warp_coverage": report.warp_coverage,
            "mesh_coverage": report.mesh_coverage,
            "normalization_scale": norm.scale,
            "target_channels": target_cond.channels(),
        },
        "artifacts": report
            .artifacts
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect::<Vec<_>>(),
        TIMINGS_KEY: timings,
    });
    let manifest_path = out.join(MANIFEST_NAME);
    write_text(&manifest_path, &(serde_json::to_string_pretty(&manifest).expect("plain data") + "\n"))?;
    let mut report = report;
    report.artifacts.push(manifest_path);
    Ok(report)
}

/// Parses a manifest and drops its timing block.
pub fn manifest_without_timings(text: &str) -> Result<Value> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove(TIMINGS_KEY);
    }
    Ok(v)
}

/// Per-pixel coverage of the projection vs. the normal-filtered mesh render.
pub fn coverage(projected: &Pointmap, render: &MeshRender) -> (f64, f64) {
    (projected.valid().fraction(), render.mask.fraction())
}

pub fn mask_from_tensor(t: &Tensor) -> Result<BinaryMask> {
    BinaryMask::from_tensor(t)
}
