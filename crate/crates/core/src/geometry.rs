//! Pinhole cameras, pointmaps, z-buffered point projection and the
//! interpolative/extrapolative view classifier.
//!
//! Conventions: camera frame is x right, y down, z forward. A pixel at
//! `(row, col)` has its center at image coordinates `(u, v) = (col, row)`,
//! so a point lands on the nearest integer pixel (round half up).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, Tensor};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Symmetric pinhole with the principal point at the image center.
    pub fn from_fov(height: usize, width: usize, horizontal_fov_deg: f64) -> Self {
        let f = width as f64 / (2.0 * (horizontal_fov_deg.to_radians() / 2.0).tan());
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }
}

/// Rigid world-to-camera transform plus pinhole intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    world_to_camera: Matrix4<f64>,
    intrinsics: Intrinsics,
}

impl CameraPose {
    pub fn new(world_to_camera: Matrix4<f64>, intrinsics: Intrinsics) -> Result<Self> {
        if world_to_camera.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("camera matrix is not finite".into()));
        }
        let bottom = world_to_camera.fixed_view::<1, 4>(3, 0);
        if bottom != nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0) {
            return Err(Error::Precondition(
                "camera matrix bottom row must be (0, 0, 0, 1)".into(),
            ));
        }
        let r: Matrix3<f64> = world_to_camera.fixed_view::<3, 3>(0, 0).into();
        let ortho_err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if ortho_err > 1e-6 || r.determinant() <= 0.0 {
            return Err(Error::Precondition(format!(
                "rotation is not proper orthonormal (|RR^T - I| = {ortho_err:e})"
            )));
        }
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite())
            || !(cx.is_finite() && cy.is_finite())
        {
            return Err(Error::Precondition(format!(
                "invalid intrinsics {intrinsics:?}"
            )));
        }
        Ok(Self {
            world_to_camera,
            intrinsics,
        })
    }

    pub fn from_rotation_translation(
        rotation: Matrix3<f64>,
        translation: Vec3,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::new(m, intrinsics)
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Precondition("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Precondition("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::from_rotation_translation(rotation, -(rotation * eye), intrinsics)
    }

    pub fn world_to_camera(&self) -> &Matrix4<f64> {
        &self.world_to_camera
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn translation(&self) -> Vec3 {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into()
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation() * world + self.translation()
    }

    pub fn to_world(&self, camera: &Vec3) -> Vec3 {
        self.rotation().transpose() * (camera - self.translation())
    }

    /// Continuous image coordinates `(u, v)` and depth of a camera-frame
    /// point, or `None` when it is not in front of the camera.
    pub fn project_camera_point(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        if !(p.z > 0.0) {
            return None;
        }
        let Intrinsics { fx, fy, cx, cy } = self.intrinsics;
        Some((fx * p.x / p.z + cx, fy * p.y / p.z + cy, p.z))
    }

    pub fn project(&self, world: &Vec3) -> Option<(f64, f64, f64)> {
        self.project_camera_point(&self.to_camera(world))
    }

    /// Nearest pixel `(row, col)` of a world point and its depth.
    pub fn pixel_of(&self, world: &Vec3, height: usize, width: usize) -> Option<(usize, usize, f64)> {
        let (u, v, z) = self.project(world)?;
        let col = (u + 0.5).floor();
        let row = (v + 0.5).floor();
        if col >= 0.0 && row >= 0.0 && col < width as f64 && row < height as f64 {
            Some((row as usize, col as usize, z))
        } else {
            None
        }
    }

    /// Camera-frame ray direction through image coordinates `(u, v)`,
    /// scaled so its z component is 1.
    pub fn camera_ray(&self, u: f64, v: f64) -> Vec3 {
        let Intrinsics { fx, fy, cx, cy } = self.intrinsics;
        Vec3::new((u - cx) / fx, (v - cy) / fy, 1.0)
    }

    /// World-frame direction through `(u, v)`. Moving one unit along it
    /// advances camera depth by exactly one.
    pub fn world_ray(&self, u: f64, v: f64) -> Vec3 {
        self.rotation().transpose() * self.camera_ray(u, v)
    }

    pub fn inverse_world_to_camera(&self) -> Matrix4<f64> {
        let rt = self.rotation().transpose();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * self.translation())));
        m
    }

    /// Two-line text form: the row-major 4x4 matrix, then `fx fy cx cy`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let rows: Vec<String> = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| self.world_to_camera[(r, c)].to_string())
            .collect();
        writeln!(s, "{}", rows.join(" ")).unwrap();
        let Intrinsics { fx, fy, cx, cy } = self.intrinsics;
        writeln!(s, "{fx} {fy} {cx} {cy}").unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let parse = |line: Option<&str>, n: usize| -> Result<Vec<f64>> {
            let line = line.ok_or_else(|| Error::Format("camera file is truncated".into()))?;
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("{t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != n {
                return Err(Error::Format(format!(
                    "expected {n} numbers on camera line, got {}",
                    vals.len()
                )));
            }
            Ok(vals)
        };
        let m = parse(lines.next(), 16)?;
        let k = parse(lines.next(), 4)?;
        Self::new(
            Matrix4::from_row_slice(&m),
            Intrinsics {
                fx: k[0],
                fy: k[1],
                cx: k[2],
                cy: k[3],
            },
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// H x W grid of world points with a validity mask and optional colors.
/// Invalid pixels hold the `(0, 0, 0)` sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointmap {
    height: usize,
    width: usize,
    points: Vec<Vec3>,
    valid: BinaryMask,
    colors: Option<Vec<[f32; 3]>>,
}

impl Pointmap {
    pub fn new(
        height: usize,
        width: usize,
        points: Vec<Vec3>,
        valid: BinaryMask,
        colors: Option<Vec<[f32; 3]>>,
    ) -> Result<Self> {
        let n = height * width;
        if points.len() != n || valid.height() != height || valid.width() != width {
            return Err(Error::Shape(format!(
                "pointmap {height}x{width} got {} points and a {}x{} mask",
                points.len(),
                valid.height(),
                valid.width()
            )));
        }
        if let Some(c) = &colors {
            if c.len() != n {
                return Err(Error::Shape(format!("{} colors for {n} pixels", c.len())));
            }
        }
        for (i, p) in points.iter().enumerate() {
            if valid.get(i) {
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("point at pixel {i} is not finite")));
                }
            } else if *p != Vec3::zeros() {
                return Err(Error::Precondition(format!(
                    "invalid pixel {i} must hold the zero sentinel"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            points,
            valid,
            colors,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            points: vec![Vec3::zeros(); height * width],
            valid: BinaryMask::zeros(height, width),
            colors: None,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn valid(&self) -> &BinaryMask {
        &self.valid
    }

    pub fn colors(&self) -> Option<&[[f32; 3]]> {
        self.colors.as_deref()
    }

    pub fn point(&self, row: usize, col: usize) -> Option<Vec3> {
        let i = row * self.width + col;
        self.valid.get(i).then(|| self.points[i])
    }

    /// Points that fall outside `mask` are reset to the sentinel.
    pub fn restrict(&self, mask: &BinaryMask) -> Result<Pointmap> {
        self.valid.same_dims(mask)?;
        let valid = self.valid.and(mask)?;
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| if valid.get(i) { *p } else { Vec3::zeros() })
            .collect();
        Pointmap::new(self.height, self.width, points, valid, self.colors.clone())
    }

    pub fn map_valid(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Pointmap> {
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| if self.valid.get(i) { f(p) } else { Vec3::zeros() })
            .collect();
        Pointmap::new(self.height, self.width, points, self.valid.clone(), self.colors.clone())
    }

    pub fn points_tensor(&self) -> Tensor {
        let data = self.points.iter().flat_map(|p| p.iter().map(|&v| v as f32)).collect();
        Tensor::new(vec![self.height, self.width, 3], data).expect("points are finite")
    }

    pub fn colors_tensor(&self) -> Option<Tensor> {
        self.colors.as_ref().map(|c| {
            Tensor::new(vec![self.height, self.width, 3], c.iter().flatten().copied().collect())
                .expect("colors are finite")
        })
    }

    pub fn from_tensors(points: &Tensor, mask: &Tensor, colors: Option<&Tensor>) -> Result<Self> {
        let valid = BinaryMask::from_tensor(mask)?;
        let (h, w) = (valid.height(), valid.width());
        points.expect_grid(h, w, Some(3))?;
        let pts = points
            .data()
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
            .collect();
        let colors = match colors {
            Some(t) => {
                t.expect_grid(h, w, Some(3))?;
                Some(t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
            }
            None => None,
        };
        Pointmap::new(h, w, pts, valid, colors)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub colors: Option<Vec<[f32; 3]>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>, colors: Option<Vec<[f32; 3]>>) -> Result<Self> {
        if let Some(c) = &colors {
            if c.len() != positions.len() {
                return Err(Error::Shape(format!(
                    "{} colors for {} points",
                    c.len(),
                    positions.len()
                )));
            }
        }
        if positions.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("point cloud contains non-finite positions".into()));
        }
        Ok(Self { positions, colors })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Multiset union of the valid points of every pointmap, in input order.
/// Colors survive only if every input carries them.
pub fn merge_pointmaps(pointmaps: &[Pointmap]) -> Result<PointCloud> {
    if pointmaps.is_empty() {
        return Err(Error::Precondition("no pointmaps to merge".into()));
    }
    let with_colors = pointmaps.iter().all(|p| p.colors.is_some());
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    for pm in pointmaps {
        for i in 0..pm.points.len() {
            if pm.valid.get(i) {
                positions.push(pm.points[i]);
                if let Some(c) = &pm.colors {
                    colors.push(c[i]);
                }
            }
        }
    }
    PointCloud::new(positions, with_colors.then_some(colors))
}

/// Z-buffered splat of `cloud` into the camera: for each pixel the index of
/// the point with the smallest positive depth landing there. Equal depths
/// keep the earliest point.
pub fn project_indices(
    cloud: &PointCloud,
    camera: &CameraPose,
    height: usize,
    width: usize,
) -> Vec<Option<usize>> {
    let mut zbuf = vec![f64::INFINITY; height * width];
    let mut owner = vec![None; height * width];
    for (idx, p) in cloud.positions.iter().enumerate() {
        let Some((row, col, z)) = camera.pixel_of(p, height, width) else {
            continue;
        };
        let pix = row * width + col;
        if z < zbuf[pix] {
            zbuf[pix] = z;
            owner[pix] = Some(idx);
        }
    }
    owner
}

/// Renders the cloud into a pointmap of world coordinates seen from `camera`.
pub fn project_points(cloud: &PointCloud, camera: &CameraPose, height: usize, width: usize) -> Pointmap {
    let owner = project_indices(cloud, camera, height, width);
    let mut valid = BinaryMask::zeros(height, width);
    let mut points = vec![Vec3::zeros(); height * width];
    let mut colors = cloud.colors.as_ref().map(|_| vec![[0.0f32; 3]; height * width]);
    for (pix, o) in owner.iter().enumerate() {
        if let Some(idx) = *o {
            valid.set(pix, true);
            points[pix] = cloud.positions[idx];
            if let (Some(out), Some(src)) = (colors.as_mut(), cloud.colors.as_ref()) {
                out[pix] = src[idx];
            }
        }
    }
    Pointmap {
        height,
        width,
        points,
        valid,
        colors: colors.take(),
    }
}

/// Expresses every valid point in the camera's frame.
pub fn to_camera_space(pointmap: &Pointmap, camera: &CameraPose) -> Pointmap {
    let r = camera.rotation();
    let t = camera.translation();
    pointmap
        .map_valid(|p| r * p + t)
        .expect("rigid transform keeps finite points finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewLabel {
    Extrapolative,
    Interpolative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewClass {
    pub label: ViewLabel,
    /// Convex weights over the reference positions when interpolative.
    pub witness: Option<Vec<f64>>,
    /// Distance from the target position to the reference hull.
    pub hull_distance: f64,
}

/// Relative hull-membership tolerance, scaled by the bounding-box diagonal.
/// A floor of 64 ulps of the largest coordinate is added on top.
pub const HULL_TOLERANCE: f64 = 1e-6;

/// Decides whether the target camera center lies in the convex hull of the
/// reference camera centers. Points on the hull boundary are interpolative.
pub fn classify_view(target: &CameraPose, references: &[CameraPose]) -> Result<ViewClass> {
    let refs: Vec<Vec3> = references.iter().map(CameraPose::center).collect();
    classify_position(&target.center(), &refs)
}

pub fn classify_position(target: &Vec3, references: &[Vec3]) -> Result<ViewClass> {
    if references.is_empty() {
        return Err(Error::Precondition("at least one reference camera is required".into()));
    }
    let mut lo = *target;
    let mut hi = *target;
    for r in references {
        lo = lo.inf(r);
        hi = hi.sup(r);
    }
    // rounding floor keeps coincident configurations decidable
    let magnitude = lo.amax().max(hi.amax());
    let tol = HULL_TOLERANCE * (hi - lo).norm() + 64.0 * f64::EPSILON * magnitude;
    let shifted: Vec<Vec3> = references.iter().map(|r| r - target).collect();
    let (weights, nearest) = min_norm_point(&shifted, tol);
    let hull_distance = nearest.norm();
    if hull_distance <= tol {
        Ok(ViewClass {
            label: ViewLabel::Interpolative,
            witness: Some(weights),
            hull_distance,
        })
    } else {
        Ok(ViewClass {
            label: ViewLabel::Extrapolative,
            witness: None,
            hull_distance,
        })
    }
}

/// Wolfe's algorithm for the minimum-norm point of `conv(points)`.
/// Returns convex weights over all points and the point itself. Stops early
/// once the iterate is within `stop_norm` of the origin.
pub fn min_norm_point(points: &[Vec3], stop_norm: f64) -> (Vec<f64>, Vec3) {
    const MAX_ITERS: usize = 500;
    let scale = points.iter().map(|p| p.norm_squared()).fold(0.0, f64::max);
    let first = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.norm_squared().total_cmp(&b.1.norm_squared()))
        .map(|(i, _)| i)
        .expect("points is non-empty");

    let mut support = vec![first];
    let mut weights = vec![1.0];
    let mut x = points[first];

    for _ in 0..MAX_ITERS {
        if x.norm() <= stop_norm {
            break;
        }
        let (j, xp) = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, x.dot(p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if x.norm_squared() - xp <= 1e-13 * scale || support.contains(&j) {
            break;
        }
        support.push(j);
        weights.push(0.0);

        loop {
            let mu = affine_min_norm(points, &support);
            if mu.iter().all(|&m| m > 1e-14) {
                weights = mu;
                break;
            }
            let theta = weights
                .iter()
                .zip(&mu)
                .filter(|(_, &m)| m <= 1e-14)
                .map(|(&w, &m)| if w - m > 0.0 { w / (w - m) } else { 0.0 })
                .fold(1.0, f64::min);
            for (w, m) in weights.iter_mut().zip(&mu) {
                *w = (1.0 - theta) * *w + theta * m;
            }
            // Drop the blocking coordinates; always drop at least the smallest.
            let min_idx = weights
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            let keep: Vec<bool> = weights
                .iter()
                .enumerate()
                .map(|(i, &w)| i != min_idx && w > 1e-14)
                .collect();
            let mut k = 0;
            support.retain(|_| {
                k += 1;
                keep[k - 1]
            });
            let mut k = 0;
            weights.retain(|_| {
                k += 1;
                keep[k - 1]
            });
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            if support.len() == 1 {
                weights = vec![1.0];
                break;
            }
        }
        x = support
            .iter()
            .zip(&weights)
            .fold(Vec3::zeros(), |acc, (&i, &w)| acc + points[i] * w);
    }

    let mut full = vec![0.0; points.len()];
    for (&i, &w) in support.iter().zip(&weights) {
        full[i] += w;
    }
    (full, x)
}

/// Affine weights (summing to one) of the minimum-norm point in the affine
/// hull of `points[support]`.
fn affine_min_norm(points: &[Vec3], support: &[usize]) -> Vec<f64> {
    let base = points[support[0]];
    let k = support.len() - 1;
    if k == 0 {
        return vec![1.0];
    }
    let mut d = DMatrix::<f64>::zeros(3, k);
    for (c, &i) in support[1..].iter().enumerate() {
        d.set_column(c, &(points[i] - base));
    }
    let rhs = DVector::from_column_slice((-base).as_slice());
    let y = d
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(k));
    let mut mu = Vec::with_capacity(k + 1);
    mu.push(1.0 - y.sum());
    mu.extend(y.iter());
    mu
}
