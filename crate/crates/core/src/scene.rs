//! Deterministic synthetic scenes with analytic ray casting.
//!
//! A scene is a handful of spheres and axis-aligned boxes around the origin,
//! optionally enclosed by an inward-facing room so that every camera ray
//! hits something. Cameras sit on a horizontal arc around the centroid of
//! the objects and look at it. World +y is up.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Intrinsics, Pointmap, Vec3};
use crate::tensor::{BinaryMask, RgbImage};

pub const BACKGROUND: [f32; 3] = [0.0, 0.0, 0.0];
const AMBIENT: f64 = 0.2;
const MIN_T: f64 = 1e-9;

/// One step of the splitmix64 generator.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based draw in `[0, 1)` keyed on `(seed, entity, slot)`.
pub fn unit_draw(seed: u64, entity: u64, slot: u64) -> f64 {
    let h = splitmix64(splitmix64(seed ^ splitmix64(entity)).wrapping_add(slot));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn draw_range(seed: u64, entity: u64, slot: u64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_draw(seed, entity, slot)
}

// entity ids
const ENT_CAMERAS: u64 = u64::MAX;
const ENT_ROOM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub primitive_count: usize,
    pub extent: f64,
    pub camera_count: usize,
    pub height: usize,
    pub width: usize,
    pub ring_radius: f64,
    /// Camera height above the object centroid.
    pub elevation: f64,
    /// Angular span of the camera arc; 360 places cameras on a full ring.
    pub arc_degrees: f64,
    pub fov_degrees: f64,
    pub room: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            primitive_count: 5,
            extent: 2.0,
            camera_count: 3,
            height: 64,
            width: 64,
            ring_radius: 4.0,
            elevation: 1.0,
            arc_degrees: 60.0,
            fov_degrees: 60.0,
            room: true,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.primitive_count == 0 || self.camera_count == 0 {
            return bad("primitive and camera counts must be at least 1".into());
        }
        if self.height == 0 || self.width == 0 {
            return bad("image dimensions must be positive".into());
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad(format!("extent {} must be positive", self.extent));
        }
        if !(self.ring_radius > self.extent && self.ring_radius.is_finite()) {
            return bad(format!(
                "ring radius {} must exceed the extent {}",
                self.ring_radius, self.extent
            ));
        }
        if !self.elevation.is_finite() || self.elevation.abs() >= self.ring_radius {
            return bad(format!("elevation {} out of range", self.elevation));
        }
        if !(self.arc_degrees >= 0.0 && self.arc_degrees <= 360.0) {
            return bad(format!("arc {} must lie in [0, 360]", self.arc_degrees));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 170.0) {
            return bad(format!("field of view {} out of range", self.fov_degrees));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64, albedo: [f64; 3] },
    Cuboid { min: [f64; 3], max: [f64; 3], albedo: [f64; 3] },
    /// Box seen from inside; each of the six walls has its own albedo.
    Room { min: [f64; 3], max: [f64; 3], albedo: [[f64; 3]; 6] },
    /// One-sided only in shading; intersects from both sides.
    Plane { point: [f64; 3], normal: [f64; 3], albedo: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Unit surface normal facing against the ray.
    pub normal: Vec3,
    pub primitive: usize,
    pub albedo: [f64; 3],
}

fn v(a: [f64; 3]) -> Vec3 {
    Vector3::from(a)
}

fn facing(n: Vec3, dir: &Vec3) -> Vec3 {
    if n.dot(dir) > 0.0 {
        -n
    } else {
        n
    }
}

/// Slab test; returns entry and exit parameters with the axis of each.
fn slabs(min: &Vec3, max: &Vec3, o: &Vec3, d: &Vec3) -> Option<((f64, usize), (f64, usize))> {
    let mut near = (f64::NEG_INFINITY, 0);
    let mut far = (f64::INFINITY, 0);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < min[a] || o[a] > max[a] {
                return None;
            }
            continue;
        }
        let t0 = (min[a] - o[a]) / d[a];
        let t1 = (max[a] - o[a]) / d[a];
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        if lo > near.0 {
            near = (lo, a);
        }
        if hi < far.0 {
            far = (hi, a);
        }
    }
    (near.0 <= far.0).then_some((near, far))
}

fn axis_normal(axis: usize, d: &Vec3) -> Vec3 {
    let mut n = Vec3::zeros();
    n[axis] = -d[axis].signum();
    n
}

impl Primitive {
    /// Nearest intersection with `t > 0` along `o + t d`.
    pub fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3, [f64; 3])> {
        match self {
            Primitive::Sphere { center, radius, albedo } => {
                let oc = o - v(*center);
                let a = d.dot(d);
                let half_b = oc.dot(d);
                let c = oc.dot(&oc) - radius * radius;
                let disc = half_b * half_b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // stable roots
                let q = -half_b - half_b.signum() * sq;
                let (r0, r1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
                let (t0, t1) = if r0 < r1 { (r0, r1) } else { (r1, r0) };
                let t = if t0 > MIN_T {
                    t0
                } else if t1 > MIN_T {
                    t1
                } else {
                    return None;
                };
                let n = (o + d * t - v(*center)) / *radius;
                Some((t, facing(n, d), *albedo))
            }
            Primitive::Cuboid { min, max, albedo } => {
                let ((tn, an), (tf, af)) = slabs(&v(*min), &v(*max), o, d)?;
                if tn > MIN_T {
                    Some((tn, axis_normal(an, d), *albedo))
                } else if tf > MIN_T {
                    Some((tf, axis_normal(af, d), *albedo))
                } else {
                    None
                }
            }
            Primitive::Room { min, max, albedo } => {
                let (_, (tf, af)) = slabs(&v(*min), &v(*max), o, d)?;
                if tf <= MIN_T {
                    return None;
                }
                let wall = 2 * af + usize::from(d[af] > 0.0);
                Some((tf, axis_normal(af, d), albedo[wall]))
            }
            Primitive::Plane { point, normal, albedo } => {
                let n = v(*normal).normalize();
                let denom = n.dot(d);
                if denom == 0.0 {
                    return None;
                }
                let t = (v(*point) - o).dot(&n) / denom;
                (t > MIN_T).then(|| (t, facing(n, d), *albedo))
            }
        }
    }

    /// Center of the object, or `None` for enclosures and planes.
    pub fn center(&self) -> Option<Vec3> {
        match self {
            Primitive::Sphere { center, .. } => Some(v(*center)),
            Primitive::Cuboid { min, max, .. } => Some((v(*min) + v(*max)) / 2.0),
            Primitive::Room { .. } | Primitive::Plane { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub cameras: Vec<CameraPose>,
    pub height: usize,
    pub width: usize,
    /// Unit vector pointing from surfaces towards the light.
    pub light: Vec3,
}

pub fn default_light() -> Vec3 {
    Vec3::new(0.3, 1.0, 0.5).normalize()
}

impl Scene {
    /// Centroid of the object primitives; the origin if there are none.
    pub fn centroid(&self) -> Vec3 {
        object_centroid(&self.primitives)
    }

    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, normal, albedo)) = p.intersect(origin, dir) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        point: origin + dir * t,
                        normal,
                        primitive: i,
                        albedo,
                    });
                }
            }
        }
        best
    }

    pub fn shade(&self, hit: &Hit) -> [f32; 3] {
        let lambert = hit.normal.dot(&self.light).max(0.0);
        let k = AMBIENT + (1.0 - AMBIENT) * lambert;
        hit.albedo.map(|a| (a * k).clamp(0.0, 1.0) as f32)
    }

    /// Casts the ray through continuous pixel coordinates `(u, v)`.
    pub fn cast_pixel(&self, camera: &CameraPose, u: f64, v: f64) -> Option<Hit> {
        self.cast(&camera.center(), &camera.world_ray(u, v))
    }
}

fn object_centroid(primitives: &[Primitive]) -> Vec3 {
    let centers: Vec<Vec3> = primitives.iter().filter_map(Primitive::center).collect();
    if centers.is_empty() {
        Vec3::zeros()
    } else {
        centers.iter().sum::<Vec3>() / centers.len() as f64
    }
}

fn albedo(seed: u64, entity: u64, first_slot: u64) -> [f64; 3] {
    [0, 1, 2].map(|k| draw_range(seed, entity, first_slot + k, 0.25, 0.95))
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let s = spec.seed;
    let e = spec.extent;
    let mut primitives = Vec::with_capacity(spec.primitive_count + 1);
    for i in 0..spec.primitive_count as u64 {
        let c = [
            draw_range(s, i, 1, -e / 2.0, e / 2.0),
            draw_range(s, i, 2, -e / 4.0, e / 4.0),
            draw_range(s, i, 3, -e / 2.0, e / 2.0),
        ];
        let colour = albedo(s, i, 4);
        if unit_draw(s, i, 0) < 0.5 {
            primitives.push(Primitive::Sphere {
                center: c,
                radius: draw_range(s, i, 7, 0.1, 0.25) * e,
                albedo: colour,
            });
        } else {
            let half = [8, 9, 10].map(|k| draw_range(s, i, k, 0.08, 0.2) * e);
            primitives.push(Primitive::Cuboid {
                min: [c[0] - half[0], c[1] - half[1], c[2] - half[2]],
                max: [c[0] + half[0], c[1] + half[1], c[2] + half[2]],
                albedo: colour,
            });
        }
    }
    let centroid = object_centroid(&primitives);
    if spec.room {
        let h = spec.ring_radius + e;
        let walls = [0u64, 1, 2, 3, 4, 5].map(|w| albedo(s, ENT_ROOM, 3 * w));
        primitives.push(Primitive::Room {
            min: [centroid.x - h, centroid.y - h, centroid.z - h],
            max: [centroid.x + h, centroid.y + h, centroid.z + h],
            albedo: walls,
        });
    }

    let intr = Intrinsics::from_fov(spec.height, spec.width, spec.fov_degrees);
    let start = std::f64::consts::TAU * unit_draw(s, ENT_CAMERAS, 0);
    let n = spec.camera_count;
    let step = if spec.arc_degrees >= 360.0 {
        spec.arc_degrees / n as f64
    } else if n > 1 {
        spec.arc_degrees / (n - 1) as f64
    } else {
        0.0
    }
    .to_radians();
    let cameras = (0..n)
        .map(|k| {
            let a = start + step * k as f64;
            let eye = centroid + Vec3::new(spec.ring_radius * a.cos(), spec.elevation, spec.ring_radius * a.sin());
            CameraPose::look_at(eye, centroid, Vec3::y(), intr)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Scene {
        primitives,
        cameras,
        height: spec.height,
        width: spec.width,
        light: default_light(),
    })
}

/// Everything the analytic renderer knows about one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRender {
    pub image: RgbImage,
    /// World-space hit points with shaded colors.
    pub pointmap: Pointmap,
    /// Camera depth per pixel, 0 where nothing was hit.
    pub depth: Vec<f64>,
    pub normals: Vec<Vec3>,
    pub primitive_ids: Vec<Option<usize>>,
}

pub fn render_view(scene: &Scene, camera: &CameraPose, height: usize, width: usize) -> ViewRender {
    let hits: Vec<Option<Hit>> = (0..height * width)
        .into_par_iter()
        .map(|pix| scene.cast_pixel(camera, (pix % width) as f64, (pix / width) as f64))
        .collect();
    let n = height * width;
    let mut rgb = Vec::with_capacity(3 * n);
    let mut points = vec![Vec3::zeros(); n];
    let mut colors = vec![BACKGROUND; n];
    let mut valid = BinaryMask::zeros(height, width);
    let mut depth = vec![0.0; n];
    let mut normals = vec![Vec3::zeros(); n];
    let mut ids = vec![None; n];
    for (pix, hit) in hits.iter().enumerate() {
        match hit {
            Some(h) => {
                let c = scene.shade(h);
                rgb.extend_from_slice(&c);
                colors[pix] = c;
                points[pix] = h.point;
                valid.set(pix, true);
                // world ray has unit camera-z, so t is depth
                depth[pix] = h.t;
                normals[pix] = h.normal;
                ids[pix] = Some(h.primitive);
            }
            None => rgb.extend_from_slice(&BACKGROUND),
        }
    }
    ViewRender {
        image: RgbImage::new(height, width, rgb).expect("shaded colors lie in [0, 1]"),
        pointmap: Pointmap::new(height, width, points, valid, Some(colors)).expect("hits are finite"),
        depth,
        normals,
        primitive_ids: ids,
    }
}

pub fn render_groundtruth(scene: &Scene, camera: &CameraPose) -> (RgbImage, Pointmap) {
    let r = render_view(scene, camera, scene.height, scene.width);
    (r.image, r.pointmap)
}
