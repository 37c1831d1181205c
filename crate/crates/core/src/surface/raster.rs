//! Per-pixel ray casting of a triangle mesh through a bounding volume
//! hierarchy.

use rayon::prelude::*;

use crate::geometry::{CameraPose, Pointmap, Vec3};
use crate::error::Result;
use crate::tensor::{BinaryMask, Tensor};

use super::TriMesh;

/// Mesh rendered into a target camera: world-space pointmap, camera depth,
/// face normals and coverage mask. Uncovered pixels hold zeros everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshRender {
    pub pointmap: Pointmap,
    pub depth: Vec<f64>,
    pub normals: Vec<Vec3>,
    pub mask: BinaryMask,
}

impl MeshRender {
    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    /// Keeps only pixels inside `keep`, zeroing everything else.
    pub fn restrict(&self, keep: &BinaryMask) -> Result<MeshRender> {
        let mask = self.mask.and(keep)?;
        let pointmap = self.pointmap.restrict(&mask)?;
        let depth = self
            .depth
            .iter()
            .enumerate()
            .map(|(i, &d)| if mask.get(i) { d } else { 0.0 })
            .collect();
        let normals = self
            .normals
            .iter()
            .enumerate()
            .map(|(i, &n)| if mask.get(i) { n } else { Vec3::zeros() })
            .collect();
        Ok(MeshRender {
            pointmap,
            depth,
            normals,
            mask,
        })
    }

    pub fn depth_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height(), self.width()],
            self.depth.iter().map(|&d| d as f32).collect(),
        )
        .expect("depth is finite")
    }

    pub fn normals_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height(), self.width(), 3],
            self.normals.iter().flat_map(|n| n.iter().map(|&v| v as f32)).collect(),
        )
        .expect("normals are finite")
    }
}

/// Möller–Trumbore. Returns `(t, u, v)` with barycentrics of `b` and `c`;
/// edges are inclusive and `t` must be positive.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() <= 1e-14 * e1.norm() * e2.norm() * dir.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = inv * dir.dot(&q);
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = inv * e2.dot(&q);
    (t > 0.0).then_some((t, u, v))
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    /// Entry parameter of the ray into the box, if it enters before `t_max`.
    fn hit(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let mut a = (self.lo[k] - origin[k]) * inv_dir[k];
            let mut b = (self.hi[k] - origin[k]) * inv_dir[k];
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            // NaN from 0 * inf (origin on a slab plane) must not prune.
            if a.is_nan() || b.is_nan() {
                continue;
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t0 <= t1).then_some(t0)
    }
}

enum Node {
    Leaf { bounds: Aabb, faces: Vec<usize> },
    Inner { bounds: Aabb, left: usize, right: usize },
}

struct Bvh {
    nodes: Vec<Node>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    fn build(mesh: &TriMesh) -> Self {
        let v = mesh.vertices();
        let boxes: Vec<Aabb> = mesh
            .faces()
            .iter()
            .map(|f| {
                let mut b = Aabb::empty();
                f.iter().for_each(|&i| b.grow(&v[i]));
                // Pad so axis-aligned faces still give the slab test volume.
                let pad = 1e-9 * (b.hi - b.lo).norm().max(1e-12);
                b.lo.add_scalar_mut(-pad);
                b.hi.add_scalar_mut(pad);
                b
            })
            .collect();
        let centroids: Vec<Vec3> = (0..mesh.faces().len()).map(|i| mesh.face_centroid(i)).collect();
        let mut bvh = Bvh { nodes: Vec::new() };
        if !boxes.is_empty() {
            let mut ids: Vec<usize> = (0..boxes.len()).collect();
            bvh.split(&boxes, &centroids, &mut ids);
        }
        bvh
    }

    fn split(&mut self, boxes: &[Aabb], centroids: &[Vec3], ids: &mut [usize]) -> usize {
        let mut bounds = Aabb::empty();
        ids.iter().for_each(|&i| bounds.merge(&boxes[i]));
        if ids.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                bounds,
                faces: ids.to_vec(),
            });
            return self.nodes.len() - 1;
        }
        let mut cb = Aabb::empty();
        ids.iter().for_each(|&i| cb.grow(&centroids[i]));
        let axis = (cb.hi - cb.lo).imax();
        ids.sort_by(|&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b)));
        let mid = ids.len() / 2;
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf {
            bounds,
            faces: Vec::new(),
        });
        let (l, r) = ids.split_at_mut(mid);
        let left = self.split(boxes, centroids, l);
        let right = self.split(boxes, centroids, r);
        self.nodes[slot] = Node::Inner { bounds, left, right };
        slot
    }

    /// Nearest hit as `(t, face, u, v)`; ties on `t` go to the lower face index.
    fn cast(&self, mesh: &TriMesh, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize, f64, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let vs = mesh.vertices();
        let mut best: Option<(f64, usize, f64, f64)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let t_max = best.map_or(f64::INFINITY, |b| b.0);
            match &self.nodes[n] {
                Node::Leaf { bounds, faces } => {
                    if bounds.hit(origin, &inv, t_max).is_none() {
                        continue;
                    }
                    for &f in faces {
                        let [a, b, c] = mesh.faces()[f];
                        if let Some((t, u, v)) = ray_triangle(origin, dir, &vs[a], &vs[b], &vs[c]) {
                            let better = match best {
                                None => true,
                                Some((bt, bf, _, _)) => t < bt || (t == bt && f < bf),
                            };
                            if better {
                                best = Some((t, f, u, v));
                            }
                        }
                    }
                }
                Node::Inner { bounds, left, right } => {
                    if bounds.hit(origin, &inv, t_max).is_some() {
                        stack.push(*right);
                        stack.push(*left);
                    }
                }
            }
        }
        best
    }
}

/// Casts one ray per pixel center and records the nearest face hit in front
/// of the camera.
pub fn rasterize_mesh(mesh: &TriMesh, camera: &CameraPose, height: usize, width: usize) -> MeshRender {
    let bvh = Bvh::build(mesh);
    let origin = camera.center();
    let vs = mesh.vertices();
    let hits: Vec<Option<(f64, usize, f64, f64)>> = (0..height * width)
        .into_par_iter()
        .map(|pix| {
            let (row, col) = (pix / width, pix % width);
            let dir = camera.world_ray(col as f64, row as f64);
            bvh.cast(mesh, &origin, &dir)
        })
        .collect();

    let mut mask = BinaryMask::zeros(height, width);
    let mut points = vec![Vec3::zeros(); height * width];
    let mut depth = vec![0.0; height * width];
    let mut normals = vec![Vec3::zeros(); height * width];
    let mut colors = mesh.vertex_colors().map(|_| vec![[0.0f32; 3]; height * width]);
    for (pix, hit) in hits.into_iter().enumerate() {
        let Some((t, f, u, v)) = hit else { continue };
        let [a, b, c] = mesh.faces()[f];
        let w = 1.0 - u - v;
        mask.set(pix, true);
        points[pix] = vs[a] * w + vs[b] * u + vs[c] * v;
        depth[pix] = t;
        normals[pix] = mesh.face_normals()[f];
        if let (Some(out), Some(vc)) = (colors.as_mut(), mesh.vertex_colors()) {
            let mix = |k: usize| (vc[a][k] as f64 * w + vc[b][k] as f64 * u + vc[c][k] as f64 * v) as f32;
            out[pix] = [mix(0), mix(1), mix(2)].map(|x| x.clamp(0.0, 1.0));
        }
    }
    let pointmap = Pointmap::new(height, width, points, mask.clone(), colors)
        .expect("rasterized pointmap is consistent");
    MeshRender {
        pointmap,
        depth,
        normals,
        mask,
    }
}

/// Keeps rendered pixels whose face normal points against the viewing ray;
/// grazing faces (dot exactly 0) are dropped.
pub fn normal_mask(render: &MeshRender, camera: &CameraPose) -> BinaryMask {
    let (h, w) = (render.height(), render.width());
    let mut out = BinaryMask::zeros(h, w);
    for pix in 0..h * w {
        if render.mask.get(pix) {
            let ray = camera.world_ray((pix % w) as f64, (pix / w) as f64);
            out.set(pix, render.normals[pix].dot(&ray) < 0.0);
        }
    }
    out
}
