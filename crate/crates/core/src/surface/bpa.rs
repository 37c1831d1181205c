//! Ball-pivoting surface reconstruction.
//!
//! One pass per radius, smallest first. Each pass re-pivots the boundary
//! edges left by earlier passes, then grows new components from seed
//! triangles until no orphan vertex can seed one. Every emitted face has an
//! empty ball of the pass radius resting on its three vertices.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

use super::TriMesh;

/// Relative slack for "strictly inside the ball".
const EMPTY_BALL_EPS: f64 = 1e-9;

/// Pivots landing on a face more than this far from anti-parallel to the
/// face they pivot from are accepted; sharper folds close the edge.
const MIN_FOLD_COS: f64 = -0.5;

/// Radii schedule: 1x, 2x and 4x the median nearest-neighbor distance.
pub fn estimate_radii(cloud: &PointCloud) -> Result<Vec<f64>> {
    if cloud.len() < 2 {
        return Err(Error::Precondition("radius estimation needs at least 2 points".into()));
    }
    let mut nn: Vec<f64> = nearest_neighbor_distances(&cloud.positions)
        .into_iter()
        .filter(|&d| d > 0.0)
        .collect();
    if nn.is_empty() {
        return Err(Error::Precondition("all points coincide".into()));
    }
    nn.sort_by(f64::total_cmp);
    let n = nn.len();
    let median = if n % 2 == 1 {
        nn[n / 2]
    } else {
        0.5 * (nn[n / 2 - 1] + nn[n / 2])
    };
    Ok(vec![median, 2.0 * median, 4.0 * median])
}

/// Distance from each point to its nearest other point (sweep along x).
pub fn nearest_neighbor_distances(points: &[Vec3]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
    let mut best = vec![f64::INFINITY; points.len()];
    for (rank, &i) in order.iter().enumerate() {
        let p = points[i];
        let mut best_sq = f64::INFINITY;
        let mut scan = |j: usize| -> bool {
            let dx = points[j].x - p.x;
            if dx * dx > best_sq {
                return false;
            }
            best_sq = best_sq.min((points[j] - p).norm_squared());
            true
        };
        for &j in &order[rank + 1..] {
            if !scan(j) {
                break;
            }
        }
        for &j in order[..rank].iter().rev() {
            if !scan(j) {
                break;
            }
        }
        best[i] = best_sq.sqrt();
    }
    best
}

pub fn ball_pivot(cloud: &PointCloud, radii: &[f64]) -> Result<TriMesh> {
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::Precondition(format!("radii must be positive, got {radii:?}")));
    }
    if radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition(format!("radii must be ascending, got {radii:?}")));
    }
    if cloud.len() < 3 {
        return TriMesh::new(cloud.positions.clone(), cloud.colors.clone(), Vec::new());
    }
    let mut pivot = Pivoter::new(&cloud.positions);
    for &r in radii {
        pivot.run_pass(r);
    }
    TriMesh::new(cloud.positions.clone(), cloud.colors.clone(), pivot.faces)
}

/// Uniform hash grid for fixed-radius neighbor queries.
struct Grid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl Grid {
    fn new(points: &[Vec3], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Indices within `radius` of `center`, ascending.
    fn within(&self, points: &[Vec3], center: &Vec3, radius: f64) -> Vec<usize> {
        let lo = Self::key(&center.add_scalar(-radius), self.cell);
        let hi = Self::key(&center.add_scalar(radius), self.cell);
        let r2 = radius * radius;
        let mut out = Vec::new();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        out.extend(ids.iter().copied().filter(|&i| (points[i] - center).norm_squared() <= r2));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Center of the radius-`r` ball touching `a, b, c` on the side their
/// winding's normal points to.
fn ball_center(a: &Vec3, b: &Vec3, c: &Vec3, r: f64) -> Option<Vec3> {
    let u = b - a;
    let v = c - a;
    let w = u.cross(&v);
    let w2 = w.norm_squared();
    let scale = u.norm_squared().max(v.norm_squared());
    if w2 <= 1e-24 * scale * scale || w2 == 0.0 {
        return None;
    }
    let circ = a + (v.cross(&w) * u.norm_squared() + w.cross(&u) * v.norm_squared()) / (2.0 * w2);
    let h2 = r * r - (circ - a).norm_squared();
    if h2 < 0.0 {
        return None;
    }
    Some(circ + w / w2.sqrt() * h2.sqrt())
}

fn sorted(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

fn undirected(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

#[derive(Debug, Clone, Copy)]
struct FrontEdge {
    /// Directed as it appears in `face`.
    from: usize,
    to: usize,
    face: usize,
}

struct Pivoter<'a> {
    points: &'a [Vec3],
    centroid: Vec3,
    faces: Vec<[usize; 3]>,
    face_set: HashSet<[usize; 3]>,
    edge_count: HashMap<(usize, usize), u8>,
    directed: HashSet<(usize, usize)>,
    used: Vec<bool>,
    boundary: Vec<FrontEdge>,
}

impl<'a> Pivoter<'a> {
    fn new(points: &'a [Vec3]) -> Self {
        let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
        Self {
            points,
            centroid,
            faces: Vec::new(),
            face_set: HashSet::new(),
            edge_count: HashMap::new(),
            directed: HashSet::new(),
            used: vec![false; points.len()],
            boundary: Vec::new(),
        }
    }

    fn edge_faces(&self, a: usize, b: usize) -> u8 {
        self.edge_count.get(&undirected(a, b)).copied().unwrap_or(0)
    }

    fn normal(&self, f: &[usize; 3]) -> Vec3 {
        let p = self.points;
        (p[f[1]] - p[f[0]]).cross(&(p[f[2]] - p[f[0]])).normalize()
    }

    fn ball_is_empty(&self, grid: &Grid, center: &Vec3, r: f64, tri: &[usize; 3]) -> bool {
        let inner = r * (1.0 - EMPTY_BALL_EPS);
        grid.within(self.points, center, inner)
            .into_iter()
            .all(|i| tri.contains(&i) || (self.points[i] - center).norm() >= inner)
    }

    fn can_add(&self, f: &[usize; 3]) -> bool {
        if self.face_set.contains(&sorted(*f)) {
            return false;
        }
        (0..3).all(|k| {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            self.edge_faces(a, b) < 2 && !self.directed.contains(&(a, b))
        })
    }

    fn add_face(&mut self, f: [usize; 3], front: &mut VecDeque<FrontEdge>) {
        let id = self.faces.len();
        self.faces.push(f);
        self.face_set.insert(sorted(f));
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *self.edge_count.entry(undirected(a, b)).or_insert(0) += 1;
            self.directed.insert((a, b));
            self.used[a] = true;
            front.push_back(FrontEdge { from: a, to: b, face: id });
        }
    }

    fn run_pass(&mut self, r: f64) {
        let grid = Grid::new(self.points, 2.0 * r);
        let mut front: VecDeque<FrontEdge> = std::mem::take(&mut self.boundary).into();
        self.expand(&grid, r, &mut front);
        for seed in 0..self.points.len() {
            if self.used[seed] {
                continue;
            }
            if let Some(face) = self.find_seed(&grid, r, seed) {
                self.add_face(face, &mut front);
                self.expand(&grid, r, &mut front);
            }
        }
    }

    fn expand(&mut self, grid: &Grid, r: f64, front: &mut VecDeque<FrontEdge>) {
        while let Some(edge) = front.pop_front() {
            if self.edge_faces(edge.from, edge.to) >= 2 {
                continue;
            }
            match self.pivot(grid, r, &edge) {
                Some(face) => self.add_face(face, front),
                None => self.boundary.push(edge),
            }
        }
    }

    /// Rolls the ball of `edge`'s face over the edge and returns the face
    /// formed with the first point it touches, if that face is acceptable.
    fn pivot(&self, grid: &Grid, r: f64, edge: &FrontEdge) -> Option<[usize; 3]> {
        let p = self.points;
        let face = self.faces[edge.face];
        let (a, b) = (edge.from, edge.to);
        let opposite = *face.iter().find(|&&v| v != a && v != b)?;
        let start = ball_center(&p[face[0]], &p[face[1]], &p[face[2]], r)?;
        if !self.ball_is_empty(grid, &start, r, &face) {
            return None;
        }
        let mid = (p[a] + p[b]) / 2.0;
        let axis = (p[b] - p[a]).normalize();
        let u0 = start - mid;

        let mut best: Option<(f64, usize, Vec3)> = None;
        for x in grid.within(p, &mid, 2.0 * r) {
            if x == a || x == b || x == opposite {
                continue;
            }
            let Some(center) = ball_center(&p[b], &p[a], &p[x], r) else {
                continue;
            };
            let ux = center - mid;
            let mut angle = axis.dot(&u0.cross(&ux)).atan2(u0.dot(&ux));
            if angle < 0.0 {
                angle += TAU;
            }
            if best.is_none_or(|(ba, _, _)| angle < ba) {
                best = Some((angle, x, center));
            }
        }
        let (_, x, center) = best?;
        let candidate = [b, a, x];
        if !self.can_add(&candidate) {
            return None;
        }
        if self.normal(&candidate).dot(&self.normal(&face)) < MIN_FOLD_COS {
            return None;
        }
        self.ball_is_empty(grid, &center, r, &candidate).then_some(candidate)
    }

    /// First valid triangle through an orphan vertex, nearest neighbors first.
    fn find_seed(&self, grid: &Grid, r: f64, seed: usize) -> Option<[usize; 3]> {
        let p = self.points;
        let mut neighbors: Vec<usize> = grid
            .within(p, &p[seed], 2.0 * r)
            .into_iter()
            .filter(|&i| i != seed)
            .collect();
        neighbors.sort_by(|&i, &j| {
            (p[i] - p[seed])
                .norm_squared()
                .total_cmp(&(p[j] - p[seed]).norm_squared())
                .then(i.cmp(&j))
        });
        for (n, &j) in neighbors.iter().enumerate() {
            if self.edge_faces(seed, j) > 0 {
                continue;
            }
            for &k in &neighbors[n + 1..] {
                if self.edge_faces(seed, k) > 0 || self.edge_faces(j, k) > 0 {
                    continue;
                }
                let tri = [seed, j, k];
                let flipped = [seed, k, j];
                let preferred = if self.prefers_winding(&tri) { [tri, flipped] } else { [flipped, tri] };
                for f in preferred {
                    if let Some(center) = ball_center(&p[f[0]], &p[f[1]], &p[f[2]], r) {
                        if self.ball_is_empty(grid, &center, r, &f) && self.can_add(&f) {
                            return Some(f);
                        }
                    }
                }
            }
        }
        None
    }

    /// Seeds face away from the cloud centroid; when that is ambiguous (flat
    /// clouds) the normal's dominant axis is made positive so every seed
    /// on a plane agrees.
    fn prefers_winding(&self, f: &[usize; 3]) -> bool {
        let p = self.points;
        let n = self.normal(f);
        let c = (p[f[0]] + p[f[1]] + p[f[2]]) / 3.0;
        let offset = c - self.centroid;
        let s = n.dot(&offset);
        if s.abs() > 1e-6 * offset.norm().max(f64::MIN_POSITIVE) {
            return s > 0.0;
        }
        let axis = n.iamax();
        n[axis] > 0.0
    }
}
