//! Independent reference implementations used by the integration tests.
//! Deliberately naive: plain arrays, explicit loops, no shared helpers with
//! the library.

#![allow(dead_code)]

use std::collections::BTreeSet;

pub type P3 = [f64; 3];

pub fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: P3, b: P3) -> P3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: P3) -> f64 {
    dot(a, a).sqrt()
}

/// Homogeneous `K [R | t]` multiply for every point, then a per-pixel scan
/// keeping the smallest positive depth (first index on ties).
pub fn brute_force_projection(
    points: &[P3],
    world_to_camera: &[[f64; 4]; 4],
    (fx, fy, cx, cy): (f64, f64, f64, f64),
    height: usize,
    width: usize,
) -> Vec<Option<usize>> {
    let k = [[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]];
    let mut landed = Vec::with_capacity(points.len());
    for p in points {
        let h = [p[0], p[1], p[2], 1.0];
        let mut cam = [0.0; 3];
        for r in 0..3 {
            for c in 0..4 {
                cam[r] += world_to_camera[r][c] * h[c];
            }
        }
        let mut img = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                img[r] += k[r][c] * cam[c];
            }
        }
        if cam[2] <= 0.0 {
            landed.push(None);
            continue;
        }
        let u = img[0] / img[2];
        let v = img[1] / img[2];
        let col = (u + 0.5).floor();
        let row = (v + 0.5).floor();
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= height as f64 {
            landed.push(None);
        } else {
            landed.push(Some((row as usize, col as usize, cam[2])));
        }
    }
    let mut out = vec![None; height * width];
    for row in 0..height {
        for col in 0..width {
            let mut best: Option<(usize, f64)> = None;
            for (i, l) in landed.iter().enumerate() {
                if let Some((r, c, z)) = *l {
                    if r == row && c == col && best.map_or(true, |(_, bz)| z < bz) {
                        best = Some((i, z));
                    }
                }
            }
            out[row * width + col] = best.map(|(i, _)| i);
        }
    }
    out
}

/// Phase-one simplex (Bland's rule) for `lambda >= 0, sum lambda = 1,
/// sum lambda_i p_i = target`. Returns the minimal total artificial
/// residual; zero means the target is in the convex hull.
pub fn hull_lp_residual(target: P3, refs: &[P3]) -> f64 {
    let n = refs.len();
    let m = 4;
    let rhs = n + m;
    let mut t = vec![vec![0.0; n + m + 1]; m];
    for r in 0..3 {
        for j in 0..n {
            t[r][j] = refs[j][r];
        }
        t[r][rhs] = target[r];
    }
    for j in 0..n {
        t[3][j] = 1.0;
    }
    t[3][rhs] = 1.0;
    for r in 0..m {
        if t[r][rhs] < 0.0 {
            for v in t[r].iter_mut() {
                *v = -*v;
            }
        }
        t[r][n + r] = 1.0;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let cost = |j: usize| if j >= n { 1.0 } else { 0.0 };
    for _ in 0..1000 {
        let mut entering = None;
        for j in 0..n + m {
            if basis.contains(&j) {
                continue;
            }
            let mut reduced = cost(j);
            for r in 0..m {
                reduced -= cost(basis[r]) * t[r][j];
            }
            if reduced < -1e-12 {
                entering = Some(j);
                break;
            }
        }
        let Some(j) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            if t[r][j] > 1e-12 {
                let ratio = t[r][rhs] / t[r][j];
                let better = match leave {
                    None => true,
                    Some((lr, lratio)) => ratio < lratio - 1e-15 || (ratio <= lratio + 1e-15 && basis[r] < basis[lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, _)) = leave else { break };
        let piv = t[r][j];
        for v in t[r].iter_mut() {
            *v /= piv;
        }
        for rr in 0..m {
            if rr != r {
                let f = t[rr][j];
                if f != 0.0 {
                    for c in 0..=rhs {
                        t[rr][c] -= f * t[r][c];
                    }
                }
            }
        }
        basis[r] = j;
    }
    (0..m).filter(|&r| basis[r] >= n).map(|r| t[r][rhs].max(0.0)).sum()
}

/// Every triangle that some ball of a listed radius touches at exactly its
/// three vertices with no other point strictly inside. Faces are returned
/// as sorted index triples.
pub fn empty_ball_faces(points: &[P3], radii: &[f64]) -> BTreeSet<[usize; 3]> {
    let n = points.len();
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let ab = sub(b, a);
                let ac = sub(c, a);
                let nrm = cross(ab, ac);
                let nn = dot(nrm, nrm);
                if nn < 1e-24 {
                    continue;
                }
                // circumcenter = a + ((|ac|^2 (n x ab)) + (|ab|^2 (ac x n))) / (2 |n|^2)
                let t1 = cross(nrm, ab);
                let t2 = cross(ac, nrm);
                let (lab, lac) = (dot(ab, ab), dot(ac, ac));
                let cc = [
                    a[0] + (lac * t1[0] + lab * t2[0]) / (2.0 * nn),
                    a[1] + (lac * t1[1] + lab * t2[1]) / (2.0 * nn),
                    a[2] + (lac * t1[2] + lab * t2[2]) / (2.0 * nn),
                ];
                let rc2 = dot(sub(cc, a), sub(cc, a));
                let unit = nrm.map(|v| v / nn.sqrt());
                'radius: for &r in radii {
                    if rc2 > r * r {
                        continue;
                    }
                    let h = (r * r - rc2).sqrt();
                    for s in [1.0, -1.0] {
                        let center = [0, 1, 2].map(|d| cc[d] + s * h * unit[d]);
                        let empty = (0..n).filter(|&q| q != i && q != j && q != k).all(|q| {
                            let d = sub(points[q], center);
                            dot(d, d).sqrt() >= r * (1.0 - 1e-9)
                        });
                        if empty {
                            out.insert([i, j, k]);
                            break 'radius;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Ray / supporting-plane intersection followed by a barycentric inside
/// test. Returns `t` and the smallest barycentric coordinate.
pub fn ray_plane_triangle(o: P3, d: P3, a: P3, b: P3, c: P3) -> Option<(f64, f64)> {
    let n = cross(sub(b, a), sub(c, a));
    let denom = dot(n, d);
    if denom == 0.0 {
        return None;
    }
    let t = dot(n, sub(a, o)) / denom;
    let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
    let nn = dot(n, n);
    let la = dot(cross(sub(c, b), sub(p, b)), n) / nn;
    let lb = dot(cross(sub(a, c), sub(p, c)), n) / nn;
    let lc = dot(cross(sub(b, a), sub(p, a)), n) / nn;
    Some((t, la.min(lb).min(lc)))
}

pub fn scalar_softmax(row: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in row {
        if v > m {
            m = v;
        }
    }
    let mut e = Vec::new();
    let mut s = 0.0;
    for &v in row {
        let x = (v - m).exp();
        e.push(x);
        s += x;
    }
    e.into_iter().map(|x| x / s).collect()
}

/// Row-major `softmax(Q K^T / sqrt(d)) V` with explicit loops.
pub fn loop_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = q[0].len() as f64;
    let mut out = Vec::new();
    for qi in q {
        let mut logits = Vec::new();
        for kj in k {
            let mut s = 0.0;
            for t in 0..qi.len() {
                s += qi[t] * kj[t];
            }
            logits.push(s / d.sqrt());
        }
        let w = scalar_softmax(&logits);
        let mut row = vec![0.0; v[0].len()];
        for (j, vj) in v.iter().enumerate() {
            for c in 0..row.len() {
                row[c] += w[j] * vj[c];
            }
        }
        out.push(row);
    }
    out
}

pub fn loop_psnr(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    let mse = s / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

/// Literal windowed SSIM: for each fully contained 11x11 window, weighted
/// means, variances and covariance, then the two-factor formula.
pub fn loop_ssim(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    let size = 11;
    let sigma: f64 = 1.5;
    let mut g = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for i in 0..size {
        for j in 0..size {
            let di = i as f64 - 5.0;
            let dj = j as f64 - 5.0;
            g[i][j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += g[i][j];
        }
    }
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let mut acc = 0.0;
    for ch in 0..3 {
        let mut sum = 0.0;
        let mut count = 0;
        for r0 in 0..=h - size {
            for c0 in 0..=w - size {
                let px = |img: &[f32], i: usize, j: usize| img[((r0 + i) * w + c0 + j) * 3 + ch] as f64;
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        mx += g[i][j] / total * px(a, i, j);
                        my += g[i][j] / total * px(b, i, j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        let wgt = g[i][j] / total;
                        let dx = px(a, i, j) - mx;
                        let dy = px(b, i, j) - my;
                        vx += wgt * dx * dx;
                        vy += wgt * dy * dy;
                        cxy += wgt * dx * dy;
                    }
                }
                sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc += sum / count as f64;
    }
    acc / 3.0
}

/// Masked Abs.Rel and delta with the ratio form of the threshold.
pub fn loop_depth(pred: &[f64], gt: &[f64], mask: &[bool]) -> (f64, f64) {
    let (mut rel, mut hit, mut n) = (0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        if mask[i] {
            rel += (pred[i] - gt[i]).abs() / gt[i];
            let ratio = if pred[i] / gt[i] > gt[i] / pred[i] { pred[i] / gt[i] } else { gt[i] / pred[i] };
            if ratio <= 1.25 {
                hit += 1.0;
            }
            n += 1.0;
        }
    }
    (rel / n, hit / n)
}
