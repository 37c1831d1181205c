//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use moai_core::attention::{
    aggregate_kv, apply_attention, attention_backward, attention_weights, cross_modal_attention, AttentionBundle,
    Matrix, ViewFeatures,
};
use moai_core::geometry::{
    classify_view, merge_pointmaps, project_indices, CameraPose, Intrinsics, PointCloud, Pointmap, ViewLabel, Vec3,
};
use moai_core::metrics::{depth_metrics, psnr, split_masks, ssim, DepthPair, SSIM_C1};
use moai_core::pipeline::{manifest_without_timings, run_pipeline, write_scene, ConfigOverrides, MANIFEST_NAME};
use moai_core::scene::{generate_scene, render_view, SceneSpec};
use moai_core::surface::{ball_pivot, estimate_radii, normal_mask, rasterize_mesh, TriMesh};
use moai_core::tensor::{BinaryMask, RgbImage};
use nalgebra::{Matrix4, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    check(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn rows(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[(r, c)];
        }
    }
    out
}

fn p3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_camera(rng: &mut ChaCha8Rng, eye: Vec3, h: usize, w: usize) -> CameraPose {
    let target = eye + random_unit(rng) * 3.0;
    let mut up = random_unit(rng);
    while (target - eye).normalize().cross(&up).norm() < 0.2 {
        up = random_unit(rng);
    }
    CameraPose::look_at(eye, target, up, Intrinsics::from_fov(h, w, rng.random_range(45.0..75.0))).unwrap()
}

fn crit1_zbuffer() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (h, w) = (64, 64);
    let mut covered = 0usize;
    let mut ties = 0usize;
    for case in 0..200 {
        let eye = random_unit(&mut rng) * 5.0;
        let cam = CameraPose::look_at(
            eye,
            Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0),
            Vec3::y(),
            Intrinsics::from_fov(h, w, rng.random_range(40.0..80.0)),
        )
        .unwrap();
        let n = rng.random_range(1..=1000);
        let mut pts: Vec<Vec3> = Vec::with_capacity(n);
        for _ in 0..n {
            let p = if !pts.is_empty() && rng.random_bool(0.05) {
                ties += 1;
                pts[rng.random_range(0..pts.len())]
            } else if rng.random_bool(0.1) {
                // behind or beside the camera
                eye + random_unit(&mut rng) * rng.random_range(0.1..3.0)
            } else {
                Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
            };
            pts.push(p);
        }
        let cloud = PointCloud::new(pts.clone(), None).unwrap();
        let got = project_indices(&cloud, &cam, h, w);
        let k = cam.intrinsics();
        let raw: Vec<[f64; 3]> = pts.iter().map(p3).collect();
        let want = common::brute_force_projection(&raw, &rows(cam.world_to_camera()), (k.fx, k.fy, k.cx, k.cy), h, w);
        if let Some(pix) = (0..h * w).find(|&i| got[i] != want[i]) {
            return Err(format!("cloud {case}: pixel {pix} got {:?}, oracle {:?}", got[pix], want[pix]));
        }
        covered += got.iter().filter(|o| o.is_some()).count();
    }
    within(started, Duration::from_secs(30))?;
    Ok(format!(
        "200 clouds identical to oracle, {covered} covered pixels, {ties} duplicated points, {:.2?}",
        started.elapsed()
    ))
}

fn crit2_reprojection() -> Outcome {
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let spec = SceneSpec { seed, ..Default::default() };
        let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
        for (ci, cam) in scene.cameras.iter().enumerate() {
            let render = render_view(&scene, cam, scene.height, scene.width);
            // stored artifact precision
            let stored = Pointmap::from_tensors(
                &render.pointmap.points_tensor(),
                &render.pointmap.valid().to_tensor(),
                None,
            )
            .map_err(|e| e.to_string())?;
            for row in 0..stored.height() {
                for col in 0..stored.width() {
                    let Some(p) = stored.point(row, col) else { continue };
                    let Some((r, c, z)) = cam.pixel_of(&p, stored.height(), stored.width()) else {
                        return Err(format!("seed {seed} cam {ci} ({row},{col}) projects off-image"));
                    };
                    if (r, c) != (row, col) {
                        return Err(format!("seed {seed} cam {ci} ({row},{col}) lands on ({r},{c})"));
                    }
                    let back = cam.to_world(&(cam.camera_ray(c as f64, r as f64) * z));
                    let err = (back - p).norm();
                    worst = worst.max(err);
                    if err >= 1e-5 {
                        return Err(format!("seed {seed} cam {ci} ({row},{col}) world error {err:e}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} pixels over 20 scenes, max world error {worst:.2e}"))
}

fn planar_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    let normal = random_unit(rng);
    let u = normal.cross(&random_unit(rng)).normalize();
    let v = normal.cross(&u);
    let origin = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    (0..n)
        .map(|_| origin + u * rng.random_range(0.0..1.0) + v * rng.random_range(0.0..1.0))
        .collect()
}

fn face_set(mesh: &TriMesh) -> BTreeSet<[usize; 3]> {
    mesh.faces()
        .iter()
        .map(|f| {
            let mut s = *f;
            s.sort_unstable();
            s
        })
        .collect()
}

fn crit3_ball_pivot() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut faces = 0usize;
    let cases = 100;
    for case in 0..cases {
        let n = rng.random_range(3..=50);
        let pts = planar_cloud(&mut rng, n);
        let cloud = PointCloud::new(pts.clone(), None).unwrap();
        let radii = estimate_radii(&cloud).map_err(|e| e.to_string())?;
        let mesh = ball_pivot(&cloud, &radii).map_err(|e| e.to_string())?;
        let got = face_set(&mesh);
        let raw: Vec<[f64; 3]> = pts.iter().map(p3).collect();
        let want = common::empty_ball_faces(&raw, &radii);
        if got != want {
            let extra: Vec<_> = got.difference(&want).collect();
            let missing: Vec<_> = want.difference(&got).collect();
            return Err(format!("cloud {case} ({n} points): extra {extra:?}, missing {missing:?}"));
        }
        faces += got.len();
    }
    for n in 3..20 {
        let dir = random_unit(&mut rng);
        let pts: Vec<Vec3> = (0..n).map(|i| dir * (i as f64 * 0.1 + rng.random_range(0.0..0.05))).collect();
        let mesh = ball_pivot(&PointCloud::new(pts, None).unwrap(), &[0.05, 0.1, 0.2, 1.0]).map_err(|e| e.to_string())?;
        check(mesh.is_empty(), || format!("collinear cloud of {n} produced faces"))?;
    }
    for n in 0..3 {
        let pts: Vec<Vec3> = (0..n).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let mesh = ball_pivot(&PointCloud::new(pts, None).unwrap(), &[1.0]).map_err(|e| e.to_string())?;
        check(mesh.is_empty(), || format!("{n}-point cloud produced faces"))?;
    }
    within(started, Duration::from_secs(10))?;
    Ok(format!(
        "{cases} planar clouds match the empty-ball oracle ({faces} faces), degenerate inputs empty, {:.2?}",
        started.elapsed()
    ))
}

fn crit4_rasterization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (h, w) = (48, 48);
    let mut compared = 0usize;
    let mut edge = 0usize;
    let mut worst: f64 = 0.0;
    let mut kept_total = 0usize;
    for case in 0..100 {
        let eye = random_unit(&mut rng) * 2.0;
        let cam = random_camera(&mut rng, eye, h, w);
        let r = cam.rotation().transpose();
        let mut verts = Vec::new();
        for _ in 0..3 {
            let c = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(2.0..6.0));
            verts.push(cam.to_world(&c));
        }
        if rng.random_bool(0.5) {
            verts.swap(1, 2);
        }
        let Ok(mesh) = TriMesh::new(verts.clone(), None, vec![[0, 1, 2]]) else { continue };
        let render = rasterize_mesh(&mesh, &cam, h, w);
        let keep = normal_mask(&render, &cam);
        let (a, b, c) = (p3(&verts[0]), p3(&verts[1]), p3(&verts[2]));
        let n = common::cross(common::sub(b, a), common::sub(c, a));
        let k = cam.intrinsics();
        let origin = p3(&cam.center());
        for pix in 0..h * w {
            let (row, col) = ((pix / w) as f64, (pix % w) as f64);
            let cam_dir = Vec3::new((col - k.cx) / k.fx, (row - k.cy) / k.fy, 1.0);
            let dir = p3(&(r * cam_dir));
            let hit = common::ray_plane_triangle(origin, dir, a, b, c);
            let inside = match hit {
                Some((t, m)) if t > 0.0 && m > 1e-9 => Some(t),
                Some((t, m)) if t > 0.0 && m >= -1e-9 => {
                    edge += 1;
                    continue;
                }
                _ => None,
            };
            match inside {
                Some(t) => {
                    check(render.mask.get(pix), || format!("case {case}: pixel {pix} missed"))?;
                    let err = (render.depth[pix] - t).abs();
                    worst = worst.max(err);
                    check(err < 1e-5, || format!("case {case}: pixel {pix} depth error {err:e}"))?;
                    let front = common::dot(n, dir) < 0.0;
                    check(keep.get(pix) == front, || format!("case {case}: pixel {pix} normal mask {}", keep.get(pix)))?;
                    kept_total += usize::from(front);
                    compared += 1;
                }
                None => check(!render.mask.get(pix) && !keep.get(pix), || format!("case {case}: pixel {pix} spurious hit"))?,
            }
        }
    }
    Ok(format!(
        "{compared} covered pixels over 100 triangles, max depth error {worst:.2e}, {kept_total} front-facing kept, {edge} edge pixels skipped"
    ))
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_shape_fn((r, c), |_| rng.random_range(-scale..scale))
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Analytic gradient from the library against central differences of the
/// loop-based forward pass; loss = 0.5 * ||O - T||^2.
fn grad_rel_error(q: &Matrix, k: &Matrix, v: &Matrix, target: &Matrix, eps: f64) -> f64 {
    let loss = |q: &Matrix, k: &Matrix, v: &Matrix| -> f64 {
        let o = common::loop_attention(&to_rows(q), &to_rows(k), &to_rows(v));
        let mut s = 0.0;
        for (i, row) in o.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                s += 0.5 * (x - target[(i, j)]).powi(2);
            }
        }
        s
    };
    let out = apply_attention(&attention_weights(q, k, q.ncols()).unwrap(), v).unwrap();
    let g = attention_backward(q, k, v, &(&out - target)).unwrap();
    let mut worst: f64 = 0.0;
    for slot in 0..3 {
        let (m, grad) = match slot {
            0 => (q, &g.queries),
            1 => (k, &g.keys),
            _ => (v, &g.values),
        };
        for idx in 0..m.len() {
            let (i, j) = (idx / m.ncols(), idx % m.ncols());
            let mut plus = [q.clone(), k.clone(), v.clone()];
            let mut minus = [q.clone(), k.clone(), v.clone()];
            plus[slot][(i, j)] += eps;
            minus[slot][(i, j)] -= eps;
            let numeric = (loss(&plus[0], &plus[1], &plus[2]) - loss(&minus[0], &minus[1], &minus[2])) / (2.0 * eps);
            let a = grad[(i, j)];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(moai_core::attention::GRAD_REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn crit5_attention() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_sum: f64 = 0.0;
    for range in [1.0, 10.0, 40.0, 80.0, 120.0, 160.0] {
        for _ in 0..20 {
            let mut keys: Vec<f64> = (0..rng.random_range(2..40)).map(|_| rng.random_range(-range / 2.0..range / 2.0)).collect();
            keys[0] = -range / 2.0;
            keys[1] = range / 2.0;
            let k = Matrix::from_shape_vec((keys.len(), 1), keys).unwrap();
            let q = Matrix::from_shape_fn((3, 1), |(i, _)| [1.0, -1.0, 0.5][i]);
            let wts = attention_weights(&q, &k, 1).map_err(|e| e.to_string())?;
            for row in wts.matrix().rows() {
                check(row.iter().all(|&x| x >= 0.0 && x.is_finite()), || "negative or non-finite weight".into())?;
                worst_sum = worst_sum.max((row.sum() - 1.0).abs());
            }
        }
    }
    check(worst_sum <= 1e-6, || format!("row sum off by {worst_sum:e}"))?;

    for _ in 0..50 {
        let d = rng.random_range(1..9);
        let feats = |rng: &mut ChaCha8Rng| {
            let t = rng.random_range(1..12);
            ViewFeatures::new(random_matrix(rng, t, d, 2.0), random_matrix(rng, t, 3, 2.0)).unwrap()
        };
        let target = feats(&mut rng);
        let refs: Vec<ViewFeatures> = (0..rng.random_range(0..4)).map(|_| feats(&mut rng)).collect();
        let (k, v, offsets) = aggregate_kv(&target, &refs).map_err(|e| e.to_string())?;
        let tq = rng.random_range(1..12);
        let q = random_matrix(&mut rng, tq, d, 2.0);
        let bundle = AttentionBundle::new(q.clone(), k.clone(), v.clone(), offsets).map_err(|e| e.to_string())?;
        let inst = cross_modal_attention(&bundle, &v).map_err(|e| e.to_string())?;
        let plain_w = attention_weights(&q, &k, d).map_err(|e| e.to_string())?;
        let plain = apply_attention(&plain_w, &v).map_err(|e| e.to_string())?;
        let bits = |m: &Matrix| m.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        check(bits(&inst.geometry_output) == bits(&plain), || "instilled output differs from plain attention".into())?;
        check(bits(inst.weights.matrix()) == bits(plain_w.matrix()), || "instilled weights differ".into())?;
    }

    let mut worst_grad: f64 = 0.0;
    for _ in 0..100 {
        let q = random_matrix(&mut rng, 4, 8, 1.0);
        let k = random_matrix(&mut rng, 4, 8, 1.0);
        let v = random_matrix(&mut rng, 4, 8, 1.0);
        let t = random_matrix(&mut rng, 4, 8, 1.0);
        worst_grad = worst_grad.max(grad_rel_error(&q, &k, &v, &t, 1e-4));
    }
    check(worst_grad < 1e-4, || format!("gradient relative error {worst_grad:e}"))?;
    within(started, Duration::from_secs(60))?;
    Ok(format!(
        "row sums within {worst_sum:.1e} up to range 160, instillation bit-identical on 50 bundles, gradient max rel error {worst_grad:.2e}, {:.2?}",
        started.elapsed()
    ))
}

fn crit6_warping() -> Outcome {
    let mut summaries = Vec::new();
    let mut total = 0usize;
    for seed in 0..10u64 {
        let spec = SceneSpec { seed, ..Default::default() };
        let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
        let (h, w) = (scene.height, scene.width);
        let target = &scene.cameras[0];
        let renders: Vec<_> = scene.cameras[1..].iter().map(|c| render_view(&scene, c, h, w)).collect();
        // per merged point: source primitive and its normal
        let mut source = Vec::new();
        for r in &renders {
            for pix in 0..h * w {
                if r.pointmap.valid().get(pix) {
                    source.push((r.primitive_ids[pix].unwrap(), r.normals[pix]));
                }
            }
        }
        let pms: Vec<Pointmap> = renders.iter().map(|r| r.pointmap.clone()).collect();
        let cloud = merge_pointmaps(&pms).map_err(|e| e.to_string())?;
        let owner = project_indices(&cloud, target, h, w);
        let mut projection = BinaryMask::zeros(h, w);
        let mut eval = BinaryMask::zeros(h, w);
        let mut pred = vec![0.0; h * w];
        let mut gt = vec![0.0; h * w];
        let eye = target.center();
        for pix in 0..h * w {
            let Some(i) = owner[pix] else { continue };
            projection.set(pix, true);
            let p = cloud.positions[i];
            let (u, v, z) = target.project(&p).unwrap();
            pred[pix] = z;
            let (prim, normal) = source[i];
            let Some(hit) = scene.cast_pixel(target, u, v) else { continue };
            if hit.primitive == prim && normal.dot(&(eye - p)) > 0.0 {
                eval.set(pix, true);
                gt[pix] = hit.t;
            }
        }
        let (recon, _inpaint) = split_masks(&projection, &eval).map_err(|e| e.to_string())?;
        check(recon.fraction() > 0.2, || format!("seed {seed}: only {:.3} of pixels mutually visible", recon.fraction()))?;
        let m = depth_metrics(&DepthPair::new(pred, gt, recon).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        check(m.abs_rel < 1e-3 && m.delta_1_25 == 1.0, || format!("seed {seed}: abs_rel {:e}, delta {}", m.abs_rel, m.delta_1_25))?;
        summaries.push(m.abs_rel);
        total += m.pixels;
    }
    let worst = summaries.iter().cloned().fold(0.0, f64::max);
    Ok(format!("10 scenes, {total} mutually visible pixels, worst abs_rel {worst:.2e}, delta 1.0"))
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    RgbImage::new(h, w, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn crit7_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut dp, mut ds, mut dd): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let (h, w) = (rng.random_range(11..40), rng.random_range(11..40));
        let a = random_image(&mut rng, h, w);
        let noise = rng.random_range(0.0..0.3);
        let b = RgbImage::new(h, w, a.data().iter().map(|&x| (x + noise * (rng.random::<f32>() - 0.5)).clamp(0.0, 1.0)).collect()).unwrap();
        dp = dp.max((psnr(&a, &b).unwrap() - common::loop_psnr(a.data(), b.data())).abs());
        ds = ds.max((ssim(&a, &b).unwrap() - common::loop_ssim(a.data(), b.data(), h, w)).abs());
    }
    for _ in 0..20 {
        let n = rng.random_range(1..500);
        let gt: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g * rng.random_range(0.5..1.6)).collect();
        let mut bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        bits[0] = true;
        let (r, d) = common::loop_depth(&pred, &gt, &bits);
        let m = depth_metrics(&DepthPair::new(pred, gt, BinaryMask::new(1, n, bits).unwrap()).unwrap()).unwrap();
        dd = dd.max((m.abs_rel - r).abs()).max((m.delta_1_25 - d).abs());
    }
    check(dp < 1e-6 && ds < 1e-6 && dd < 1e-7, || format!("oracle gaps psnr {dp:e}, ssim {ds:e}, depth {dd:e}"))?;

    let zero = RgbImage::filled(16, 16, [0.0; 3]).unwrap();
    let half = RgbImage::filled(16, 16, [0.5; 3]).unwrap();
    let one = RgbImage::filled(16, 16, [1.0; 3]).unwrap();
    let p = psnr(&zero, &half).unwrap();
    check(p == 10.0 * 4f64.log10(), || format!("constant psnr {p}"))?;
    check(psnr(&zero, &zero).unwrap() == f64::INFINITY, || "identical psnr not infinite".into())?;
    let s = ssim(&zero, &one).unwrap();
    let closed = SSIM_C1 / (1.0 + SSIM_C1);
    check((s - closed).abs() <= 1e-12, || format!("constant ssim {s} vs {closed}"))?;
    let gt: Vec<f64> = (0..64).map(|i| 2f64.powi(i % 7 - 3)).collect();
    let pred: Vec<f64> = gt.iter().map(|g| 1.25 * g).collect();
    let m = depth_metrics(&DepthPair::new(pred, gt, BinaryMask::ones(8, 8)).unwrap()).unwrap();
    check(m.abs_rel == 0.25 && m.delta_1_25 == 1.0, || format!("1.25 scaling gave {m:?}"))?;
    let gt: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..10.0)).collect();
    let pred: Vec<f64> = gt.iter().map(|g| 1.25 * g).collect();
    let m = depth_metrics(&DepthPair::new(pred, gt, BinaryMask::ones(8, 8)).unwrap()).unwrap();
    check(m.delta_1_25 == 1.0, || format!("inclusive boundary lost: delta {}", m.delta_1_25))?;
    Ok(format!(
        "oracle gaps psnr {dp:.1e} dB, ssim {ds:.1e}, depth {dd:.1e}; closed forms exact (ssim gap {:.1e})",
        (s - closed).abs()
    ))
}

fn rigid(rng: &mut ChaCha8Rng) -> Matrix4<f64> {
    let rot = Rotation3::from_scaled_axis(random_unit(rng) * rng.random_range(0.0..std::f64::consts::PI));
    let mut m = rot.to_homogeneous();
    for r in 0..3 {
        m[(r, 3)] = rng.random_range(-10.0..10.0);
    }
    m
}

fn crit8_classifier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut configs = Vec::new();
    let mut counts = [0usize; 3];
    for case in 0..1000 {
        let n = case % 5 + 1;
        let refs: Vec<CameraPose> = (0..n)
            .map(|_| {
                let eye = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
                random_camera(&mut rng, eye, 32, 32)
            })
            .collect();
        let centers: Vec<Vec3> = refs.iter().map(|c| c.center()).collect();
        let kind = case % 3;
        let pos = match kind {
            0 => {
                let wts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = wts.iter().sum();
                centers.iter().zip(&wts).map(|(c, w)| c * (w / s)).sum()
            }
            1 => {
                // boundary: a vertex or a point on an edge
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                let t = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) };
                centers[i] * (1.0 - t) + centers[j] * t
            }
            _ => Vec3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)),
        };
        counts[kind] += 1;
        let target = random_camera(&mut rng, pos, 32, 32);
        let got = classify_view(&target, &refs).map_err(|e| e.to_string())?;
        let raw: Vec<[f64; 3]> = centers.iter().map(p3).collect();
        let tc = target.center();
        let scale = 1.0 + raw.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let inside = common::hull_lp_residual(p3(&tc), &raw) <= 1e-9 * scale;
        let want = if inside { ViewLabel::Interpolative } else { ViewLabel::Extrapolative };
        if got.label != want {
            return Err(format!("case {case} (n={n}, kind {kind}): {:?} vs oracle {want:?}, distance {:e}", got.label, got.hull_distance));
        }
        configs.push((target, refs, got.label));
    }
    let mut interp = 0;
    for i in 0..200 {
        let (target, refs, label) = &configs[(i * 5) % configs.len()];
        let t = rigid(&mut rng);
        let rt = t.fixed_view::<3, 3>(0, 0).transpose();
        let mut inv = Matrix4::identity();
        inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * t.fixed_view::<3, 1>(0, 3))));
        let move_cam = |c: &CameraPose| CameraPose::new(c.world_to_camera() * inv, c.intrinsics()).unwrap();
        let moved: Vec<CameraPose> = refs.iter().map(move_cam).collect();
        let got = classify_view(&move_cam(target), &moved).map_err(|e| e.to_string())?;
        check(got.label == *label, || format!("rigid copy {i} changed label to {:?}", got.label))?;
        interp += usize::from(*label == ViewLabel::Interpolative);
    }
    Ok(format!(
        "1000 configs agree with LP oracle (interior {}, boundary {}, random {}); 200 rigid copies invariant ({interp} interpolative)",
        counts[0], counts[1], counts[2]
    ))
}

fn crit9_pipeline() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = SceneSpec { seed: 7, camera_count: 3, ..Default::default() };
    let scene_dir = tmp.path().join("scene");
    write_scene(&scene_dir, &spec, &generate_scene(&spec).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let run = |out: &str| {
        let cfg = ConfigOverrides {
            scene_dir: Some(scene_dir.clone()),
            out_dir: Some(tmp.path().join(out)),
            target: Some(0),
            refs: Some(vec![1, 2]),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        run_pipeline(&cfg).map_err(|e| e.to_string())
    };
    let a = run("a")?;
    let b = run("b")?;
    check(a.artifacts.len() == b.artifacts.len(), || "artifact lists differ".into())?;
    for (pa, pb) in a.artifacts.iter().zip(&b.artifacts) {
        let (ba, bb) = (std::fs::read(pa).map_err(|e| e.to_string())?, std::fs::read(pb).map_err(|e| e.to_string())?);
        if pa.file_name().is_some_and(|n| n == MANIFEST_NAME) {
            let strip = |x: &[u8]| manifest_without_timings(std::str::from_utf8(x).unwrap()).unwrap();
            check(strip(&ba) == strip(&bb), || "manifests differ".into())?;
        } else {
            check(ba == bb, || format!("{} differs between runs", pa.display()))?;
        }
    }
    let determinism = format!("{} artifacts byte-identical", a.artifacts.len());

    let mut margins = Vec::new();
    for seed in 0..20u64 {
        let spec = SceneSpec { seed, camera_count: 3, ..Default::default() };
        let dir = tmp.path().join(format!("s{seed}"));
        write_scene(&dir, &spec, &generate_scene(&spec).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let cfg = ConfigOverrides {
            scene_dir: Some(dir.clone()),
            out_dir: Some(dir.join("out")),
            target: Some(0),
            refs: Some(vec![1, 2]),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        let r = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        check(r.mesh_coverage >= r.warp_coverage, || {
            format!("seed {seed}: mesh coverage {:.4} below point coverage {:.4}", r.mesh_coverage, r.warp_coverage)
        })?;
        margins.push(r.mesh_coverage - r.warp_coverage);
    }
    let min = margins.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "{determinism}; mesh coverage >= point coverage on 20 scenes (min margin {min:.4}), {:.2?}",
        started.elapsed()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("z-buffer projection vs brute force", crit1_zbuffer),
        ("pointmap self-reprojection", crit2_reprojection),
        ("ball pivoting vs empty-ball oracle", crit3_ball_pivot),
        ("mesh rasterization and normal mask", crit4_rasterization),
        ("attention stability, instillation, gradients", crit5_attention),
        ("cross-view warping fidelity", crit6_warping),
        ("metrics vs literal oracles", crit7_metrics),
        ("view classifier vs LP oracle", crit8_classifier),
        ("pipeline determinism and densification", crit9_pipeline),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if filter.as_ref().is_some_and(|flt| !id.contains(flt.as_str()) && !name.contains(flt.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("{id} [{name}]: PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} [{name}]: FAIL - {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
