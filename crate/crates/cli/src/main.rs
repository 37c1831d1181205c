//! `moai` command-line front end.
//!
//! Exit codes: 0 success, 2 missing or unreadable input, 64 invalid
//! configuration or usage, 70 any other failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moai_core::attention::{cross_modal_attention, matrix_from_tensor, matrix_to_tensor, AttentionBundle};
use moai_core::condition::{assemble_reference_condition, assemble_target_condition, CameraSpaceNormalizer, EmbedConfig};
use moai_core::geometry::{classify_view, ViewLabel, Vec3};
use moai_core::metrics::{depth_metrics, psnr, split_masks, ssim, DepthPair};
use moai_core::pipeline::{
    centroid_of, load_camera, load_view, mesh_stage, parse_list, read_scene_info, render_stage, run_pipeline,
    warp_stage, write_scene, ConfigOverrides, LoadedView,
};
use moai_core::scene::{generate_scene, SceneSpec};
use moai_core::surface::TriMesh;
use moai_core::tensor::{load_image, read_tensor, write_tensor, BinaryMask, Tensor};
use moai_core::Error;

const EXIT_MISSING: u8 = 2;
const EXIT_CONFIG: u8 = 64;
const EXIT_INTERNAL: u8 = 70;

#[derive(Parser)]
#[command(name = "moai", version, about = "Pointmap warping, mesh conditioning and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory.
    SceneGen(SceneGenArgs),
    /// Splat reference pointmaps into the target view.
    Warp(ViewArgs),
    /// Ball-pivot the merged reference cloud into mesh.ply.
    Mesh(MeshArgs),
    /// Render a mesh into the target and write condition tensors.
    Condition(ConditionArgs),
    /// Run (cross-modal) attention on tensors from disk.
    Attend(AttendArgs),
    /// Interpolative or extrapolative target view.
    Classify(ViewArgs),
    /// Image and depth metrics.
    Eval(EvalArgs),
    /// warp -> mesh -> condition in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SceneGenArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    views: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 5)]
    primitives: usize,
    /// Angular span of the camera arc in degrees.
    #[arg(long, default_value_t = 60.0)]
    arc: f64,
    #[arg(long, default_value = "scene")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ViewArgs {
    #[arg(long, default_value = ".")]
    scene_dir: PathBuf,
    #[arg(long)]
    target: usize,
    #[arg(long, value_parser = list::<usize>)]
    refs: List<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long, default_value = ".")]
    scene_dir: PathBuf,
    #[arg(long, value_parser = list::<usize>)]
    refs: List<usize>,
    /// Comma-separated ball radii; estimated from the cloud when absent.
    #[arg(long, value_parser = list::<f64>)]
    radii: Option<List<f64>>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ConditionArgs {
    #[command(flatten)]
    view: ViewArgs,
    /// Defaults to `<out-dir>/mesh.ply`.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    embed_l: usize,
    #[arg(long, default_value_t = 2.0)]
    embed_base: f64,
}

#[derive(Args)]
struct AttendArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    values: PathBuf,
    /// Geometry-branch values mixed with the image attention map.
    #[arg(long)]
    geometry_values: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred_image: Option<PathBuf>,
    #[arg(long)]
    gt_image: Option<PathBuf>,
    #[arg(long)]
    pred_depth: Option<PathBuf>,
    #[arg(long)]
    gt_depth: Option<PathBuf>,
    /// Evaluation mask; all pixels when absent.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Projection mask used to split into recon and inpaint regions.
    #[arg(long)]
    projection_mask: Option<PathBuf>,
    /// Write the report as a CSV header plus one row.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scene_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    target: Option<usize>,
    #[arg(long, value_parser = list::<usize>)]
    refs: Option<List<usize>>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    embed_l: Option<usize>,
    #[arg(long)]
    embed_base: Option<f64>,
    #[arg(long, value_parser = list::<f64>)]
    radii: Option<List<f64>>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Comma-separated flag value.
#[derive(Clone, Debug)]
struct List<T>(Vec<T>);

fn list<T: std::str::FromStr>(s: &str) -> std::result::Result<List<T>, String>
where
    T::Err: std::fmt::Display,
{
    parse_list(s).map(List).map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format(_) | Error::Corruption(_) => EXIT_MISSING,
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_INTERNAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    if let Ok(v) = std::env::var("MOAI_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_INTERNAL);
                }
            }
            _ => {
                eprintln!("error: MOAI_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

type Result<T> = moai_core::Result<T>;

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::SceneGen(a) => scene_gen(a),
        Command::Warp(a) => warp(a),
        Command::Mesh(a) => mesh(a),
        Command::Condition(a) => condition(a),
        Command::Attend(a) => attend(a),
        Command::Classify(a) => classify(a),
        Command::Eval(a) => eval(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn scene_gen(a: SceneGenArgs) -> Result<()> {
    if a.height < 16 || a.width < 16 {
        return Err(Error::Config(format!("image dimensions must be at least 16, got {}x{}", a.height, a.width)));
    }
    let spec = SceneSpec {
        seed: a.seed,
        camera_count: a.views,
        height: a.height,
        width: a.width,
        primitive_count: a.primitives,
        arc_degrees: a.arc,
        ..Default::default()
    };
    let scene = generate_scene(&spec)?;
    write_scene(&a.out_dir, &spec, &scene)?;
    println!("wrote {} views to {}", scene.cameras.len(), a.out_dir.display());
    Ok(())
}

fn check_views(dir: &Path, target: Option<usize>, refs: &[usize]) -> Result<()> {
    let info = read_scene_info(dir)?;
    if refs.is_empty() {
        return Err(Error::Config("at least one reference view is required".into()));
    }
    for &v in refs.iter().chain(target.as_ref()) {
        if v >= info.views {
            return Err(Error::Config(format!("view {v} does not exist; the scene has {}", info.views)));
        }
    }
    if target.is_some_and(|t| refs.contains(&t)) {
        return Err(Error::Config("target is also a reference".into()));
    }
    Ok(())
}

fn load_refs(dir: &Path, refs: &[usize]) -> Result<Vec<LoadedView>> {
    refs.iter().map(|&v| load_view(dir, v)).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn warp(a: ViewArgs) -> Result<()> {
    check_views(&a.scene_dir, Some(a.target), &a.refs.0)?;
    let info = read_scene_info(&a.scene_dir)?;
    let target = load_camera(&a.scene_dir, a.target)?;
    let refs = load_refs(&a.scene_dir, &a.refs.0)?;
    let (cloud, projected) = warp_stage(&refs, &target, info.height, info.width)?;
    create_dir(&a.out_dir)?;
    write_tensor(&projected.points_tensor(), a.out_dir.join("warp.points.moai"))?;
    write_tensor(&projected.valid().to_tensor(), a.out_dir.join("warp.mask.moai"))?;
    if let Some(c) = projected.colors_tensor() {
        write_tensor(&c, a.out_dir.join("warp.colors.moai"))?;
    }
    println!("points={} coverage={:.6}", cloud.len(), projected.valid().fraction());
    Ok(())
}

fn mesh(a: MeshArgs) -> Result<()> {
    check_views(&a.scene_dir, None, &a.refs.0)?;
    let refs = load_refs(&a.scene_dir, &a.refs.0)?;
    let pms: Vec<_> = refs.iter().map(|r| r.pointmap.clone()).collect();
    let cloud = moai_core::geometry::merge_pointmaps(&pms)?;
    let radii = a.radii.map(|r| r.0);
    if let Some(r) = &radii {
        if r.is_empty() || r.iter().any(|x| !(*x > 0.0)) || r.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!("radii must be positive and ascending, got {r:?}")));
        }
    }
    let viewpoint = centroid_of(&refs.iter().map(|r| &r.camera).collect::<Vec<_>>());
    let (mesh, radii) = mesh_stage(&cloud, radii.as_deref(), &viewpoint)?;
    create_dir(&a.out_dir)?;
    mesh.save(a.out_dir.join("mesh.ply"))?;
    println!("faces={} radii={radii:?}", mesh.faces().len());
    Ok(())
}

fn condition(a: ConditionArgs) -> Result<()> {
    let v = &a.view;
    check_views(&v.scene_dir, Some(v.target), &v.refs.0)?;
    let embed = EmbedConfig::new(a.embed_l, a.embed_base)?;
    let info = read_scene_info(&v.scene_dir)?;
    let mesh_path = a.mesh.clone().unwrap_or_else(|| v.out_dir.join("mesh.ply"));
    let mesh = TriMesh::load(&mesh_path)?;
    let target = load_camera(&v.scene_dir, v.target)?;
    let refs = load_refs(&v.scene_dir, &v.refs.0)?;
    let render = render_stage(&mesh, &target, info.height, info.width)?;
    let norm = CameraSpaceNormalizer::fit(&target, refs.iter().map(|r| &r.pointmap).chain([&render.pointmap]));
    create_dir(&v.out_dir)?;
    write_tensor(&render.pointmap.points_tensor(), v.out_dir.join("render.points.moai"))?;
    write_tensor(&render.depth_tensor(), v.out_dir.join("render.depth.moai"))?;
    write_tensor(&render.normals_tensor(), v.out_dir.join("render.normals.moai"))?;
    write_tensor(&render.mask.to_tensor(), v.out_dir.join("render.mask.moai"))?;
    assemble_target_condition(&norm.apply_render(&render), &embed)?.save(v.out_dir.join("condition.target.moai"))?;
    for (idx, r) in v.refs.0.iter().zip(&refs) {
        let rotated: Vec<f32> = r
            .normals
            .data()
            .chunks_exact(3)
            .flat_map(|n| {
                let w = norm.rotate(&Vec3::new(n[0] as f64, n[1] as f64, n[2] as f64));
                [w.x as f32, w.y as f32, w.z as f32]
            })
            .collect();
        let normals = Tensor::new(r.normals.dims().to_vec(), rotated)?;
        assemble_reference_condition(&norm.apply(&r.pointmap), &r.depth, &normals, &embed)?
            .save(v.out_dir.join(format!("condition.ref_{idx}.moai")))?;
    }
    println!("coverage={:.6} scale={}", render.mask.fraction(), norm.scale);
    Ok(())
}

fn attend(a: AttendArgs) -> Result<()> {
    let q = matrix_from_tensor(&read_tensor(&a.queries)?)?;
    let k = matrix_from_tensor(&read_tensor(&a.keys)?)?;
    let v = matrix_from_tensor(&read_tensor(&a.values)?)?;
    let geometry = a.geometry_values.as_ref().map(|p| read_tensor(p).and_then(|t| matrix_from_tensor(&t))).transpose()?;
    let bundle = AttentionBundle::new(q, k, v, vec![0])?;
    let out = cross_modal_attention(&bundle, geometry.as_ref().unwrap_or(&bundle.values))?;
    create_dir(&a.out_dir)?;
    write_tensor(&matrix_to_tensor(&out.image_output)?, a.out_dir.join("attention.out.moai"))?;
    write_tensor(&matrix_to_tensor(out.weights.matrix())?, a.out_dir.join("attention.weights.moai"))?;
    if geometry.is_some() {
        write_tensor(&matrix_to_tensor(&out.geometry_output)?, a.out_dir.join("attention.geometry.moai"))?;
    }
    println!("queries={} keys={}", out.weights.matrix().nrows(), out.weights.matrix().ncols());
    Ok(())
}

fn classify(a: ViewArgs) -> Result<()> {
    check_views(&a.scene_dir, Some(a.target), &a.refs.0)?;
    let target = load_camera(&a.scene_dir, a.target)?;
    let refs = a.refs.0.iter().map(|&v| load_camera(&a.scene_dir, v)).collect::<Result<Vec<_>>>()?;
    let c = classify_view(&target, &refs)?;
    let label = match c.label {
        ViewLabel::Interpolative => "interpolative",
        ViewLabel::Extrapolative => "extrapolative",
    };
    println!("label={label}\nhull_distance={:e}", c.hull_distance);
    Ok(())
}

fn depth_vec(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&x| x as f64).collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut report: Vec<(String, String)> = Vec::new();
    match (&a.pred_image, &a.gt_image) {
        (Some(p), Some(g)) => {
            let (p, g) = (load_image(p)?, load_image(g)?);
            let db = psnr(&p, &g)?;
            report.push(("psnr".into(), if db.is_infinite() { "inf".into() } else { format!("{db:.6}") }));
            report.push(("ssim".into(), format!("{:.6}", ssim(&p, &g)?)));
            report.push(("lpips".into(), "n/a".into()));
        }
        (None, None) => {}
        _ => return Err(Error::Config("--pred-image and --gt-image go together".into())),
    }
    match (&a.pred_depth, &a.gt_depth) {
        (Some(p), Some(g)) => {
            let (p, g) = (read_tensor(p)?, read_tensor(g)?);
            let [h, w] = *g.dims() else {
                return Err(Error::Shape(format!("depth must be 2-D, got {:?}", g.dims())));
            };
            p.expect_grid(h, w, None)?;
            let eval_mask = match &a.mask {
                Some(m) => BinaryMask::from_tensor(&read_tensor(m)?)?,
                None => BinaryMask::ones(h, w),
            };
            let (pred, gt) = (depth_vec(&p), depth_vec(&g));
            let mut regions = vec![("".to_string(), eval_mask.clone())];
            if let Some(pm) = &a.projection_mask {
                let (recon, inpaint) = split_masks(&BinaryMask::from_tensor(&read_tensor(pm)?)?, &eval_mask)?;
                regions.push(("recon_".into(), recon));
                regions.push(("inpaint_".into(), inpaint));
            }
            for (prefix, mask) in regions {
                let pixels = mask.count();
                if pixels == 0 {
                    report.push((format!("{prefix}abs_rel"), "n/a".into()));
                    report.push((format!("{prefix}delta_1_25"), "n/a".into()));
                } else {
                    let m = depth_metrics(&DepthPair::new(pred.clone(), gt.clone(), mask)?)?;
                    report.push((format!("{prefix}abs_rel"), format!("{:.8}", m.abs_rel)));
                    report.push((format!("{prefix}delta_1_25"), format!("{:.8}", m.delta_1_25)));
                }
                report.push((format!("{prefix}pixels"), pixels.to_string()));
            }
        }
        (None, None) => {}
        _ => return Err(Error::Config("--pred-depth and --gt-depth go together".into())),
    }
    if report.is_empty() {
        return Err(Error::Config("nothing to evaluate: pass an image pair and/or a depth pair".into()));
    }
    let mut text = String::new();
    for (k, v) in &report {
        writeln!(text, "{k}={v}").unwrap();
    }
    print!("{text}");
    if let Some(csv) = &a.csv {
        let header: Vec<&str> = report.iter().map(|(k, _)| k.as_str()).collect();
        let row: Vec<&str> = report.iter().map(|(_, v)| v.as_str()).collect();
        std::fs::write(csv, format!("{}\n{}\n", header.join(","), row.join(",")))
            .map_err(|e| Error::Io { path: csv.clone(), source: e })?;
    }
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let file = match &a.config {
        Some(p) => ConfigOverrides::load(p).map_err(|e| match e {
            // an unreadable config file is a usage problem, not a missing scene input
            Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                Error::Config(format!("config file {} not found", path.display()))
            }
            other => other,
        })?,
        None => ConfigOverrides::default(),
    };
    let flags = ConfigOverrides {
        scene_dir: a.scene_dir,
        out_dir: a.out_dir,
        target: a.target,
        refs: a.refs.map(|r| r.0),
        height: a.height,
        width: a.width,
        embed_l: a.embed_l,
        embed_base: a.embed_base,
        radii: a.radii.map(|r| r.0),
        seed: a.seed,
    };
    let cfg = file.overridden_by(flags).resolve()?;
    let report = run_pipeline(&cfg)?;
    println!(
        "faces={} warp_coverage={:.6} mesh_coverage={:.6} artifacts={}",
        report.faces,
        report.warp_coverage,
        report.mesh_coverage,
        report.artifacts.len()
    );
    Ok(())
}
