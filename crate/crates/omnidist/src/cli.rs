//! Command-line interface binding the pipeline stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use crate::camera::{MeiIntrinsics, PixelCoord};
use crate::estimator::{estimate, EstimateConfig, SourceView};
use crate::grid::{DistanceMap, ValidityMask};
use crate::head::{self, FeatureMap, OutputScale};
use crate::io::{self, ConfigFile};
use crate::metrics::{compute_metrics, ClampRange, MetricReport, MetricsConfig};
use crate::pose::Trajectory;
use crate::raytable::{cached_table_keyed, content_key, RayTable};
use crate::synth::SceneSpec;
use crate::warp::{photometric_loss, pixel_map, warp};

#[derive(Parser)]
#[command(
    name = "omnidist",
    about = "Fisheye distance-map estimation: unified camera geometry, real-scale pose warping, photometric optimization, synthetic ground truth, and evaluation metrics",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project camera-frame 3D points to pixel coordinates.
    Project(ProjectArgs),
    /// Unproject pixels to unit ray directions.
    Unproject(UnprojectArgs),
    /// Build and persist the per-pixel ray table for a calibration.
    BuildCache(BuildCacheArgs),
    /// Render a synthetic dataset with exact ground-truth distances.
    Synth(SynthArgs),
    /// Warp a source frame into a target view through a distance map.
    Warp(WarpArgs),
    /// Estimate a distance map from posed frames.
    Estimate(EstimateArgs),
    /// Evaluate predicted distance maps against ground truth.
    Eval(EvalArgs),
    /// Run the multi-channel output head on seeded features.
    FuseHead(FuseHeadArgs),
}

#[derive(Args)]
struct ProjectArgs {
    /// Calibration file (key = value lines).
    #[arg(long)]
    calib: PathBuf,
    /// Point as `x,y,z` (repeatable).
    #[arg(long = "point", required = true)]
    points: Vec<String>,
}

#[derive(Args)]
struct UnprojectArgs {
    #[arg(long)]
    calib: PathBuf,
    /// Pixel as `u,v` (repeatable).
    #[arg(long = "pixel", required = true)]
    pixels: Vec<String>,
}

#[derive(Args)]
struct BuildCacheArgs {
    #[arg(long)]
    calib: PathBuf,
    /// Directory holding cached ray tables, keyed by calibration hash.
    #[arg(long = "ray-cache-dir")]
    ray_cache_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description (TOML).
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// World-from-camera pose per frame.
    #[arg(long)]
    poses: PathBuf,
    /// Output dataset root; frames land under `<out-dir>/<camera-id>/`.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long = "camera-id", default_value = "cam0")]
    camera_id: String,
    #[arg(long = "ray-cache-dir")]
    ray_cache_dir: Option<PathBuf>,
    /// Worker threads for frame rendering.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct WarpArgs {
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    poses: PathBuf,
    /// Target image (frame id taken from the file name).
    #[arg(long)]
    target: PathBuf,
    /// Source image to warp into the target view.
    #[arg(long)]
    source: PathBuf,
    /// Target-frame distance map (.pfm or 16-bit .png).
    #[arg(long)]
    distance: PathBuf,
    /// Warped image output (.png).
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "vehicle-mask")]
    vehicle_mask: Option<PathBuf>,
    #[arg(long = "ray-cache-dir")]
    ray_cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Target image (frame id taken from the file name).
    #[arg(long)]
    target: PathBuf,
    /// Comma-separated source images; defaults to the adjacent frames
    /// configured under `[estimate] adjacent` (t-1, t+1 by default).
    #[arg(long, value_delimiter = ',')]
    sources: Vec<PathBuf>,
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Output distance map (.pfm or 16-bit .png).
    #[arg(long)]
    out: PathBuf,
    /// Hypothesis count.
    #[arg(long)]
    hyps: Option<usize>,
    /// Distance range as `lo:hi` meters.
    #[arg(long)]
    range: Option<String>,
    /// Pyramid levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Configuration file ([estimate] section).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "vehicle-mask")]
    vehicle_mask: Option<PathBuf>,
    #[arg(long = "ray-cache-dir")]
    ray_cache_dir: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted map file, or directory of `.pfm` files.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth map file or directory.
    #[arg(long)]
    gt: PathBuf,
    /// Optional validity mask image (zero = excluded).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Evaluation clamp as `lo:hi` meters.
    #[arg(long)]
    clamp: Option<String>,
    /// Rescale predictions by the median ground-truth ratio first.
    #[arg(long = "median-scale")]
    median_scale: bool,
    /// Machine-readable report destination.
    #[arg(long, default_value = "eval_report.json")]
    report: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FuseHeadArgs {
    /// Feature channels.
    #[arg(long, default_value_t = 8)]
    channels: usize,
    /// Finest-scale feature height.
    #[arg(long, default_value_t = 32)]
    height: usize,
    /// Finest-scale feature width.
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Decoder stages (power-of-two scales).
    #[arg(long, default_value_t = 4)]
    scales: u32,
    /// Seed for the feature maps (and weights when generated).
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Load head weights from this file instead of seeding them.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Write the (seeded) weights to this file.
    #[arg(long = "write-weights")]
    write_weights: Option<PathBuf>,
    /// Fused distance-map output (.pfm).
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "d-min", default_value_t = 0.01)]
    d_min: f64,
    #[arg(long = "d-max", default_value_t = 10.0)]
    d_max: f64,
    #[arg(long = "depth-scale", default_value_t = 1.0)]
    depth_scale: f64,
}

/// Runs the CLI; errors are reported by `main` as a single line.
pub fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Project(args) => cmd_project(args),
        Command::Unproject(args) => cmd_unproject(args),
        Command::BuildCache(args) => cmd_build_cache(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Warp(args) => cmd_warp(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::FuseHead(args) => cmd_fuse_head(args),
    }
}

fn parse_triplet(text: &str) -> anyhow::Result<[f64; 3]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        bail!("expected `x,y,z`, got `{text}`");
    }
    let mut out = [0.0; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part.trim().parse().with_context(|| format!("bad number `{part}`"))?;
    }
    Ok(out)
}

fn parse_pair(text: &str) -> anyhow::Result<[f64; 2]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        bail!("expected `u,v`, got `{text}`");
    }
    Ok([
        parts[0].trim().parse().with_context(|| format!("bad number `{}`", parts[0]))?,
        parts[1].trim().parse().with_context(|| format!("bad number `{}`", parts[1]))?,
    ])
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create {}", parent.display()))?;
        }
    }
    Ok(())
}

fn frame_id_of(path: &Path) -> anyhow::Result<u64> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| anyhow!("cannot read frame id from {}", path.display()))?;
    stem.parse()
        .with_context(|| format!("file name `{stem}` is not a numeric frame id"))
}

/// Ray table for a calibration file: cached under the hash of the raw file
/// contents when a cache directory is given, rebuilt otherwise.
fn load_table(
    cache_dir: Option<&Path>,
    calib_path: &Path,
    cam: &MeiIntrinsics<f64>,
) -> anyhow::Result<RayTable> {
    match cache_dir {
        Some(dir) => {
            let key = content_key(&std::fs::read(calib_path)?);
            Ok(cached_table_keyed(dir, cam, key)?)
        }
        None => Ok(RayTable::build(cam)),
    }
}

fn load_vehicle_mask(
    path: Option<&Path>,
    width: usize,
    height: usize,
) -> anyhow::Result<ValidityMask> {
    let Some(path) = path else {
        return Ok(ValidityMask::all_valid(width, height));
    };
    let image = io::read_image(path)?;
    if image.width() != width || image.height() != height {
        bail!(
            "vehicle mask {} is {}x{}, expected {width}x{height}",
            path.display(),
            image.width(),
            image.height()
        );
    }
    let mut mask = ValidityMask::all_invalid(width, height);
    for y in 0..height {
        for x in 0..width {
            mask.set(x, y, image.luma(x, y) > 0.0);
        }
    }
    Ok(mask)
}

fn cmd_project(args: ProjectArgs) -> anyhow::Result<()> {
    let cam = MeiIntrinsics::<f64>::load(&args.calib)?;
    for text in &args.points {
        let [x, y, z] = parse_triplet(text)?;
        let px = cam.project(&Vector3::new(x, y, z))?;
        println!("{} {}", px.u, px.v);
    }
    Ok(())
}

fn cmd_unproject(args: UnprojectArgs) -> anyhow::Result<()> {
    let cam = MeiIntrinsics::<f64>::load(&args.calib)?;
    for text in &args.pixels {
        let [u, v] = parse_pair(text)?;
        let direction = cam.unproject(PixelCoord::new(u, v))?;
        println!("{} {} {}", direction.x, direction.y, direction.z);
    }
    Ok(())
}

fn cmd_build_cache(args: BuildCacheArgs) -> anyhow::Result<()> {
    let cam = MeiIntrinsics::<f64>::load(&args.calib)?;
    let key = content_key(&std::fs::read(&args.calib)?);
    let table = cached_table_keyed(&args.ray_cache_dir, &cam, key)?;
    let path = args.ray_cache_dir.join(format!("{key:016x}.raytab"));
    println!(
        "{} {}x{} valid {} of {}",
        path.display(),
        table.width(),
        table.height(),
        table.valid_count(),
        table.width() * table.height()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let scene = SceneSpec::load(&args.scene)?;
    let cam = MeiIntrinsics::<f64>::load(&args.calib)?;
    let trajectory = Trajectory::<f64>::load(&args.poses)?;
    let rays = load_table(args.ray_cache_dir.as_deref(), &args.calib, &cam)?;

    let camera_dir = args.out_dir.join(&args.camera_id);
    let images_dir = camera_dir.join("images");
    let gt_dir = camera_dir.join("gt");
    std::fs::create_dir_all(&images_dir)?;
    std::fs::create_dir_all(&gt_dir)?;
    // Mirror the ingestion layout so the output doubles as a dataset.
    io::atomic_write(&camera_dir.join("calib.txt"), cam.to_file_string().as_bytes())?;
    io::atomic_write(&camera_dir.join("poses.txt"), &std::fs::read(&args.poses)?)?;

    let frame_ids: Vec<u64> = trajectory.frames().collect();
    let render_frame = |frame_id: &u64| {
        let pose = trajectory.world_from_camera(*frame_id).expect("indexed frame");
        (*frame_id, crate::synth::render(&scene, &cam, pose, &rays))
    };
    let frames: Vec<(u64, crate::synth::RenderedFrame)> = if args.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()?;
        pool.install(|| {
            use rayon::prelude::*;
            frame_ids.par_iter().map(render_frame).collect()
        })
    } else {
        frame_ids.iter().map(render_frame).collect()
    };
    for (frame_id, frame) in &frames {
        io::write_image(&images_dir.join(format!("{frame_id:06}.png")), &frame.image)?;
        io::write_distance_map(&gt_dir.join(format!("{frame_id:06}.pfm")), &frame.distance)?;
        println!(
            "frame {frame_id:06}: {} valid ground-truth pixels",
            frame.valid.count_valid()
        );
    }
    Ok(())
}

fn cmd_warp(args: WarpArgs) -> anyhow::Result<()> {
    let cam = MeiIntrinsics::<f64>::load(&args.calib)?;
    let trajectory = Trajectory::<f64>::load(&args.poses)?;
    let target = io::read_image(&args.target)?;
    let source = io::read_image(&args.source)?;
    let distance = io::read_distance_map(&args.distance)?;
    let rays = load_table(args.ray_cache_dir.as_deref(), &args.calib, &cam)?;

    let target_frame = frame_id_of(&args.target)?;
    let source_frame = frame_id_of(&args.source)?;
    let source_from_target = trajectory.relative(target_frame, source_frame)?;

    let mapping = pixel_map(&distance, &source_from_target, &cam, &cam, &rays)?;
    let (warped, warp_mask) = warp(&source, &mapping)?;
    let vehicle = load_vehicle_mask(
        args.vehicle_mask.as_deref(),
        target.width(),
        target.height(),
    )?;
    let mask = warp_mask.intersect(&vehicle)?;
    let loss = photometric_loss(&target, &warped, &mask)?;
    ensure_parent(&args.out)?;
    io::write_image(&args.out, &warped)?;
    println!("loss {}", loss.mean);
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let cam = MeiIntrinsics::<f64>::load(&args.calib)?;
    let trajectory = Trajectory::<f64>::load(&args.poses)?;
    let target = io::read_image(&args.target)?;
    let target_frame = frame_id_of(&args.target)?;

    let config_file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut config = config_file.estimate_config(&EstimateConfig::default())?;
    if let Some(hyps) = args.hyps {
        config.hypothesis_count = hyps;
    }
    if let Some(range) = &args.range {
        let (lo, hi) = io::parse_range(range)
            .ok_or_else(|| anyhow!("--range expects `lo:hi` with lo < hi, got `{range}`"))?;
        config.l_min = lo;
        config.l_max = hi;
    }
    if let Some(levels) = args.levels {
        config.pyramid_levels = levels;
    }
    if let Some(jobs) = args.jobs {
        config.jobs = jobs;
    }

    // Explicit sources, or the configured adjacent frames next to the target.
    let source_paths: Vec<PathBuf> = if args.sources.is_empty() {
        let dir = args
            .target
            .parent()
            .ok_or_else(|| anyhow!("target has no parent directory"))?;
        let mut found = Vec::new();
        for offset in config_file.adjacent_offsets()? {
            let Some(id) = target_frame.checked_add_signed(offset) else {
                continue;
            };
            let candidate = dir.join(format!("{id:06}.png"));
            if candidate.is_file() {
                found.push(candidate);
            }
        }
        if found.is_empty() {
            bail!("no adjacent source frames found next to {}", args.target.display());
        }
        found
    } else {
        args.sources.clone()
    };

    let mut sources = Vec::new();
    for path in &source_paths {
        let image = io::read_image(path)?;
        let frame_id = frame_id_of(path)?;
        sources.push(SourceView {
            image,
            source_from_target: trajectory.relative(target_frame, frame_id)?,
            cam: cam.clone(),
        });
    }

    let vehicle = load_vehicle_mask(
        args.vehicle_mask.as_deref(),
        target.width(),
        target.height(),
    )?;
    let output = estimate(&target, &cam, &sources, Some(&vehicle), &config)?;
    ensure_parent(&args.out)?;
    io::write_distance_map(&args.out, &output.distance)?;
    println!(
        "estimated {} valid pixels ({} low-confidence, {} filled, {} outliers), mean cost {:.6}",
        output.diagnostics.valid.count_valid(),
        output.diagnostics.low_confidence.count_valid(),
        output.diagnostics.filled_pixels,
        output.diagnostics.outlier_pixels,
        output.diagnostics.mean_cost,
    );
    Ok(())
}

fn pfm_files(path: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if path.is_file() {
        out.insert(
            path.file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("map")
                .to_string(),
            path.to_path_buf(),
        );
        return Ok(out);
    }
    for entry in std::fs::read_dir(path)? {
        let entry_path = entry?.path();
        if entry_path.extension().and_then(|e| e.to_str()) == Some("pfm") {
            if let Some(stem) = entry_path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), entry_path);
            }
        }
    }
    if out.is_empty() {
        bail!("no .pfm files under {}", path.display());
    }
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let config_file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut config = config_file.metrics_config(&MetricsConfig::default())?;
    if let Some(clamp) = &args.clamp {
        let (lo, hi) = io::parse_range(clamp)
            .ok_or_else(|| anyhow!("--clamp expects `lo:hi` with lo < hi, got `{clamp}`"))?;
        config.clamp = ClampRange { lo, hi };
    }
    if args.median_scale {
        config.median_scale = true;
    }

    let preds = pfm_files(&args.pred)?;
    let gts = pfm_files(&args.gt)?;
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    let mut all_pred: Vec<f32> = Vec::new();
    let mut all_gt: Vec<f32> = Vec::new();
    for (name, pred_path) in &preds {
        let gt_path = gts
            .get(name)
            .ok_or_else(|| anyhow!("no ground-truth map named {name}"))?;
        let pred = io::read_distance_map(pred_path)?;
        let gt = io::read_distance_map(gt_path)?;
        let mask = eval_mask(&pred, &gt, args.mask.as_deref())?;
        let report = compute_metrics(&pred, &gt, &mask, &config)?;
        // Pool pixels for the aggregate row.
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if mask.get(x, y) {
                    all_pred.push(pred.get(x, y));
                    all_gt.push(gt.get(x, y));
                }
            }
        }
        rows.push((name.clone(), report));
    }
    let aggregate = if rows.len() > 1 {
        let n = all_pred.len();
        let pred = DistanceMap::from_vec(n, 1, all_pred)?;
        let gt = DistanceMap::from_vec(n, 1, all_gt)?;
        let mask = ValidityMask::all_valid(n, 1);
        Some(compute_metrics(&pred, &gt, &mask, &config)?)
    } else {
        None
    };

    println!("{:>12} {}", "frame", MetricReport::header());
    for (name, report) in &rows {
        println!("{name:>12} {}", report.row());
    }
    if let Some(aggregate) = &aggregate {
        println!("{:>12} {}", "all", aggregate.row());
    }

    #[derive(serde::Serialize)]
    struct JsonReport<'a> {
        clamp: ClampRange,
        median_scale: bool,
        frames: BTreeMap<&'a str, &'a MetricReport>,
        aggregate: &'a MetricReport,
    }
    let frames: BTreeMap<&str, &MetricReport> =
        rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let aggregate_ref = aggregate.as_ref().unwrap_or(&rows[0].1);
    let json = serde_json::to_vec_pretty(&JsonReport {
        clamp: config.clamp,
        median_scale: config.median_scale,
        frames,
        aggregate: aggregate_ref,
    })?;
    ensure_parent(&args.report)?;
    io::atomic_write(&args.report, &json)?;
    Ok(())
}

/// Mask for evaluation: optional mask image, intersected with ground-truth
/// validity (finite positive) and prediction validity.
fn eval_mask(
    pred: &DistanceMap<f32>,
    gt: &DistanceMap<f32>,
    mask_path: Option<&Path>,
) -> anyhow::Result<ValidityMask> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        bail!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        );
    }
    let mut mask = gt.validity().intersect(&pred.validity())?;
    if let Some(path) = mask_path {
        let vehicle = load_vehicle_mask(Some(path), gt.width(), gt.height())?;
        mask = mask.intersect(&vehicle)?;
    }
    Ok(mask)
}

fn cmd_fuse_head(args: FuseHeadArgs) -> anyhow::Result<()> {
    use rand::{Rng, SeedableRng};
    if args.scales == 0 {
        bail!("--scales must be at least 1");
    }
    let tensors = match (&args.weights, &args.write_weights) {
        (Some(path), _) => head::load_weights(path)?,
        (None, write_path) => {
            let mut tensors = head::TensorMap::new();
            for stage in 0..args.scales {
                tensors.extend(head::seeded_stage_weights(args.channels, 3, args.seed, stage));
            }
            if let Some(path) = write_path {
                head::save_weights(path, &tensors)?;
                println!("weights {}", path.display());
            }
            tensors
        }
    };
    let scale = OutputScale::new(args.depth_scale, args.d_min, args.d_max)
        .map_err(|e| anyhow!("{e}"))?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let mut outputs = Vec::new();
    for stage in 0..args.scales {
        let h = (args.height >> stage).max(1);
        let w = (args.width >> stage).max(1);
        let data: Vec<f64> = (0..args.channels * h * w)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let features = FeatureMap::from_vec(args.channels, h, w, data)
            .map_err(|e| anyhow!("{e}"))?;
        let (attn_w, disp_w) = head::stage_weights(&tensors, stage)?;
        let attention = head::channel_attention(&features, &attn_w)?;
        let weighted = head::apply_attention(&features, &attention)?;
        let logits = head::disp_logits(&weighted, &disp_w)?;
        let (distance, disparity) = head::gather_output(&logits, &scale)?;
        let mean: f64 = distance.data().iter().sum::<f64>() / distance.data().len() as f64;
        println!(
            "scale {stage}: {}x{} distance mean {:.6}, disparity [{:.6}, {:.6}]",
            w,
            h,
            mean,
            disparity.data().iter().cloned().fold(f64::INFINITY, f64::min),
            disparity.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        outputs.push((stage, distance));
    }
    let fused = head::fuse_multi_scale(&outputs)?;
    let mut as_f32 = DistanceMap::invalid(fused.width(), fused.height());
    for y in 0..fused.height() {
        for x in 0..fused.width() {
            as_f32.set(x, y, fused.get(x, y) as f32);
        }
    }
    ensure_parent(&args.out)?;
    io::write_distance_map(&args.out, &as_f32)?;
    println!("fused {}x{} -> {}", fused.width(), fused.height(), args.out.display());
    Ok(())
}
