//! Command implementations. Every command reads and writes files under a
//! fixed naming scheme, prints a short human summary (or a JSON object
//! with `--json`) and returns a nonzero exit through its error.

use crate::manifest::{is_manifest, DatasetManifest};
use crate::synth::{generate, SynthConfig};
use anyhow::{bail, Context, Result};
use clap::Args;
use posechain_core::camera::CameraIntrinsics;
use posechain_core::handeye::{initialize, refine, InitialEstimate, IntrinsicsMask, RefineOptions};
use posechain_core::io;
use posechain_core::kinematics::batch_fk;
use posechain_core::metrics::{absolute_pose_error, rrms, umeyama_align, Trajectory};
use posechain_core::planner::{hemisphere_poses, tool_poses, HemispherePlan};
use posechain_image::{
    aggregate, psnr, ssim, uq_report, EnsembleStack, ImageBuffer, ImageError, ImagePairQuality,
    DENSITY_EPSILON,
};
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Tool trajectory written by `fk`.
pub const ROBOT_TRAJECTORY_FILE: &str = "robot_trajectory.json";
/// Solver output written by `calibrate`.
pub const CALIBRATION_FILE: &str = "calibration.json";
/// Chain-predicted camera poses written by `calibrate`.
pub const CAMERA_TRAJECTORY_FILE: &str = "camera_trajectory.json";
/// Dataset manifest written by `export-manifest`.
pub const MANIFEST_FILE: &str = "transforms.json";
/// Planned camera stations written by `plan`.
pub const PLANNED_CAMERA_FILE: &str = "planned_camera_trajectory.json";
/// Planned tool poses written by `plan` when a calibration is given.
pub const PLANNED_TOOL_FILE: &str = "planned_tool_trajectory.json";
/// Robot-side CSV of the planned tool poses.
pub const PLANNED_TOOL_CSV_FILE: &str = "planned_tool_trajectory.csv";
/// Report written by `eval-traj`.
pub const POSE_ERROR_FILE: &str = "pose_error_report.json";
/// Per-frame error CSV written by `eval-traj`.
pub const POSE_ERROR_CSV_FILE: &str = "pose_errors.csv";
/// Report written by `eval-images`.
pub const QUALITY_REPORT_FILE: &str = "quality_report.json";
/// Per-image CSV written by `eval-images`.
pub const QUALITY_CSV_FILE: &str = "quality_report.csv";
/// Correlation summary written by `ensemble`.
pub const ENSEMBLE_SUMMARY_FILE: &str = "uncertainty_summary.json";

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn emit(json_mode: bool, machine: serde_json::Value, human: String) {
    if json_mode {
        println!("{machine}");
    } else {
        println!("{human}");
    }
}

/// Loads a trajectory from either a plain trajectory file or a dataset
/// manifest (detected by its "frames" key; manifest poses are converted
/// back to world-to-camera form).
fn load_trajectory_flexible(path: &Path) -> Result<Trajectory> {
    let value: serde_json::Value = io::read_json(path)?;
    if is_manifest(&value) {
        let manifest: DatasetManifest = serde_json::from_value(value)
            .with_context(|| format!("{} is not a valid manifest", path.display()))?;
        manifest.camera_trajectory()
    } else {
        serde_json::from_value(value)
            .with_context(|| format!("{} is not a valid trajectory", path.display()))
    }
}

/// Loads intrinsics from either a bare intrinsics file or a calibration
/// file carrying an "intrinsics" block.
fn load_intrinsics_flexible(path: &Path) -> Result<CameraIntrinsics> {
    let value: serde_json::Value = io::read_json(path)?;
    let block = value.get("intrinsics").cloned().unwrap_or(value);
    let intrinsics: CameraIntrinsics = serde_json::from_value(block)
        .with_context(|| format!("{} holds no intrinsics", path.display()))?;
    intrinsics.validate()?;
    Ok(intrinsics)
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Generate a synthetic capture dataset with exact ground truth.
#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// PRNG seed; equal seeds give byte-identical datasets.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Rig configuration JSON; defaults are built in.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the number of shots.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Override the RMS pixel observation noise, in pixels.
    #[arg(long)]
    pub pixel_sigma: Option<f64>,
    /// Override the joint repeatability noise, in radians.
    #[arg(long)]
    pub joint_sigma: Option<f64>,
    /// Override the RMS tool position repeatability, in millimeters.
    #[arg(long)]
    pub pose_sigma_t: Option<f64>,
    /// Override the tool rotation repeatability, in degrees.
    #[arg(long)]
    pub pose_sigma_r: Option<f64>,
}

pub fn cmd_synth(args: &SynthArgs, json_mode: bool) -> Result<()> {
    let start = Instant::now();
    let mut config = match &args.config {
        Some(path) => io::read_json::<SynthConfig>(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(shots) = args.shots {
        config.shots = shots;
    }
    if let Some(sigma) = args.pixel_sigma {
        config.noise.pixel_sigma_px = sigma;
    }
    if let Some(sigma) = args.joint_sigma {
        config.noise.joint_sigma_rad = sigma;
    }
    if let Some(sigma) = args.pose_sigma_t {
        config.noise.pose_sigma_t_mm = sigma;
    }
    if let Some(sigma) = args.pose_sigma_r {
        config.noise.pose_sigma_r_deg = sigma;
    }
    let dataset = generate(&config, args.seed)?;
    let files = dataset.write_all(&args.out)?;
    let elapsed = start.elapsed().as_secs_f64();
    emit(
        json_mode,
        json!({
            "command": "synth",
            "seed": dataset.seed,
            "shots": dataset.joint_log.len(),
            "observations": dataset.observations.len(),
            "attempts": dataset.attempts,
            "out": args.out,
            "files": files,
            "elapsed_s": elapsed,
        }),
        format!(
            "synth: {} shots, {} observations ({} attempts, seed {}) -> {} ({:.2} s)",
            dataset.joint_log.len(),
            dataset.observations.len(),
            dataset.attempts,
            dataset.seed,
            args.out.display(),
            elapsed
        ),
    );
    Ok(())
}

/// Apply forward kinematics to a joint log.
#[derive(Debug, Args)]
pub struct FkArgs {
    /// Joint log CSV (frame_id,q1,...,qn).
    #[arg(long)]
    pub joints: PathBuf,
    /// DH chain JSON.
    #[arg(long)]
    pub dh: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_fk(args: &FkArgs, json_mode: bool) -> Result<()> {
    let start = Instant::now();
    let states = io::read_joint_log(&args.joints)?;
    let chain = io::read_dh_chain(&args.dh)?;
    let trajectory = batch_fk(&chain, &states)?;
    ensure_out_dir(&args.out)?;
    let out_file = args.out.join(ROBOT_TRAJECTORY_FILE);
    io::write_trajectory(&out_file, &trajectory)?;
    let elapsed = start.elapsed().as_secs_f64();
    emit(
        json_mode,
        json!({
            "command": "fk",
            "poses": trajectory.len(),
            "out": out_file,
            "elapsed_s": elapsed,
        }),
        format!(
            "fk: {} poses -> {} ({:.3} s)",
            trajectory.len(),
            out_file.display(),
            elapsed
        ),
    );
    Ok(())
}

/// Solve the hand-eye calibration from observations and robot poses.
#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Observation CSV (frame_id,point_id,u,v).
    #[arg(long)]
    pub observations: PathBuf,
    /// Calibration target JSON.
    #[arg(long)]
    pub target: PathBuf,
    /// Starting intrinsics JSON.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Robot tool poses as a trajectory JSON.
    #[arg(long)]
    pub robot_poses: Option<PathBuf>,
    /// Joint log CSV; requires --dh.
    #[arg(long)]
    pub joints: Option<PathBuf>,
    /// DH chain JSON; requires --joints.
    #[arg(long)]
    pub dh: Option<PathBuf>,
    /// Keep the starting intrinsics fixed instead of refining them.
    #[arg(long)]
    pub fix_intrinsics: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_calibrate(args: &CalibrateArgs, json_mode: bool) -> Result<()> {
    let start = Instant::now();
    let robot_poses = match (&args.robot_poses, &args.joints, &args.dh) {
        (Some(path), None, None) => io::read_trajectory(path)?,
        (None, Some(joints), Some(dh)) => {
            batch_fk(&io::read_dh_chain(dh)?, &io::read_joint_log(joints)?)?
        }
        _ => bail!("provide either --robot-poses or both --joints and --dh"),
    };
    let target = io::read_target(&args.target)?;
    let nominal = io::read_intrinsics(&args.intrinsics)?;
    let records = io::read_observations(&args.observations)?;
    let shots = io::group_into_shots(&records, &robot_poses, &target)?;

    let estimate = initialize(&shots, &target, &nominal)?;
    let options = RefineOptions {
        intrinsics_mask: if args.fix_intrinsics {
            IntrinsicsMask::none()
        } else {
            IntrinsicsMask::all()
        },
        ..RefineOptions::default()
    };
    let result = refine(&shots, &target, &estimate, &options)?;

    ensure_out_dir(&args.out)?;
    let calib_file = args.out.join(CALIBRATION_FILE);
    io::write_json(&calib_file, &result)?;
    let camera_trajectory =
        robot_poses.map_poses(|pose| result.camera_pose(pose));
    let camera_file = args.out.join(CAMERA_TRAJECTORY_FILE);
    io::write_trajectory(&camera_file, &camera_trajectory)?;
    let elapsed = start.elapsed().as_secs_f64();

    emit(
        json_mode,
        json!({
            "command": "calibrate",
            "shots": shots.len(),
            "rmst_mm": result.rmst,
            "rmsr_deg": result.rmsr,
            "rrms_px": result.rrms,
            "iterations": result.iterations,
            "converged": result.converged,
            "out": [calib_file, camera_file],
            "elapsed_s": elapsed,
        }),
        format!(
            "RMST={:.2} mm, RMSR={:.3} deg, RRMS={:.2} px\n\
             calibrate: {} shots, {} iterations, converged={} -> {} ({:.2} s)",
            result.rmst,
            result.rmsr,
            result.rrms,
            shots.len(),
            result.iterations,
            result.converged,
            calib_file.display(),
            elapsed
        ),
    );
    Ok(())
}

/// Plan a hemisphere of camera stations over a target.
#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Hemisphere plan JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Calibration JSON; when given, tool poses realizing the plan are
    /// written as well.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_plan(args: &PlanArgs, json_mode: bool) -> Result<()> {
    let start = Instant::now();
    let plan: HemispherePlan = io::read_json(&args.config)?;
    let camera = hemisphere_poses(&plan)?;
    ensure_out_dir(&args.out)?;
    let camera_file = args.out.join(PLANNED_CAMERA_FILE);
    io::write_trajectory(&camera_file, &camera)?;
    let mut outputs = vec![camera_file.clone()];
    if let Some(calib_path) = &args.calibration {
        let calibration: InitialEstimate = io::read_json(calib_path)?;
        let tool = tool_poses(&camera, &calibration.hand_eye, &calibration.world_base);
        let tool_file = args.out.join(PLANNED_TOOL_FILE);
        io::write_trajectory(&tool_file, &tool)?;
        let tool_csv = args.out.join(PLANNED_TOOL_CSV_FILE);
        io::write_trajectory_csv(&tool_csv, &tool)?;
        outputs.push(tool_file);
        outputs.push(tool_csv);
    }
    let elapsed = start.elapsed().as_secs_f64();
    emit(
        json_mode,
        json!({
            "command": "plan",
            "stations": camera.len(),
            "out": outputs,
            "elapsed_s": elapsed,
        }),
        format!(
            "plan: {} stations -> {} ({:.3} s)",
            camera.len(),
            camera_file.display(),
            elapsed
        ),
    );
    Ok(())
}

/// Export a camera trajectory and calibration as a dataset manifest.
#[derive(Debug, Args)]
pub struct ExportManifestArgs {
    /// World-to-camera trajectory JSON.
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Calibration JSON supplying the intrinsics.
    #[arg(long)]
    pub calibration: PathBuf,
    /// Image directory; when given, every frame must have an image file.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Image file extension used for frame paths.
    #[arg(long, default_value = "png")]
    pub image_ext: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_export_manifest(args: &ExportManifestArgs, json_mode: bool) -> Result<()> {
    let start = Instant::now();
    let trajectory = io::read_trajectory(&args.trajectory)?;
    let calibration: InitialEstimate = io::read_json(&args.calibration)?;
    if let Some(images) = &args.images {
        for (frame_id, _) in trajectory.iter() {
            let file = images.join(format!("{frame_id}.{}", args.image_ext));
            if !file.exists() {
                bail!("missing image for frame {frame_id}: {}", file.display());
            }
        }
    }
    let manifest = DatasetManifest::from_calibration(
        &trajectory,
        &calibration.intrinsics,
        |frame_id| format!("images/{frame_id}.{}", args.image_ext),
    )?;
    ensure_out_dir(&args.out)?;
    let out_file = args.out.join(MANIFEST_FILE);
    io::write_json(&out_file, &manifest)?;
    let elapsed = start.elapsed().as_secs_f64();
    emit(
        json_mode,
        json!({
            "command": "export-manifest",
            "frames": manifest.frames.len(),
            "out": out_file,
            "elapsed_s": elapsed,
        }),
        format!(
            "export-manifest: {} frames -> {} ({:.3} s)",
            manifest.frames.len(),
            out_file.display(),
            elapsed
        ),
    );
    Ok(())
}

/// Report written by eval-traj.
#[derive(Debug, Serialize)]
struct EvalTrajReport {
    with_scale: bool,
    rrms_px: Option<f64>,
    ape: posechain_core::metrics::PoseErrorReport,
}

/// Compare a trajectory (or manifest) against a reference trajectory.
#[derive(Debug, Args)]
pub struct EvalTrajArgs {
    /// Trajectory or manifest JSON to evaluate.
    #[arg(long)]
    pub source: PathBuf,
    /// Reference trajectory or manifest JSON.
    #[arg(long)]
    pub reference: PathBuf,
    /// Estimate a scale factor during alignment.
    #[arg(long)]
    pub with_scale: bool,
    /// Observation CSV for an additional reprojection RMS of the source
    /// poses; requires --target and --intrinsics.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// Calibration target JSON.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Intrinsics (or calibration) JSON.
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_eval_traj(args: &EvalTrajArgs, json_mode: bool) -> Result<()> {
    let start = Instant::now();
    let source = load_trajectory_flexible(&args.source)?;
    let reference = load_trajectory_flexible(&args.reference)?;
    let alignment = umeyama_align(&source, &reference, args.with_scale)?;
    let ape = absolute_pose_error(&source, &reference, &alignment)?;

    let rrms_px = match (&args.observations, &args.target, &args.intrinsics) {
        (None, _, _) => None,
        (Some(obs_path), Some(target_path), Some(intr_path)) => {
            let records = io::read_observations(obs_path)?;
            let target = io::read_target(target_path)?;
            let intrinsics = load_intrinsics_flexible(intr_path)?;
            // The shots only index observations by frame here; the pose
            // slot is filled from the source so grouping can validate ids.
            let shots = io::group_into_shots(&records, &source, &target)?;
            Some(rrms(&shots, &source, &intrinsics, &target)?)
        }
        _ => bail!("--observations requires --target and --intrinsics"),
    };

    ensure_out_dir(&args.out)?;
    let out_file = args.out.join(POSE_ERROR_FILE);
    let report = EvalTrajReport {
        with_scale: args.with_scale,
        rrms_px,
        ape,
    };
    io::write_json(&out_file, &report)?;
    io::write_pose_errors(&args.out.join(POSE_ERROR_CSV_FILE), &report.ape.per_frame)?;
    let elapsed = start.elapsed().as_secs_f64();

    let rrms_cell = report
        .rrms_px
        .map(|v| format!("{v:.2}"))
        .unwrap_or_else(|| "-".to_string());
    emit(
        json_mode,
        json!({
            "command": "eval-traj",
            "frames": report.ape.per_frame.len(),
            "rrms_px": report.rrms_px,
            "mte_mm": report.ape.mte_mm,
            "mre_deg": report.ape.mre_deg,
            "with_scale": report.with_scale,
            "out": out_file,
            "elapsed_s": elapsed,
        }),
        format!(
            "RRMS [px]  MTE [mm]  MRE [deg]  Time [s]\n\
             {:<9}  {:<8.2}  {:<9.3}  {:.1}",
            rrms_cell, report.ape.mte_mm, report.ape.mre_deg, elapsed
        ),
    );
    Ok(())
}

/// Report written by eval-images.
#[derive(Debug, Serialize)]
struct EvalImagesReport {
    skipped_files: Vec<String>,
    quality: posechain_image::QualityReport,
}

/// Per-image CSV with header `name,psnr_db,ssim`; an infinite PSNR is
/// written as `inf`.
fn write_quality_csv(path: &Path, per_image: &[ImagePairQuality]) -> Result<()> {
    let mut buffer = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut buffer);
        writer.write_record(["name", "psnr_db", "ssim"])?;
        for pair in per_image {
            let psnr_cell = match pair.psnr_db {
                Some(v) => format!("{v:?}"),
                None => "inf".to_string(),
            };
            writer.write_record([pair.name.clone(), psnr_cell, format!("{:?}", pair.ssim)])?;
        }
        writer.flush()?;
    }
    io::write_atomic(path, &buffer)?;
    Ok(())
}

/// Score rendered images against references with PSNR and SSIM.
#[derive(Debug, Args)]
pub struct EvalImagesArgs {
    /// Directory of rendered PNG images.
    #[arg(long)]
    pub renders: PathBuf,
    /// Directory of reference PNG images with matching names.
    #[arg(long)]
    pub references: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_eval_images(args: &EvalImagesArgs, json_mode: bool) -> Result<()> {
    let start = Instant::now();
    let renders = list_pngs(&args.renders)?;
    if renders.is_empty() {
        bail!("no PNG files in {}", args.renders.display());
    }
    let mut per_image = Vec::new();
    let mut skipped_files = Vec::new();
    for render_path in &renders {
        let name = file_name(render_path);
        let reference_path = args.references.join(&name);
        if !reference_path.exists() {
            bail!("no reference image for {name}");
        }
        let render = ImageBuffer::from_png(render_path)?;
        let reference = ImageBuffer::from_png(&reference_path)?;
        match psnr(&render, &reference) {
            Ok(psnr_db) => {
                let ssim_value = ssim(&render, &reference)?;
                per_image.push(ImagePairQuality::new(name, psnr_db, ssim_value));
            }
            Err(ImageError::DimensionMismatch { expected, got }) => {
                eprintln!(
                    "skipping {name}: dimensions {got:?} do not match reference {expected:?}"
                );
                skipped_files.push(name);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let quality = aggregate(per_image)?;
    ensure_out_dir(&args.out)?;
    let out_file = args.out.join(QUALITY_REPORT_FILE);
    let report = EvalImagesReport {
        skipped_files,
        quality,
    };
    io::write_json(&out_file, &report)?;
    write_quality_csv(&args.out.join(QUALITY_CSV_FILE), &report.quality.per_image)?;
    let elapsed = start.elapsed().as_secs_f64();

    let psnr_mean = report
        .quality
        .psnr_mean_db
        .map(|v| format!("{v:.1}"))
        .unwrap_or_else(|| "inf".to_string());
    emit(
        json_mode,
        json!({
            "command": "eval-images",
            "pairs": report.quality.per_image.len(),
            "skipped": report.skipped_files.len(),
            "psnr_mean_db": report.quality.psnr_mean_db,
            "psnr_std_db": report.quality.psnr_std_db,
            "excluded_infinite_psnr": report.quality.excluded_infinite_psnr,
            "ssim_mean": report.quality.ssim_mean,
            "ssim_std": report.quality.ssim_std,
            "out": out_file,
            "elapsed_s": elapsed,
        }),
        format!(
            "PSNR / SSIM: {}\u{b1}{:.1} / {:.3}\u{b1}{:.3}\n\
             eval-images: {} pairs, {} skipped -> {} ({:.2} s)",
            psnr_mean,
            report.quality.psnr_std_db,
            report.quality.ssim_mean,
            report.quality.ssim_std,
            report.quality.per_image.len(),
            report.skipped_files.len(),
            out_file.display(),
            elapsed
        ),
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EnsembleImageSummary {
    name: String,
    correlation: Option<f64>,
    correlation_degenerate: bool,
    std_mean: f64,
    residual_mean: f64,
}

#[derive(Debug, Serialize)]
struct EnsembleSummary {
    members: usize,
    density_epsilon: f64,
    mean_correlation: Option<f64>,
    per_image: Vec<EnsembleImageSummary>,
}

/// Compute ensemble uncertainty maps over aligned render sets.
#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Member render directory; pass at least twice.
    #[arg(long = "member", required = true)]
    pub members: Vec<PathBuf>,
    /// Directory of reference PNG images.
    #[arg(long)]
    pub references: PathBuf,
    /// Directory of accumulated-density PFM maps named `<stem>.pfm`.
    #[arg(long)]
    pub density: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn mean_value(map: &ImageBuffer) -> f64 {
    map.data().iter().sum::<f64>() / map.data().len() as f64
}

fn preview(map: &ImageBuffer) -> ImageBuffer {
    let max = map.data().iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return map.clone();
    }
    let (w, h, c) = map.shape();
    ImageBuffer::from_raw(w, h, c, map.data().iter().map(|v| v / max).collect())
        .expect("scaled map stays finite")
}

pub fn cmd_ensemble(args: &EnsembleArgs, json_mode: bool) -> Result<()> {
    let start = Instant::now();
    let names = list_pngs(&args.members[0])?;
    if names.is_empty() {
        bail!("no PNG files in {}", args.members[0].display());
    }
    ensure_out_dir(&args.out)?;
    let mut per_image = Vec::new();
    for path in &names {
        let name = file_name(path);
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.clone());
        let mut members = Vec::with_capacity(args.members.len());
        for dir in &args.members {
            let member_path = dir.join(&name);
            if !member_path.exists() {
                bail!("member {} lacks image {name}", dir.display());
            }
            members.push(ImageBuffer::from_png(&member_path)?);
        }
        let stack = EnsembleStack::new(members)?;
        let reference_path = args.references.join(&name);
        if !reference_path.exists() {
            bail!("no reference image for {name}");
        }
        let reference = ImageBuffer::from_png(&reference_path)?;
        let density = args
            .density
            .as_ref()
            .map(|dir| posechain_image::read_pfm(&dir.join(format!("{stem}.pfm"))))
            .transpose()?;
        let maps = uq_report(&stack, &reference, density.as_ref(), DENSITY_EPSILON)?;

        maps.mean.to_png(&args.out.join(format!("{stem}_mean.png")))?;
        posechain_image::write_pfm(&args.out.join(format!("{stem}_std.pfm")), &maps.std)?;
        preview(&maps.std).to_png(&args.out.join(format!("{stem}_std.png")))?;
        posechain_image::write_pfm(
            &args.out.join(format!("{stem}_residual.pfm")),
            &maps.residual,
        )?;
        preview(&maps.residual).to_png(&args.out.join(format!("{stem}_residual.png")))?;
        if let Some(weighted) = &maps.density_weighted {
            posechain_image::write_pfm(
                &args.out.join(format!("{stem}_density_weighted.pfm")),
                weighted,
            )?;
            preview(weighted).to_png(&args.out.join(format!("{stem}_density_weighted.png")))?;
        }
        per_image.push(EnsembleImageSummary {
            name,
            correlation: maps.correlation,
            correlation_degenerate: maps.correlation_degenerate,
            std_mean: mean_value(&maps.std),
            residual_mean: mean_value(&maps.residual),
        });
    }
    let defined: Vec<f64> = per_image.iter().filter_map(|s| s.correlation).collect();
    let mean_correlation = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let summary = EnsembleSummary {
        members: args.members.len(),
        density_epsilon: DENSITY_EPSILON,
        mean_correlation,
        per_image,
    };
    let out_file = args.out.join(ENSEMBLE_SUMMARY_FILE);
    io::write_json(&out_file, &summary)?;
    let elapsed = start.elapsed().as_secs_f64();

    let corr_text = summary
        .mean_correlation
        .map(|v| format!("{v:.3}"))
        .unwrap_or_else(|| "-".to_string());
    emit(
        json_mode,
        json!({
            "command": "ensemble",
            "members": summary.members,
            "views": summary.per_image.len(),
            "mean_correlation": summary.mean_correlation,
            "out": out_file,
            "elapsed_s": elapsed,
        }),
        format!(
            "ensemble: {} members, {} views, mean std-residual correlation {} -> {} ({:.2} s)",
            summary.members,
            summary.per_image.len(),
            corr_text,
            args.out.display(),
            elapsed
        ),
    );
    Ok(())
}
