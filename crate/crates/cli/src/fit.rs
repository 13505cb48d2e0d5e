use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use handmesh::camera::{project, CameraIntrinsics, CameraState};
use handmesh::dataio::annotations::annotations_to_string;
use handmesh::dataio::{load_annotations, HandSide, Image, KeypointAnnotation, ParseMode};
use handmesh::fitter::{fit_many, init_from_regressor, initial_camera, mean_reprojection_error, FitProblem, FitSchedule};
use handmesh::hand_model::{pose_hand, HandState};
use handmesh::keypoints::KeypointLabel;
use handmesh::losses::GroundTruthSample;
use handmesh::regressor::{image_input, load_checkpoint, Regressor};
use serde::Serialize;
use serde_json::Value;

use crate::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Supervision {
    /// Every field the record carries: theta, beta, joints3d, keypoints.
    #[default]
    Auto,
    /// 2D keypoints only.
    Keypoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Init {
    /// Rest pose with a weak-perspective camera estimate.
    #[default]
    Rest,
    /// One forward pass of a trained regressor.
    Regressor,
}

#[derive(clap::Args)]
pub struct Args {
    /// Annotation file to fit.
    pub annotations: PathBuf,
    /// Rig asset [default: the bundled rig].
    #[arg(long)]
    pub asset: Option<PathBuf>,
    /// Fitted records in the predictions format.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Per-sample objective traces as JSON Lines.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Side of the square crop the fit runs in.
    #[arg(long, default_value_t = 256.0)]
    pub crop_size: f64,
    #[arg(long, value_enum, default_value_t)]
    pub supervision: Supervision,
    #[arg(long, value_enum, default_value_t)]
    pub init: Init,
    /// Regressor checkpoint for `--init regressor`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory holding `<image_id>.ppm` for `--init regressor`.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// TOML fit schedule.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Exit with code 3 unless every fit converged.
    #[arg(long)]
    pub require_convergence: bool,
}

#[derive(Serialize)]
struct Trace<'a> {
    image_id: &'a str,
    hand_side: HandSide,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    converged: bool,
    iterations: usize,
    stage1_iterations: usize,
    trace: Vec<f64>,
}

struct Job {
    gt: GroundTruthSample<f64>,
    state: HandState<f64>,
    camera: CameraState<f64>,
}

pub fn run(args: Args) -> Result<Status> {
    if !(args.crop_size > 0.0 && args.crop_size.is_finite()) {
        bail!("--crop-size must be positive");
    }
    let asset = crate::asset(args.asset.as_deref())?;
    let schedule: FitSchedule = crate::config(args.config.as_ref())?;
    let records = load_annotations(&args.annotations, ParseMode::Strict)
        .with_context(|| format!("cannot load annotations {}", args.annotations.display()))?
        .records;
    let regressor: Option<(Regressor<f64>, PathBuf)> = match args.init {
        Init::Rest => None,
        Init::Regressor => {
            let ck = args.checkpoint.as_ref().context("--init regressor needs --checkpoint")?;
            let dir = args.images.clone().context("--init regressor needs --images")?;
            let m = load_checkpoint(ck).with_context(|| format!("cannot load checkpoint {}", ck.display()))?;
            Some((m, dir))
        }
    };
    let k = CameraIntrinsics::default_for_crop(args.crop_size);

    let mut jobs = Vec::with_capacity(records.len());
    for r in &records {
        let crop = r
            .crop_for_size(args.crop_size)
            .with_context(|| format!("{}: no crop box and no existing keypoints", r.image_id))?;
        let mut gt: GroundTruthSample<f64> = r.to_ground_truth(Some(&crop));
        if args.supervision == Supervision::Keypoints {
            gt.theta = None;
            gt.beta = None;
            gt.joints3d = None;
        }
        let (state, camera) = match &regressor {
            None => {
                let state = HandState::rest(&asset);
                let camera = initial_camera(&asset, &state, &gt, &k).with_context(|| r.image_id.clone())?;
                (state, camera)
            }
            Some((m, dir)) => {
                let path = dir.join(format!("{}.ppm", r.image_id));
                let img = Image::load(&path).with_context(|| format!("cannot load image {}", path.display()))?;
                init_from_regressor(m, &image_input(&img), args.crop_size, &k).with_context(|| r.image_id.clone())?
            }
        };
        jobs.push(Job { gt, state, camera });
    }

    let problems: Vec<_> = jobs
        .iter()
        .map(|j| {
            let p = FitProblem {
                asset: &asset,
                observations: &j.gt,
                intrinsics: k,
                bank: None,
            };
            (p, j.state.clone(), j.camera)
        })
        .collect();
    let results = fit_many(&problems, &schedule);

    let mut out = Vec::with_capacity(records.len());
    let mut traces = String::new();
    let (mut fitted, mut converged, mut reproj_sum) = (0usize, 0usize, 0.0);
    for ((r, job), res) in records.iter().zip(&jobs).zip(results) {
        let res = match res {
            Ok(res) => res,
            Err(e) => {
                eprintln!("warning: {} ({:?}) skipped: {e}", r.image_id, r.hand_side);
                traces.push_str(&crate::to_json_line(&Trace {
                    image_id: &r.image_id,
                    hand_side: r.hand_side,
                    error: Some(e.to_string()),
                    converged: false,
                    iterations: 0,
                    stage1_iterations: 0,
                    trace: Vec::new(),
                }));
                continue;
            }
        };
        let reproj = mean_reprojection_error(&asset, &res.state, &res.camera, &job.gt).ok();
        fitted += 1;
        converged += res.converged as usize;
        reproj_sum += reproj.unwrap_or(f64::NAN);
        out.push(prediction(r, &asset, &res.state, &res.camera, args.crop_size, |m| {
            m.insert("converged".into(), res.converged.into());
            m.insert("iterations".into(), res.iterations.into());
            m.insert("objective".into(), (*res.final_objective()).into());
            if let Some(e) = reproj {
                m.insert("reprojection_px".into(), e.into());
            }
        })?);
        traces.push_str(&crate::to_json_line(&Trace {
            image_id: &r.image_id,
            hand_side: r.hand_side,
            error: None,
            converged: res.converged,
            iterations: res.iterations,
            stage1_iterations: res.stage1_iterations,
            trace: res.trace,
        }));
    }
    crate::write(&args.output, annotations_to_string(&out).as_bytes())?;
    if let Some(path) = &args.traces {
        crate::write(path, traces.as_bytes())?;
    }
    println!(
        "fitted {fitted}/{} records, {converged} converged, mean reprojection {:.4} px",
        records.len(),
        reproj_sum / fitted.max(1) as f64
    );
    if args.require_convergence && converged < records.len() {
        return Ok(Status::Violation(format!("{} of {} fits did not converge", records.len() - converged, records.len())));
    }
    Ok(Status::Ok)
}

/// A predictions record: projected keypoints in the source image frame plus
/// the fitted parameters and 3D geometry.
fn prediction(
    gt: &KeypointAnnotation,
    asset: &handmesh::hand_model::HandModelAsset<f64>,
    state: &HandState<f64>,
    camera: &CameraState<f64>,
    crop_size: f64,
    extra: impl FnOnce(&mut serde_json::Map<String, Value>),
) -> Result<KeypointAnnotation> {
    let crop = gt.crop_for_size(crop_size).expect("checked before fitting");
    let posed = pose_hand(asset, state)?;
    let joints = asset.to_annotation_order(&posed.joints);
    let px = project(&joints, camera)?;
    let keypoints = px
        .iter()
        .map(|p| KeypointLabel {
            u: crop.offset_x + crop.scale_x * p[0],
            v: crop.offset_y + crop.scale_y * p[1],
            exists: true,
            occluded: false,
        })
        .collect();
    let mut rec = KeypointAnnotation::new(gt.image_id.clone(), gt.hand_side, keypoints);
    rec.source = Some("fit".into());
    rec.crop_box = gt.crop_box;
    rec.theta = Some(state.theta.clone());
    rec.beta = Some(state.beta.clone());
    rec.joints3d = Some(joints.iter().map(|p| p.0).collect());
    rec.vertices = Some(posed.vertices.iter().map(|p| p.0).collect());
    rec.camera_translation = Some(camera.translation.0);
    extra(&mut rec.extra);
    Ok(rec)
}
