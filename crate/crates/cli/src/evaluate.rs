use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use handmesh::dataio::{load_annotations, HandSide, KeypointAnnotation, ParseMode};
use handmesh::keypoints::Split;
use handmesh::linalg::Vec3;
use handmesh::metrics::{evaluate_sample, EvalAccumulator, EvalConfig, EvalReport, PckAveraging, SampleInput};
use rayon::prelude::*;
use serde::Deserialize;

use crate::{Format, Status};

#[derive(clap::Args)]
pub struct Args {
    /// Predictions: the annotation schema, optionally with `joints3d` and
    /// `vertices`.
    pub pred: PathBuf,
    /// Ground-truth annotations.
    pub gt: PathBuf,
    /// PCK thresholds as fractions of the hand box [default: 0.05,0.1,0.15].
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Keypoint splits [default: all,visible,occluded].
    #[arg(long, value_delimiter = ',', value_parser = parse_split)]
    pub splits: Option<Vec<Split>>,
    /// Upper end of the AUC threshold range in millimeters [default: 50].
    #[arg(long)]
    pub auc_max_mm: Option<f64>,
    /// PCK pooling [default: micro].
    #[arg(long, value_parser = parse_averaging)]
    pub averaging: Option<PckAveraging>,
    /// TOML file with any of the fields of the evaluation config; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s.trim() {
        "all" => Ok(Split::All),
        "visible" => Ok(Split::Visible),
        "occluded" => Ok(Split::Occluded),
        other => Err(format!("unknown split '{other}' (all, visible, occluded)")),
    }
}

fn parse_averaging(s: &str) -> Result<PckAveraging, String> {
    match s {
        "micro" => Ok(PckAveraging::Micro),
        "macro" => Ok(PckAveraging::Macro),
        other => Err(format!("unknown averaging '{other}' (micro, macro)")),
    }
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct EvalFile {
    pck_thresholds: Option<Vec<f64>>,
    splits: Option<Vec<Split>>,
    auc_max_mm: Option<f64>,
    auc_steps: Option<usize>,
    f_thresholds_mm: Option<[f64; 2]>,
    averaging: Option<PckAveraging>,
}

fn eval_config(args: &Args) -> Result<EvalConfig> {
    let file: EvalFile = crate::config(args.config.as_ref())?;
    let d = EvalConfig::default();
    let cfg = EvalConfig {
        pck_thresholds: args.thresholds.clone().or(file.pck_thresholds).unwrap_or(d.pck_thresholds),
        splits: args.splits.clone().or(file.splits).unwrap_or(d.splits),
        auc_max_mm: args.auc_max_mm.or(file.auc_max_mm).unwrap_or(d.auc_max_mm),
        auc_steps: file.auc_steps.unwrap_or(d.auc_steps),
        f_thresholds_mm: file.f_thresholds_mm.unwrap_or(d.f_thresholds_mm),
        averaging: args.averaging.or(file.averaging).unwrap_or(d.averaging),
    };
    if cfg.pck_thresholds.is_empty() || cfg.pck_thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        bail!("PCK thresholds must be positive and finite");
    }
    if cfg.splits.is_empty() {
        bail!("at least one split is required");
    }
    if !(cfg.auc_max_mm > 0.0 && cfg.auc_max_mm.is_finite()) || cfg.auc_steps == 0 {
        bail!("AUC range must be positive with at least one step");
    }
    Ok(cfg)
}

fn points(xs: &Option<Vec<[f64; 3]>>) -> Option<Vec<Vec3<f64>>> {
    xs.as_ref().map(|v| v.iter().map(|p| Vec3(*p)).collect())
}

/// Ground-truth records paired with their prediction, in ground-truth file
/// order.
pub fn pair<'a>(
    pred: &'a [KeypointAnnotation],
    gt: &'a [KeypointAnnotation],
) -> Result<(Vec<(&'a KeypointAnnotation, &'a KeypointAnnotation)>, usize)> {
    let mut by_key: HashMap<(&str, HandSide), &KeypointAnnotation> = HashMap::new();
    for p in pred {
        if by_key.insert(p.key(), p).is_some() {
            bail!("duplicate prediction for {} ({:?})", p.image_id, p.hand_side);
        }
    }
    let pairs: Vec<_> = gt.iter().filter_map(|g| by_key.get(&g.key()).map(|p| (*p, g))).collect();
    if pairs.is_empty() {
        bail!("no (image_id, hand_side) is present in both files");
    }
    let unmatched = pred.len() - pairs.len();
    Ok((pairs, unmatched))
}

/// The report for already-loaded records. Per-sample metrics run in
/// parallel and are accumulated in ground-truth order.
pub fn evaluate(
    pairs: &[(&KeypointAnnotation, &KeypointAnnotation)],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let per_sample: Vec<_> = pairs
        .par_iter()
        .map(|(p, g)| {
            let (pj, gj) = (points(&p.joints3d), points(&g.joints3d));
            let (pv, gv) = (points(&p.vertices), points(&g.vertices));
            let pk: Vec<[f64; 2]> = p.keypoints.iter().map(|k| [k.u, k.v]).collect();
            let input = SampleInput {
                pred_joints: pj.as_deref(),
                gt_joints: gj.as_deref(),
                pred_vertices: pv.as_deref(),
                gt_vertices: gv.as_deref(),
                pred_keypoints: Some(&pk),
                gt_keypoints: Some(&g.keypoints),
            };
            evaluate_sample(&input, cfg).with_context(|| format!("sample {} ({:?})", g.image_id, g.hand_side))
        })
        .collect();
    let mut acc = EvalAccumulator::new(cfg);
    for m in per_sample {
        acc.push(&m?, true);
    }
    Ok(acc.finish(cfg)?)
}

pub fn run(args: Args) -> Result<Status> {
    let cfg = eval_config(&args)?;
    let pred = load_annotations(&args.pred, ParseMode::Strict)
        .with_context(|| format!("cannot load predictions {}", args.pred.display()))?;
    let gt = load_annotations(&args.gt, ParseMode::Strict)
        .with_context(|| format!("cannot load ground truth {}", args.gt.display()))?;
    let (pairs, unmatched) = pair(&pred.records, &gt.records)?;
    let missing = gt.records.len() - pairs.len();
    if missing > 0 || unmatched > 0 {
        eprintln!("warning: {missing} ground-truth records without prediction, {unmatched} predictions without ground truth");
    }
    let report = evaluate(&pairs, &cfg)?;
    if let Some(path) = &args.report {
        crate::write(path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    print!("{}", render(&report, &cfg, args.format));
    Ok(Status::Ok)
}

fn opt(x: Option<f64>, digits: usize) -> String {
    x.map_or("-".into(), |v| format!("{v:.digits$}"))
}

pub fn render(r: &EvalReport, cfg: &EvalConfig, format: Format) -> String {
    let mut s = String::new();
    match format {
        Format::Json => {
            s = serde_json::to_string_pretty(r).expect("report serializes");
            s.push('\n');
        }
        Format::Table => {
            s.push_str("metric\tsplit\tthreshold\tvalue\n");
            let scalars = [
                ("pa_mpjpe_mm", r.pa_mpjpe),
                ("pa_mpvpe_mm", r.pa_mpvpe),
                ("auc_j", r.auc_j),
                ("auc_v", r.auc_v),
                ("f_at_5", r.f_at_5),
                ("f_at_15", r.f_at_15),
            ];
            writeln!(s, "samples\t-\t-\t{}", r.num_samples).unwrap();
            for (name, v) in scalars {
                writeln!(s, "{name}\t-\t-\t{}", v.map_or("nan".into(), |v| v.to_string())).unwrap();
            }
            for e in &r.pck {
                let v = e.percentage.map_or("nan".into(), |v| v.to_string());
                writeln!(s, "pck\t{}\t{}\t{v}", e.split, e.threshold).unwrap();
            }
        }
        Format::Text => {
            writeln!(s, "samples        {}", r.num_samples).unwrap();
            writeln!(s, "PA-MPJPE (mm)  {}", opt(r.pa_mpjpe, 2)).unwrap();
            writeln!(s, "PA-MPVPE (mm)  {}", opt(r.pa_mpvpe, 2)).unwrap();
            writeln!(s, "AUC joints     {}", opt(r.auc_j, 3)).unwrap();
            writeln!(s, "AUC vertices   {}", opt(r.auc_v, 3)).unwrap();
            writeln!(s, "F@5mm          {}", opt(r.f_at_5, 3)).unwrap();
            writeln!(s, "F@15mm         {}", opt(r.f_at_15, 3)).unwrap();
            if r.skipped_2d > 0 {
                writeln!(s, "2D skipped     {}", r.skipped_2d).unwrap();
            }
            let avg = match r.averaging {
                PckAveraging::Micro => "micro",
                PckAveraging::Macro => "macro",
            };
            write!(s, "\n{:<14}", format!("PCK ({avg})")).unwrap();
            for t in &cfg.pck_thresholds {
                write!(s, "  {:>7}", format!("@{t}")).unwrap();
            }
            s.push('\n');
            for split in &cfg.splits {
                write!(s, "  {:<12}", split.to_string()).unwrap();
                for t in &cfg.pck_thresholds {
                    write!(s, "  {:>7}", opt(r.pck_at(*t, *split), 1)).unwrap();
                }
                s.push('\n');
            }
        }
    }
    s
}
