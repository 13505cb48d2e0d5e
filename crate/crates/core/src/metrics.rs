//! Evaluation: Procrustes alignment, PA-MPJPE / PA-MPVPE, AUC, F-scores and
//! occlusion-aware PCK, plus aggregation into an [`EvalReport`].
//!
//! 3D inputs are in meters; every reported distance is in millimeters.
//! F-scores are computed after Procrustes alignment of the prediction onto
//! the ground truth, the same convention as the PA metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keypoints::{KeypointLabel, Split};
use crate::linalg::{svd3, Mat3, Vec3};
use crate::scalar::Real;

pub const DEFAULT_AUC_MAX_MM: f64 = 50.0;
pub const DEFAULT_AUC_STEPS: usize = 100;
pub const DEFAULT_PCK_THRESHOLDS: [f64; 3] = [0.05, 0.1, 0.15];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// `x -> s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform<T> {
    pub scale: T,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> SimilarityTransform<T> {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: T::one(),
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn apply(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p).scale(self.scale) + self.translation
    }

    pub fn apply_all(&self, pts: &[Vec3<T>]) -> Vec<Vec3<T>> {
        pts.iter().map(|p| self.apply(p)).collect()
    }
}

fn centroid<T: Real>(pts: &[Vec3<T>]) -> Vec3<T> {
    let mut c = Vec3::zero();
    for p in pts {
        c += *p;
    }
    c.scale(T::one() / T::from_usize_lossy(pts.len()))
}

/// Least-squares similarity transform mapping `source` onto `target`.
///
/// Rotations are kept proper: when the optimal orthogonal factor would be a
/// reflection, the direction of the smallest singular value is flipped.
pub fn procrustes_align<T: Real>(
    source: &[Vec3<T>],
    target: &[Vec3<T>],
) -> Result<SimilarityTransform<T>, MetricsError> {
    if source.len() != target.len() {
        return Err(MetricsError::SizeMismatch(source.len(), target.len()));
    }
    if source.len() < 3 {
        return Err(MetricsError::DegenerateAlignment(format!(
            "need at least 3 points, got {}",
            source.len()
        )));
    }
    let mu_x = centroid(source);
    let mu_y = centroid(target);
    let mut cov = Mat3::zero();
    let mut var_x = T::zero();
    for (x, y) in source.iter().zip(target) {
        let xc = *x - mu_x;
        let yc = *y - mu_y;
        cov += yc.outer(&xc);
        var_x += xc.norm_squared();
    }
    if !cov.is_finite() || !var_x.is_finite() {
        return Err(MetricsError::DegenerateAlignment("non-finite coordinates".into()));
    }
    if var_x <= T::zero() {
        return Err(MetricsError::DegenerateAlignment("source points coincide".into()));
    }
    let svd = svd3(&cov);
    let tol = T::epsilon() * T::lit(1e3);
    if !(svd.sigma[1] > tol * svd.sigma[0]) {
        return Err(MetricsError::DegenerateAlignment(
            "cross-covariance has rank below 2 (collinear or coincident points)".into(),
        ));
    }
    let mut d = [T::one(), T::one(), T::one()];
    if svd.u.mul_mat(&svd.v.transpose()).det() < T::zero() {
        d[2] = -T::one();
    }
    let rotation = svd.u.mul_mat(&Mat3::diag(d)).mul_mat(&svd.v.transpose());
    let scale = (svd.sigma[0] * d[0] + svd.sigma[1] * d[1] + svd.sigma[2] * d[2]) / var_x;
    let translation = mu_y - rotation.mul_vec(&mu_x).scale(scale);
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

fn to_mm<T: Real>(x: T) -> f64 {
    x.to_f64_lossy() * 1000.0
}

/// Per-point Euclidean distances in millimeters, no alignment.
pub fn point_errors_mm<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>]) -> Result<Vec<f64>, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::SizeMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty("point set"));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| to_mm((*p - *g).norm())).collect())
}

/// Per-point distances in millimeters after aligning `pred` onto `gt`.
pub fn pa_point_errors_mm<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>]) -> Result<Vec<f64>, MetricsError> {
    let tf = procrustes_align(pred, gt)?;
    point_errors_mm(&tf.apply_all(pred), gt)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean joint error without alignment, in millimeters.
pub fn mpjpe<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>]) -> Result<f64, MetricsError> {
    Ok(mean(&point_errors_mm(pred, gt)?))
}

pub fn pa_mpjpe<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>]) -> Result<f64, MetricsError> {
    Ok(mean(&pa_point_errors_mm(pred, gt)?))
}

pub fn pa_mpvpe<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>]) -> Result<f64, MetricsError> {
    pa_mpjpe(pred, gt)
}

/// Normalized area under the fraction-correct curve on `steps` uniformly
/// spaced thresholds in `[0, max_threshold]`, trapezoidal rule. An error
/// counts as correct at threshold `tau` when it is `<= tau`.
pub fn auc(errors: &[f64], max_threshold: f64, steps: usize) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Empty("error list"));
    }
    if steps < 2 || !(max_threshold > 0.0) {
        return Err(MetricsError::InvalidArgument(format!(
            "auc needs steps >= 2 and a positive range, got steps={steps}, max={max_threshold}"
        )));
    }
    if errors.iter().any(|e| !(*e >= 0.0)) {
        return Err(MetricsError::InvalidArgument("errors must be non-negative".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let fractions: Vec<f64> = (0..steps)
        .map(|i| {
            let tau = max_threshold * i as f64 / (steps - 1) as f64;
            sorted.partition_point(|e| *e <= tau) as f64 / n
        })
        .collect();
    let area: f64 = fractions.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum();
    Ok(area / (steps - 1) as f64)
}

fn nearest_within<T: Real>(from: &[Vec3<T>], to: &[Vec3<T>], threshold: T) -> usize {
    let t2 = threshold * threshold;
    from.iter()
        .filter(|p| to.iter().any(|q| (**p - *q).norm_squared() <= t2))
        .count()
}

/// F-score of two clouds in their given frames; `threshold_mm` in mm.
pub fn f_score_unaligned<T: Real>(
    pred: &[Vec3<T>],
    gt: &[Vec3<T>],
    threshold_mm: f64,
) -> Result<f64, MetricsError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricsError::Empty("point cloud"));
    }
    let thr = T::lit(threshold_mm / 1000.0);
    let precision = nearest_within(pred, gt, thr) as f64 / pred.len() as f64;
    let recall = nearest_within(gt, pred, thr) as f64 / gt.len() as f64;
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// F-score after aligning `pred` onto `gt` (requires correspondences).
pub fn f_score<T: Real>(pred: &[Vec3<T>], gt: &[Vec3<T>], threshold_mm: f64) -> Result<f64, MetricsError> {
    let tf = procrustes_align(pred, gt)?;
    f_score_unaligned(&tf.apply_all(pred), gt, threshold_mm)
}

/// Per-sample PCK tally at one threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PckCount {
    pub correct: usize,
    pub evaluated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PckSkip {
    /// No keypoint has its existence flag set.
    NoKeypoints,
    /// The bounding box of existing ground-truth keypoints has zero area.
    ZeroAreaBox,
}

/// Max side of the tight bounding box of existing keypoints, or a skip
/// signal.
pub fn pck_normalizer<T: Real>(gt: &[KeypointLabel<T>]) -> Result<T, PckSkip> {
    let mut it = gt.iter().filter(|k| k.exists);
    let first = it.next().ok_or(PckSkip::NoKeypoints)?;
    let (mut x0, mut x1, mut y0, mut y1) = (first.u, first.u, first.v, first.v);
    for k in it {
        x0 = x0.min(k.u);
        x1 = x1.max(k.u);
        y0 = y0.min(k.v);
        y1 = y1.max(k.v);
    }
    let (w, h) = (x1 - x0, y1 - y0);
    if !(w * h > T::zero()) {
        return Err(PckSkip::ZeroAreaBox);
    }
    Ok(w.max(h))
}

/// PCK tally for one sample, split and threshold fraction.
pub fn pck<T: Real>(
    pred: &[[T; 2]],
    gt: &[KeypointLabel<T>],
    threshold_fraction: T,
    split: Split,
) -> Result<Result<PckCount, PckSkip>, MetricsError> {
    Ok(pck_multi(pred, gt, &[threshold_fraction], split)?.map(|v| v[0]))
}

/// PCK tallies for several thresholds at once.
pub fn pck_multi<T: Real>(
    pred: &[[T; 2]],
    gt: &[KeypointLabel<T>],
    thresholds: &[T],
    split: Split,
) -> Result<Result<Vec<PckCount>, PckSkip>, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::SizeMismatch(pred.len(), gt.len()));
    }
    let norm = match pck_normalizer(gt) {
        Ok(n) => n,
        Err(skip) => return Ok(Err(skip)),
    };
    let mut counts = vec![PckCount::default(); thresholds.len()];
    for (p, g) in pred.iter().zip(gt) {
        if !g.exists || !split.admits(g.occluded) {
            continue;
        }
        let d = ((p[0] - g.u).powi(2) + (p[1] - g.v).powi(2)).sqrt();
        for (c, thr) in counts.iter_mut().zip(thresholds) {
            c.evaluated += 1;
            if d <= *thr * norm {
                c.correct += 1;
            }
        }
    }
    Ok(Ok(counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PckAveraging {
    /// Pool every evaluated keypoint.
    #[default]
    Micro,
    /// Average per-sample percentages over samples with evaluated keypoints.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pck_thresholds: Vec<f64>,
    pub splits: Vec<Split>,
    pub auc_max_mm: f64,
    pub auc_steps: usize,
    pub f_thresholds_mm: [f64; 2],
    pub averaging: PckAveraging,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pck_thresholds: DEFAULT_PCK_THRESHOLDS.to_vec(),
            splits: Split::ALL.to_vec(),
            auc_max_mm: DEFAULT_AUC_MAX_MM,
            auc_steps: DEFAULT_AUC_STEPS,
            f_thresholds_mm: [5.0, 15.0],
            averaging: PckAveraging::Micro,
        }
    }
}

/// Everything computed for one sample; produced by [`evaluate_sample`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleMetrics {
    pub pa_joint_errors_mm: Option<Vec<f64>>,
    pub pa_vertex_errors_mm: Option<Vec<f64>>,
    /// F-scores at the configured two thresholds.
    pub f_scores: Option<[f64; 2]>,
    /// `pck[split_index][threshold_index]`, `None` for skipped samples.
    pub pck: Option<Vec<Vec<PckCount>>>,
}

/// Inputs for one sample. Any of the three groups may be absent.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleInput<'a, T> {
    pub pred_joints: Option<&'a [Vec3<T>]>,
    pub gt_joints: Option<&'a [Vec3<T>]>,
    pub pred_vertices: Option<&'a [Vec3<T>]>,
    pub gt_vertices: Option<&'a [Vec3<T>]>,
    pub pred_keypoints: Option<&'a [[T; 2]]>,
    pub gt_keypoints: Option<&'a [KeypointLabel<T>]>,
}

pub fn evaluate_sample<T: Real>(input: &SampleInput<'_, T>, config: &EvalConfig) -> Result<SampleMetrics, MetricsError> {
    let mut out = SampleMetrics::default();
    if let (Some(p), Some(g)) = (input.pred_joints, input.gt_joints) {
        out.pa_joint_errors_mm = Some(pa_point_errors_mm(p, g)?);
    }
    if let (Some(p), Some(g)) = (input.pred_vertices, input.gt_vertices) {
        out.pa_vertex_errors_mm = Some(pa_point_errors_mm(p, g)?);
        let tf = procrustes_align(p, g)?;
        let aligned = tf.apply_all(p);
        out.f_scores = Some([
            f_score_unaligned(&aligned, g, config.f_thresholds_mm[0])?,
            f_score_unaligned(&aligned, g, config.f_thresholds_mm[1])?,
        ]);
    }
    if let (Some(p), Some(g)) = (input.pred_keypoints, input.gt_keypoints) {
        let thresholds: Vec<T> = config.pck_thresholds.iter().map(|t| T::lit(*t)).collect();
        let mut per_split = Vec::with_capacity(config.splits.len());
        let mut skipped = false;
        for split in &config.splits {
            match pck_multi(p, g, &thresholds, *split)? {
                Ok(c) => per_split.push(c),
                Err(_) => {
                    skipped = true;
                    break;
                }
            }
        }
        if !skipped {
            out.pck = Some(per_split);
        }
    }
    Ok(out)
}

/// Associative accumulator over [`SampleMetrics`]; merge partials from
/// parallel workers with [`EvalAccumulator::merge`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalAccumulator {
    num_thresholds: usize,
    num_splits: usize,
    joint_errors: Vec<f64>,
    vertex_errors: Vec<f64>,
    pa_mpjpe_sum: f64,
    pa_mpjpe_n: usize,
    pa_mpvpe_sum: f64,
    pa_mpvpe_n: usize,
    f_sum: [f64; 2],
    f_n: usize,
    pck_micro: Vec<Vec<PckCount>>,
    pck_macro_sum: Vec<Vec<f64>>,
    samples_with_split: Vec<usize>,
    skipped_2d: usize,
    samples: usize,
}

impl EvalAccumulator {
    pub fn new(config: &EvalConfig) -> Self {
        let (t, s) = (config.pck_thresholds.len(), config.splits.len());
        EvalAccumulator {
            num_thresholds: t,
            num_splits: s,
            joint_errors: Vec::new(),
            vertex_errors: Vec::new(),
            pa_mpjpe_sum: 0.0,
            pa_mpjpe_n: 0,
            pa_mpvpe_sum: 0.0,
            pa_mpvpe_n: 0,
            f_sum: [0.0; 2],
            f_n: 0,
            pck_micro: vec![vec![PckCount::default(); t]; s],
            pck_macro_sum: vec![vec![0.0; t]; s],
            samples_with_split: vec![0; s],
            skipped_2d: 0,
            samples: 0,
        }
    }

    pub fn push(&mut self, m: &SampleMetrics, had_keypoints: bool) {
        self.samples += 1;
        if let Some(e) = &m.pa_joint_errors_mm {
            self.pa_mpjpe_sum += mean(e);
            self.pa_mpjpe_n += 1;
            self.joint_errors.extend_from_slice(e);
        }
        if let Some(e) = &m.pa_vertex_errors_mm {
            self.pa_mpvpe_sum += mean(e);
            self.pa_mpvpe_n += 1;
            self.vertex_errors.extend_from_slice(e);
        }
        if let Some(f) = m.f_scores {
            self.f_sum[0] += f[0];
            self.f_sum[1] += f[1];
            self.f_n += 1;
        }
        match &m.pck {
            Some(per_split) => {
                for (s, counts) in per_split.iter().enumerate() {
                    if counts.first().is_some_and(|c| c.evaluated > 0) {
                        self.samples_with_split[s] += 1;
                    }
                    for (t, c) in counts.iter().enumerate() {
                        self.pck_micro[s][t].correct += c.correct;
                        self.pck_micro[s][t].evaluated += c.evaluated;
                        if c.evaluated > 0 {
                            self.pck_macro_sum[s][t] += c.correct as f64 / c.evaluated as f64;
                        }
                    }
                }
            }
            None if had_keypoints => self.skipped_2d += 1,
            None => {}
        }
    }

    pub fn merge(mut self, other: EvalAccumulator) -> Self {
        assert_eq!(
            (self.num_splits, self.num_thresholds),
            (other.num_splits, other.num_thresholds)
        );
        self.samples += other.samples;
        self.joint_errors.extend(other.joint_errors);
        self.vertex_errors.extend(other.vertex_errors);
        self.pa_mpjpe_sum += other.pa_mpjpe_sum;
        self.pa_mpjpe_n += other.pa_mpjpe_n;
        self.pa_mpvpe_sum += other.pa_mpvpe_sum;
        self.pa_mpvpe_n += other.pa_mpvpe_n;
        self.f_sum[0] += other.f_sum[0];
        self.f_sum[1] += other.f_sum[1];
        self.f_n += other.f_n;
        for s in 0..self.num_splits {
            self.samples_with_split[s] += other.samples_with_split[s];
            for t in 0..self.num_thresholds {
                self.pck_micro[s][t].correct += other.pck_micro[s][t].correct;
                self.pck_micro[s][t].evaluated += other.pck_micro[s][t].evaluated;
                self.pck_macro_sum[s][t] += other.pck_macro_sum[s][t];
            }
        }
        self.skipped_2d += other.skipped_2d;
        self
    }

    pub fn finish(&self, config: &EvalConfig) -> Result<EvalReport, MetricsError> {
        let auc_of = |e: &[f64]| -> Result<Option<f64>, MetricsError> {
            if e.is_empty() {
                Ok(None)
            } else {
                auc(e, config.auc_max_mm, config.auc_steps).map(Some)
            }
        };
        let ratio = |sum: f64, n: usize| if n == 0 { None } else { Some(sum / n as f64) };
        let mut pck = Vec::new();
        for (s, split) in config.splits.iter().enumerate() {
            for (t, thr) in config.pck_thresholds.iter().enumerate() {
                let c = self.pck_micro[s][t];
                let percentage = match config.averaging {
                    PckAveraging::Micro => ratio(100.0 * c.correct as f64, c.evaluated),
                    PckAveraging::Macro => ratio(100.0 * self.pck_macro_sum[s][t], self.samples_with_split[s]),
                };
                pck.push(PckEntry {
                    threshold: *thr,
                    split: *split,
                    percentage,
                    correct: c.correct,
                    evaluated: c.evaluated,
                });
            }
        }
        let sample_counts = config
            .splits
            .iter()
            .enumerate()
            .map(|(s, split)| SplitCount {
                split: *split,
                samples: self.samples_with_split[s],
                keypoints: self.pck_micro[s].first().map_or(0, |c| c.evaluated),
            })
            .collect();
        Ok(EvalReport {
            num_samples: self.samples,
            pa_mpjpe: ratio(self.pa_mpjpe_sum, self.pa_mpjpe_n),
            pa_mpvpe: ratio(self.pa_mpvpe_sum, self.pa_mpvpe_n),
            auc_j: auc_of(&self.joint_errors)?,
            auc_v: auc_of(&self.vertex_errors)?,
            f_at_5: ratio(self.f_sum[0], self.f_n),
            f_at_15: ratio(self.f_sum[1], self.f_n),
            pck,
            sample_counts,
            skipped_2d: self.skipped_2d,
            averaging: config.averaging,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckEntry {
    pub threshold: f64,
    pub split: Split,
    /// Percentage in `[0, 100]`; `None` when nothing was evaluated.
    pub percentage: Option<f64>,
    pub correct: usize,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCount {
    pub split: Split,
    pub samples: usize,
    pub keypoints: usize,
}

/// Aggregated benchmark numbers. Distances in mm, AUC and F in `[0, 1]`.
/// Fields are `None` when no sample supplied the needed inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub pa_mpjpe: Option<f64>,
    pub pa_mpvpe: Option<f64>,
    pub auc_j: Option<f64>,
    pub auc_v: Option<f64>,
    pub f_at_5: Option<f64>,
    pub f_at_15: Option<f64>,
    pub pck: Vec<PckEntry>,
    pub sample_counts: Vec<SplitCount>,
    /// Samples with keypoints whose ground-truth box had zero area.
    pub skipped_2d: usize,
    pub averaging: PckAveraging,
}

impl EvalReport {
    pub fn pck_at(&self, threshold: f64, split: Split) -> Option<f64> {
        self.pck
            .iter()
            .find(|e| e.split == split && (e.threshold - threshold).abs() < 1e-12)
            .and_then(|e| e.percentage)
    }
}

/// Evaluates and aggregates a list of samples sequentially.
pub fn aggregate_report<T: Real>(samples: &[SampleInput<'_, T>], config: &EvalConfig) -> Result<EvalReport, MetricsError> {
    let mut acc = EvalAccumulator::new(config);
    for s in samples {
        let m = evaluate_sample(s, config)?;
        acc.push(&m, s.pred_keypoints.is_some() && s.gt_keypoints.is_some());
    }
    acc.finish(config)
}
