use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use handmesh::camera::CameraIntrinsics;
use handmesh::dataio::{load_annotations, synthesize_dataset, Image, ParseMode, SynthConfig, UnifiedSample};
use handmesh::hand_model::HandModelAsset;
use handmesh::regressor::{
    image_input, mean_reprojection_error, LrSchedule, save_checkpoint, Regressor, RegressorConfig, StepStats, TrainConfig,
    TrainSample, Trainer,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Invariant, Status};

/// A preset name or a (partial) config table on top of the desk preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Custom(RegressorConfig),
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<RegressorConfig> {
        let cfg = match self {
            ModelSpec::Preset(name) => {
                RegressorConfig::preset(name).with_context(|| format!("unknown model preset '{name}'"))?
            }
            ModelSpec::Custom(c) => c.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Small and large training-set sizes.
    pub data: [usize; 2],
    /// Small and large models.
    pub models: [ModelSpec; 2],
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            data: [64, 1024],
            models: [
                ModelSpec::Custom(RegressorConfig {
                    embed_dim: 32,
                    depth: 1,
                    num_heads: 2,
                    ..RegressorConfig::desk()
                }),
                ModelSpec::Preset("desk".into()),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub model: ModelSpec,
    /// A cosine schedule with `steps = 0` spans the whole run.
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Synthesized training samples when no data directory is given.
    pub samples: usize,
    pub test_samples: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub sweep: SweepConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            model: ModelSpec::Preset("desk".into()),
            train: TrainConfig {
                schedule: LrSchedule::Cosine {
                    steps: 0,
                    final_fraction: 0.01,
                },
                ..TrainConfig::default()
            },
            synth: SynthConfig::default(),
            samples: 64,
            test_samples: 128,
            steps: 300,
            batch_size: 8,
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(clap::Args)]
pub struct Args {
    /// Directory for the checkpoint, loss curve and summary.
    #[arg(long, short)]
    pub output_dir: PathBuf,
    /// TOML training config; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Train on `annotations.jsonl` and `images/` from `handmesh synth`
    /// instead of synthesizing.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Synthesized training samples.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub test_samples: Option<usize>,
    /// Model preset: tiny, desk or huge.
    #[arg(long)]
    pub model: Option<String>,
    /// Rig asset [default: the bundled rig].
    #[arg(long)]
    pub asset: Option<PathBuf>,
    /// Seeds model init, data synthesis and batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train the 2x2 grid of data volume and model size instead of one
    /// model.
    #[arg(long)]
    pub sweep: bool,
}

/// Derived seeds, so one `--seed` controls everything.
#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub model: u64,
    pub train_data: u64,
    pub test_data: u64,
    pub batches: u64,
}

impl Seeds {
    pub fn new(seed: u64) -> Self {
        Seeds {
            model: seed,
            train_data: seed.wrapping_add(11),
            test_data: seed.wrapping_add(12),
            batches: seed.wrapping_add(13),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub params: usize,
    pub train_samples: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub train_reprojection_px: f64,
    pub heldout_reprojection_px: f64,
}

pub fn synthetic(asset: &HandModelAsset<f64>, count: usize, seed: u64, cfg: &SynthConfig) -> Vec<TrainSample<f32>> {
    let cfg = SynthConfig { render: true, ..*cfg };
    synthesize_dataset(asset, count, seed, &cfg)
        .iter()
        .map(|s| TrainSample::from_synthetic(s).expect("rendered"))
        .collect()
}

/// Loads a directory written by `handmesh synth`.
pub fn load_dir(dir: &Path, crop_size: f64) -> Result<Vec<TrainSample<f32>>> {
    let ann = dir.join("annotations.jsonl");
    let records = load_annotations(&ann, ParseMode::Strict)
        .with_context(|| format!("cannot load {}", ann.display()))?
        .records;
    let k = CameraIntrinsics::default_for_crop(crop_size as f32);
    records
        .iter()
        .map(|r| {
            let s = UnifiedSample::from_annotation(r, crop_size)
                .with_context(|| format!("{}: cannot place a crop", r.image_id))?;
            let path = dir.join("images").join(format!("{}.ppm", r.image_id));
            let img = Image::load(&path).with_context(|| format!("cannot load image {}", path.display()))?;
            Ok(TrainSample {
                image: image_input(&img),
                gt: s.to_ground_truth(),
                intrinsics: k,
                crop_size: crop_size as f32,
            })
        })
        .collect()
}

/// Trains one model and scores it on `test`. `on_step` sees every step.
pub fn train_one(
    name: &str,
    model_cfg: &RegressorConfig,
    cfg: &ToyConfig,
    asset: &HandModelAsset<f64>,
    train: &[TrainSample<f32>],
    test: &[TrainSample<f32>],
    seeds: Seeds,
    mut on_step: impl FnMut(&StepStats),
) -> Result<(Regressor<f32>, RunSummary)> {
    if train.is_empty() {
        bail!("no training samples");
    }
    let asset32 = asset.cast::<f32>();
    let model = Regressor::new(model_cfg.clone(), seeds.model)?;
    let params = model.num_params();
    let mut tc = TrainConfig {
        seed: seeds.batches,
        ..cfg.train.clone()
    };
    if let LrSchedule::Cosine { steps: 0, final_fraction } = tc.schedule {
        tc.schedule = LrSchedule::Cosine {
            steps: cfg.steps,
            final_fraction,
        };
    }
    let mut trainer = Trainer::new(model, &asset32, tc)?;
    let mut final_loss = None;
    let mut bad = None;
    trainer.train(train, cfg.steps, cfg.batch_size, |s| {
        if !s.total.is_finite() && bad.is_none() {
            bad = Some(s.step);
        }
        final_loss = Some(s.total);
        on_step(s);
    })?;
    if let Some(step) = bad {
        return Err(Invariant(format!("{name}: loss became non-finite at step {step}")).into());
    }
    let model = trainer.model;
    let train_err = mean_reprojection_error(&model, &asset32, train)?;
    let test_err = if test.is_empty() {
        f64::NAN
    } else {
        mean_reprojection_error(&model, &asset32, test)?
    };
    let summary = RunSummary {
        name: name.to_string(),
        params,
        train_samples: train.len(),
        steps: cfg.steps,
        final_loss,
        train_reprojection_px: train_err,
        heldout_reprojection_px: test_err,
    };
    Ok((model, summary))
}

pub const LOSS_CURVE_HEADER: &str = "step,lr,loss_3d,loss_2d,adversarial,total,disc_loss,grad_norm\n";

fn curve_row(s: &StepStats) -> String {
    format!(
        "{},{},{},{},{},{},{},{}\n",
        s.step,
        s.lr,
        s.loss_3d,
        s.loss_2d,
        s.adversarial,
        s.total,
        s.disc_loss.map_or(String::new(), |d| d.to_string()),
        s.grad_norm
    )
}

/// Result of the data-volume by model-size grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub base: RunSummary,
    pub data: RunSummary,
    pub model: RunSummary,
    pub both: RunSummary,
}

impl SweepReport {
    pub fn runs(&self) -> [&RunSummary; 4] {
        [&self.base, &self.data, &self.model, &self.both]
    }

    /// Large data with the large model beats each other cell.
    pub fn both_strictly_best(&self) -> bool {
        let b = self.both.heldout_reprojection_px;
        [&self.base, &self.data, &self.model]
            .iter()
            .all(|r| b < r.heldout_reprojection_px)
    }
}

/// Trains the four cells on nested synthetic training sets (the small set
/// is a prefix of the large one) and scores them on one held-out set.
pub fn sweep(cfg: &ToyConfig, asset: &HandModelAsset<f64>, seed: u64) -> Result<SweepReport> {
    let seeds = Seeds::new(seed);
    let [small_n, large_n] = cfg.sweep.data;
    if small_n == 0 || small_n >= large_n {
        bail!("sweep data sizes must satisfy 0 < small < large, got {small_n} and {large_n}");
    }
    let [small_m, large_m] = [cfg.sweep.models[0].resolve()?, cfg.sweep.models[1].resolve()?];
    let train = synthetic(asset, large_n, seeds.train_data, &cfg.synth);
    let test = synthetic(asset, cfg.test_samples, seeds.test_data, &cfg.synth);
    let cells = [
        ("base", &small_m, small_n),
        ("data", &small_m, large_n),
        ("model", &large_m, small_n),
        ("both", &large_m, large_n),
    ];
    let mut runs: Vec<RunSummary> = cells
        .par_iter()
        .map(|(name, m, n)| train_one(name, m, cfg, asset, &train[..*n], &test, seeds, |_| {}).map(|r| r.1))
        .collect::<Result<_>>()?;
    let both = runs.pop().unwrap();
    let model = runs.pop().unwrap();
    let data = runs.pop().unwrap();
    let base = runs.pop().unwrap();
    Ok(SweepReport { base, data, model, both })
}

fn load_config(args: &Args) -> Result<ToyConfig> {
    let mut cfg: ToyConfig = crate::config(args.config.as_ref())?;
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    if let Some(n) = args.test_samples {
        cfg.test_samples = n;
    }
    if let Some(m) = &args.model {
        cfg.model = ModelSpec::Preset(m.clone());
    }
    if cfg.batch_size == 0 {
        bail!("batch size must be positive");
    }
    Ok(cfg)
}

pub fn run(args: Args) -> Result<Status> {
    let cfg = load_config(&args)?;
    let asset = crate::asset(args.asset.as_deref())?;
    std::fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("cannot create {}", args.output_dir.display()))?;
    if args.sweep {
        return run_sweep(&args, &cfg, &asset);
    }
    let seeds = Seeds::new(args.seed);
    let model_cfg = cfg.model.resolve()?;
    let train = match &args.data {
        Some(dir) => load_dir(dir, cfg.synth.crop_size)?,
        None => synthetic(&asset, cfg.samples, seeds.train_data, &cfg.synth),
    };
    let test = synthetic(&asset, cfg.test_samples, seeds.test_data, &cfg.synth);
    let mut curve = String::from(LOSS_CURVE_HEADER);
    let (model, summary) = train_one("train", &model_cfg, &cfg, &asset, &train, &test, seeds, |s| {
        curve.push_str(&curve_row(s));
    })?;
    save_checkpoint(&model, args.output_dir.join("checkpoint.bin"))?;
    crate::write(&args.output_dir.join("loss_curve.csv"), curve.as_bytes())?;
    crate::write(
        &args.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    println!(
        "{} params, {} samples, {} steps: train reprojection {:.3} px, held-out {:.3} px",
        summary.params, summary.train_samples, summary.steps, summary.train_reprojection_px, summary.heldout_reprojection_px
    );
    Ok(Status::Ok)
}

fn run_sweep(args: &Args, cfg: &ToyConfig, asset: &HandModelAsset<f64>) -> Result<Status> {
    if args.data.is_some() {
        bail!("--sweep synthesizes its own data; drop --data");
    }
    let report = sweep(cfg, asset, args.seed)?;
    let mut table = String::from("run\tparams\ttrain_samples\ttrain_px\theldout_px\n");
    for r in report.runs() {
        writeln!(
            table,
            "{}\t{}\t{}\t{}\t{}",
            r.name, r.params, r.train_samples, r.train_reprojection_px, r.heldout_reprojection_px
        )
        .unwrap();
    }
    crate::write(&args.output_dir.join("sweep.tsv"), table.as_bytes())?;
    crate::write(
        &args.output_dir.join("sweep.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    print!("{table}");
    println!(
        "large data + large model strictly best: {}",
        if report.both_strictly_best() { "yes" } else { "no" }
    );
    Ok(Status::Ok)
}
