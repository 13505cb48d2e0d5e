use std::path::PathBuf;

use anyhow::Result;
use handmesh::dataio::annotations::annotations_to_string;
use handmesh::dataio::{asset_to_json, synthesize_dataset, SynthConfig};
use handmesh::hand_model::synthetic::synthetic_hand_rig;

use crate::Status;

#[derive(clap::Args)]
pub struct SynthArgs {
    /// Receives `annotations.jsonl` and `images/<image_id>.ppm`.
    #[arg(long, short)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rig asset [default: the bundled rig].
    #[arg(long)]
    pub asset: Option<PathBuf>,
    /// TOML synthesis config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Skip rendering.
    #[arg(long)]
    pub no_images: bool,
}

#[derive(clap::Args)]
pub struct MakeRigArgs {
    #[arg(long, short)]
    pub output: PathBuf,
    /// Drives the shape bases and pose correctives; 0 is the bundled rig.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run_synth(args: SynthArgs) -> Result<Status> {
    let asset = crate::asset(args.asset.as_deref())?;
    let mut cfg: SynthConfig = crate::config(args.config.as_ref())?;
    cfg.render &= !args.no_images;
    let data = synthesize_dataset(&asset, args.count, args.seed, &cfg);
    for s in &data {
        if let Some(img) = &s.image {
            let path = args.output_dir.join("images").join(format!("{}.ppm", s.sample.image));
            crate::write(&path, &img.to_ppm())?;
        }
    }
    let records: Vec<_> = data.iter().map(|s| s.to_annotation()).collect();
    crate::write(&args.output_dir.join("annotations.jsonl"), annotations_to_string(&records).as_bytes())?;
    println!("{} samples -> {}", data.len(), args.output_dir.display());
    Ok(Status::Ok)
}

pub fn run_make_rig(args: MakeRigArgs) -> Result<Status> {
    let rig = synthetic_hand_rig::<f64>(args.seed);
    crate::write(&args.output, asset_to_json(&rig).as_bytes())?;
    println!(
        "{} vertices, {} joints, {} shape coefficients -> {}",
        rig.num_vertices(),
        rig.num_joints(),
        rig.num_shape(),
        args.output.display()
    );
    Ok(Status::Ok)
}
