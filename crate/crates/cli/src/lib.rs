//! Library behind the `handmesh` binary: evaluate predictions, fit hands to annotations, train the toy
//! regressor, validate datasets and export meshes.
//!
//! Exit codes: 0 success, 2 input error, 3 invariant violation.

pub mod evaluate;
pub mod fit;
pub mod mesh;
pub mod synth;
pub mod train;
pub mod validate;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use handmesh::dataio::{bundled_rig, load_asset, write_atomic};
use handmesh::hand_model::HandModelAsset;
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "handmesh", version, about = "Hand mesh recovery toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Score a predictions file against ground-truth annotations.
    Evaluate(evaluate::Args),
    /// Fit the hand model to every record of an annotation file.
    Fit(fit::Args),
    /// Train the desk-scale regressor on synthetic data, or sweep data
    /// volume and model size.
    TrainToy(train::Args),
    /// Check an annotation file, or compare two annotation passes.
    Validate(validate::Args),
    /// Write the posed mesh of a state or prediction record as OBJ.
    ExportMesh(mesh::Args),
    /// Render a synthetic dataset with exact ground truth.
    Synth(synth::SynthArgs),
    /// Write the procedural rig as an asset file.
    MakeRig(synth::MakeRigArgs),
}

/// Output formats shared by the reporting commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    /// Aligned, human-readable text.
    #[default]
    Text,
    /// Tab-separated rows with a header line.
    Table,
    /// One JSON document.
    Json,
}

/// A well-formed input that breaks a property the command checks. Maps to
/// exit code 3; every other error is an input error.
#[derive(Debug)]
pub struct Invariant(pub String);

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invariant {}

/// Outcome of a command that ran to completion.
pub enum Status {
    Ok,
    Violation(String),
}

/// Runs the command line given by the process arguments.
pub fn main() -> ExitCode {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Evaluate(a) => evaluate::run(a),
        Command::Fit(a) => fit::run(a),
        Command::TrainToy(a) => train::run(a),
        Command::Validate(a) => validate::run(a),
        Command::ExportMesh(a) => mesh::run(a),
        Command::Synth(a) => synth::run_synth(a),
        Command::MakeRig(a) => synth::run_make_rig(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violation(msg)) => {
            eprintln!("handmesh: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("handmesh: error: {}", describe(&e));
            if e.chain().any(|c| c.is::<Invariant>()) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

/// The error chain joined by colons, skipping causes the previous message
/// already spells out.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

/// The rig at `path`, or the bundled rig.
pub fn asset(path: Option<&Path>) -> Result<HandModelAsset<f64>> {
    match path {
        Some(p) => load_asset(p).with_context(|| format!("cannot load asset {}", p.display())),
        None => Ok(bundled_rig()),
    }
}

/// Parses a TOML config file; absent file means defaults.
pub fn config<C: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    write_atomic(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

pub fn to_json_line<S: serde::Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string(value).expect("serializable");
    s.push('\n');
    s
}
