use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use handmesh::hand_model::{pose_hand, HandModelAsset, HandState};
use handmesh::linalg::Vec3;
use serde_json::Value;

use crate::Status;

#[derive(clap::Args)]
pub struct Args {
    /// JSON object with `theta` and `beta` (missing fields are zero), or a
    /// predictions file from `handmesh fit`.
    pub state: PathBuf,
    /// Rig asset [default: the bundled rig].
    #[arg(long)]
    pub asset: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Record to export from a predictions file [default: the first].
    #[arg(long)]
    pub image_id: Option<String>,
    /// Add the record's `camera_translation` to every vertex.
    #[arg(long)]
    pub camera_frame: bool,
}

fn numbers(v: &Value, field: &str) -> Result<Option<Vec<f64>>> {
    match v.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(xs)) => xs
            .iter()
            .map(|x| x.as_f64().with_context(|| format!("{field} holds a non-number")))
            .collect::<Result<_>>()
            .map(Some),
        Some(_) => bail!("{field} is not an array"),
    }
}

/// The selected state record of `text`.
pub fn select(text: &str, image_id: Option<&str>) -> Result<Value> {
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(text) {
        return Ok(v);
    }
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).with_context(|| format!("line {}", i + 1))?;
        if v.get("format").is_some() && v.get("image_id").is_none() {
            continue;
        }
        if image_id.map_or(true, |id| v.get("image_id").and_then(Value::as_str) == Some(id)) {
            return Ok(v);
        }
    }
    match image_id {
        Some(id) => bail!("no record with image_id '{id}'"),
        None => bail!("no state record found"),
    }
}

pub fn state_from(v: &Value, asset: &HandModelAsset<f64>) -> Result<HandState<f64>> {
    let rest = HandState::rest(asset);
    let state = HandState {
        theta: numbers(v, "theta")?.unwrap_or(rest.theta),
        beta: numbers(v, "beta")?.unwrap_or(rest.beta),
    };
    state.validate(asset)?;
    Ok(state)
}

/// Wavefront OBJ text: one `v` line per vertex, one 1-based `f` line per
/// face.
pub fn obj(vertices: &[Vec3<f64>], faces: &[[usize; 3]]) -> String {
    let mut s = String::from("# handmesh\n");
    for p in vertices {
        writeln!(s, "v {} {} {}", p[0], p[1], p[2]).unwrap();
    }
    for f in faces {
        writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    s
}

pub fn run(args: Args) -> Result<Status> {
    let asset = crate::asset(args.asset.as_deref())?;
    let text = std::fs::read_to_string(&args.state).with_context(|| format!("cannot read {}", args.state.display()))?;
    let record = select(&text, args.image_id.as_deref()).with_context(|| args.state.display().to_string())?;
    let state = state_from(&record, &asset)?;
    let mut vertices = pose_hand(&asset, &state)?.vertices;
    if args.camera_frame {
        let t = numbers(&record, "camera_translation")?.context("record has no camera_translation")?;
        if t.len() != 3 {
            bail!("camera_translation must have 3 entries");
        }
        let t = Vec3::new(t[0], t[1], t[2]);
        for p in &mut vertices {
            *p = *p + t;
        }
    }
    crate::write(&args.output, obj(&vertices, asset.faces()).as_bytes())?;
    println!("{} vertices, {} faces -> {}", vertices.len(), asset.faces().len(), args.output.display());
    Ok(Status::Ok)
}
