//! File formats, loaders, the annotation consistency checker and the
//! synthetic data generator.
//!
//! * Assets: one JSON document with a dimension header ([`asset`]).
//! * Annotations and predictions: JSON Lines, one hand per line
//!   ([`annotations`]).
//! * Images: binary PPM ([`image`]).
//!
//! Every file carries a `format_version`. Writers replace files atomically.

pub mod annotations;
pub mod asset;
pub mod consistency;
pub mod image;
pub mod synth;

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::hand_model::HandModelError;

pub use annotations::{
    load_annotations, parse_annotations, save_annotations, write_annotations, HandSide, KeypointAnnotation,
    LoadedAnnotations, ParseMode, ANNOTATION_FORMAT_VERSION,
};
pub use asset::{asset_from_json, asset_to_json, bundled_rig, load_asset, save_asset, ASSET_FORMAT_VERSION, BUNDLED_RIG_JSON};
pub use consistency::{consistency_check, palm_length, Agreement, ConsistencyReport, PalmUndefined};
pub use image::Image;
pub use synth::{synthesize_dataset, SynthConfig, SyntheticSample, UnifiedSample};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed syntax or a schema violation at a 1-based line.
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Schema(String),
    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },
    #[error("invalid asset: {0}")]
    Asset(#[from] HandModelError),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Line number of the offending input, when known.
    pub fn line(&self) -> Option<usize> {
        match self {
            DataError::Syntax { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| DataError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| DataError::io(path, e))?;
    tmp.flush().map_err(|e| DataError::io(path, e))?;
    // temp files are created owner-only
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(tmp.path(), std::fs::Permissions::from_mode(0o644))
            .map_err(|e| DataError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| DataError::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}
