//! Volume and centerline data model, cylindrical resampling, and file formats.
//!
//! On-disk layout:
//!
//! * `*.vol.json` + `*.raw`: volume sidecar and little-endian voxel payload
//! * `*.cl.json`: centerline tree
//! * `*.cyl.json` + `*.raw`: cylindrical grid
//!
//! Every parser has a byte-slice entry point (`from_json_slice`, `decode`) so
//! it can be driven without touching the filesystem.

mod centerline;
mod cylindrical;
mod volume;

use std::fmt;
use std::path::{Path, PathBuf};

pub use centerline::{Attachment, Centerline, CenterlineTree, TreeSide, DEFAULT_MAX_POINT_SPACING_MM};
pub use cylindrical::{
    load_cylindrical, plane_frames, save_cylindrical, warp_to_cylindrical, CylindricalGrid, CylindricalHeader,
    GridSpec, PlaneFrame,
};
pub use volume::{
    load_label_volume, load_volume, save_label_volume, save_volume, save_volume_with, Dtype, LabelVolume, ScalarVolume,
    Volume, VolumeGeometry, VolumeHeader,
};

/// 3D position or direction in millimetres.
pub type Point3 = nalgebra::Vector3<f64>;

/// Malformed input. `context` names the file and/or field path, `offset` the
/// byte position when the failure is positional.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatError {
    pub context: String,
    pub offset: Option<u64>,
    pub message: String,
}

impl FormatError {
    pub fn new(context: impl Into<String>, message: impl Into<String>) -> Self {
        Self { context: context.into(), offset: None, message: message.into() }
    }

    pub fn at(context: impl Into<String>, offset: u64, message: impl Into<String>) -> Self {
        Self { context: context.into(), offset: Some(offset), message: message.into() }
    }

    /// Prefix the context with a file path.
    pub fn in_file(mut self, path: &Path) -> Self {
        self.context = if self.context.is_empty() {
            path.display().to_string()
        } else {
            format!("{}: {}", path.display(), self.context)
        };
        self
    }

    pub(crate) fn from_json<E: fmt::Display>(err: serde_path_to_error::Error<E>) -> Self {
        let path = err.path().to_string();
        let inner = err.into_inner();
        let context = if path == "." { String::new() } else { path };
        Self::new(context, inner.to_string())
    }
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.context.is_empty() {
            write!(f, "{}: ", self.context)?;
        }
        if let Some(off) = self.offset {
            write!(f, "at byte {off}: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for FormatError {}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format error: {0}")]
    Format(#[from] FormatError),
    #[error("degenerate tangent: centerline points {index} and {} coincide", index + 1)]
    DegenerateTangent { index: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }
}

/// Parse a JSON document into `T`, reporting the failing field path.
pub fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, FormatError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(FormatError::from_json)?;
    de.end().map_err(|e| FormatError::new("", e.to_string()))?;
    Ok(value)
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

/// Write `bytes` to a sibling temporary file and rename it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| IoError::Invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| IoError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
}

/// Resolve a data-file reference relative to the sidecar that names it.
pub(crate) fn sibling(sidecar: &Path, name: &str) -> PathBuf {
    match sidecar.parent() {
        Some(dir) => dir.join(name),
        None => PathBuf::from(name),
    }
}

/// Stem used to derive the payload name: `a/b/foo.vol.json` -> `foo`.
pub(crate) fn data_stem(path: &Path, suffix: &str) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(suffix).or_else(|| name.strip_suffix(".json")).unwrap_or(&name).to_string()
}
