use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the geometry, shape and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("disparity must be positive, got {0}")]
    NonPositiveDisparity(f64),
    #[error("invalid camera parameter: {0}")]
    InvalidCamera(String),
    #[error("voxel index ({i}, {j}, {k}) outside grid {nx}x{ny}x{nz}")]
    IndexOutOfGrid {
        i: usize,
        j: usize,
        k: usize,
        nx: usize,
        ny: usize,
        nz: usize,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("foreground mask is empty")]
    EmptyMask,
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("expected a point cloud in the {expected} frame, got {found}")]
    WrongFrame {
        expected: &'static str,
        found: &'static str,
    },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid region partition: {0}")]
    InvalidPartition(String),
    #[error("template library is empty")]
    EmptyLibrary,
    #[error("detection {0} has no completed point cloud")]
    MissingCloud(usize),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("malformed matrix `{key}`: {reason}")]
    MalformedMatrix { key: String, reason: String },
    #[error("malformed {format} data: {reason}")]
    MalformedData { format: &'static str, reason: String },
    #[error("unknown shape `{0}`")]
    UnknownShape(String),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach the file the error originated from.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with file context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.root(),
            other => other,
        }
    }

    /// Whether the failure is a configuration problem rather than malformed input.
    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
