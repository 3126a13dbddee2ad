use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("channel lengths differ: positions={positions} flow={flow} seg={seg}")]
    LengthMismatch { positions: usize, flow: usize, seg: usize },
    #[error("background point {0} has non-zero flow")]
    BackgroundFlow(usize),
    #[error("polygon is degenerate or clockwise")]
    DegeneratePolygon,
    #[error("polygon is not convex")]
    NotConvex,
    #[error("point ({x}, {y}) is not on the polygon boundary")]
    NotOnBoundary { x: f64, y: f64 },
    #[error("voxel size must be positive, got {0}")]
    InvalidVoxel(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("contact index {index} out of range for {len} points")]
    BadIndex { index: usize, len: usize },
    #[error("contact index {0} addresses a background point")]
    BackgroundContact(usize),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called without a recorded forward pass")]
    NoForward,
    #[error("cloud has no points")]
    EmptyInput,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("no object points to choose a contact location from")]
    NoObjectPoints,
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("unknown agent kind `{0}`")]
    UnknownKind(String),
    #[error("agent {0} does not produce a critic map")]
    NoCriticMap(String),
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
