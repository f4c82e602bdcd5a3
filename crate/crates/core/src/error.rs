use alloc::string::String;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(&'static str),
    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid depth {0}, must be > 0")]
    InvalidDepth(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("bounding box mismatch between rendered and observed regions")]
    BoxMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("detection box contains no valid observed depth")]
    NoValidDepth,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}
