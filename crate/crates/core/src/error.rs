use thiserror::Error;

use crate::diffcore::DiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error("invalid image dimensions {height}x{width} with {len} values")]
    ImageDimensions { height: usize, width: usize, len: usize },

    #[error("image component {index} = {value} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (usize, usize), right: (usize, usize) },

    #[error("image of size {height}x{width} is too small (need at least {min}x{min})")]
    ImageTooSmall { height: usize, width: usize, min: usize },

    #[error("{what} must be strictly positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("label {label} is out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("model input is {expected:?} but image is {found:?}")]
    InputDimensions { expected: (usize, usize, usize), found: (usize, usize, usize) },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("checkpoint parse error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFiniteGradient { what: &'static str, iteration: usize },

    #[error("invalid attack configuration: {0}")]
    Config(String),

    #[error("cannot aggregate an empty outcome list")]
    EmptyOutcomes,

    #[error("bit depth {0} is outside 1..=8")]
    BitDepth(u8),

    #[error("JPEG quality {0} is outside 1..=100")]
    JpegQuality(u8),

    #[error("image transform failed: {0}")]
    Transform(String),

    #[error("no images left after filtering for correct classification")]
    EmptySuite,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
