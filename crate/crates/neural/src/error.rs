use thiserror::Error;

pub type Result<T, E = NeuralError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("spatial size {height}x{width} is not divisible by {factor}")]
    Indivisible {
        height: usize,
        width: usize,
        factor: usize,
    },

    #[error("training diverged at step {step}: {what} = {value}")]
    Diverged {
        step: u64,
        what: &'static str,
        value: f64,
    },

    #[error("weight file: {0}")]
    Corrupt(String),

    #[error("weight file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("architecture mismatch in field `{field}`: file has {found}, expected {expected}")]
    ArchMismatch {
        field: String,
        found: String,
        expected: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] depthvision_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
