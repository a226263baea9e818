use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("approach direction ({0}, {1}) has zero length")]
    DegenerateDirection(f64, f64),

    #[error("layout transform is not invertible (scale {0})")]
    SingularTransform(f64),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    #[error("grid dimensions {found_w}x{found_h} do not match expected {want_w}x{want_h}")]
    DimensionMismatch {
        want_w: usize,
        want_h: usize,
        found_w: usize,
        found_h: usize,
    },

    #[error("antipodal approach directions have no unique interpolation path")]
    AmbiguousPath,

    #[error("schedule needs at least 10 steps, got {0}")]
    ScheduleTooShort(usize),

    #[error("timestep {t} out of range 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("noise level at t={0} leaves no signal to invert")]
    DivisionGuard(usize),

    #[error("time embedding dimension must be even, got {0}")]
    OddEmbeddingDim(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at batch item {item} (t = {t})")]
    NonFiniteLoss { item: usize, t: usize },

    #[error("non-finite gradient at parameter index {0}")]
    NonFiniteGradient(usize),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("sampled layout has a degenerate approach direction after resampling")]
    DegenerateSample,

    #[error("no constrained coordinate in any guidance spec")]
    UndefinedMetric,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("cannot hold out {held_out} of {instances} instances")]
    HeldOutTooLarge { held_out: usize, instances: usize },

    #[error("heatmap has no mass")]
    DegenerateHeatmap,

    #[error("relative hand size {0} is outside (0, 1.5]")]
    InfeasibleSize(f64),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sample {id}: {reason}")]
    Sample { id: usize, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
