use thiserror::Error;

/// Errors produced anywhere in the simulator and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("time {t} ns lies outside the drive interval [0, {t1}] ns")]
    TimeOutOfRange { t: f64, t1: f64 },

    #[error("propagator is not unitary (max |U^dag U - I| = {defect:e})")]
    NotUnitary { defect: f64 },

    #[error("step too coarse: total jump probability {probability} per step exceeds {limit}")]
    JumpProbabilityTooLarge { probability: f64, limit: f64 },

    #[error("record shapes differ: {0}")]
    ShapeMismatch(String),

    #[error("series too short: {0}")]
    SeriesTooShort(String),

    #[error("odd number of samples ({0}); the pi/T bin needs an even length, trim one sample")]
    OddSampleCount(usize),

    #[error("spectrum has zero total weight")]
    EmptySpectrum,

    #[error("no crossover detected: {0}")]
    NoCrossover(String),

    #[error("ambiguous dressed-state assignment (overlap {overlap:.3} < {threshold})")]
    AmbiguousAssignment { overlap: f64, threshold: f64 },

    #[error("Hilbert space dimension {dim} exceeds the limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("seed collision between runs {0} and {1}")]
    SeedCollision(String, String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
