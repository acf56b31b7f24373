use thiserror::Error;

/// Errors raised anywhere in the curation, labeling, loss and metric pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory too short: need at least {needed} samples, got {got}")]
    TrajectoryTooShort { needed: usize, got: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("non-finite coordinate at sample {index}")]
    NonFinite { index: usize },
    #[error("sample indices must increase by exactly 1 (at position {position})")]
    NonContiguous { position: usize },
    #[error("sample index {t_index} is outside the trajectory")]
    IndexOutOfRange { t_index: i32 },
    #[error("agent never moves; heading undefined")]
    AllStationary,
    #[error("future horizon too short: need sample {needed}")]
    HorizonTooShort { needed: i32 },
    #[error("trajectories share no common sample index")]
    EmptyOverlap,
    #[error("pair with {other} was not retained by the labeler")]
    PairNotRetained { other: String },
    #[error("agent {0} not present in scene")]
    UnknownAgent(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("need at least {needed} classes, got {got}")]
    TooFewClasses { needed: usize, got: usize },
    #[error("no interacting pairs to average over")]
    EmptyPairSet,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no prediction for agent {0}")]
    MissingPrediction(String),
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid lane graph: {0}")]
    InvalidLaneGraph(String),
    #[error("missing CSV column {0}")]
    MissingColumn(&'static str),
    #[error("no row with OBJECT_TYPE == AGENT")]
    NoTargetAgent,
    #[error("timestamps not monotonic for track {0}")]
    NonMonotonicTimestamps(String),
    #[error("irregular sampling: step {step_s:.4} s at rank {rank}")]
    IrregularSampling { rank: usize, step_s: f64 },
    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersionMismatch { expected: u32, found: u64 },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("no scenes found in {0}")]
    NoScenes(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable identifier used in machine-parsable error lines and reject reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::TrajectoryTooShort { .. } => "TrajectoryTooShort",
            Error::EmptyTrajectory => "EmptyTrajectory",
            Error::NonFinite { .. } => "NonFinite",
            Error::NonContiguous { .. } => "NonContiguous",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::AllStationary => "AllStationary",
            Error::HorizonTooShort { .. } => "HorizonTooShort",
            Error::EmptyOverlap => "EmptyOverlap",
            Error::PairNotRetained { .. } => "PairNotRetained",
            Error::UnknownAgent(_) => "UnknownAgent",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::TooFewClasses { .. } => "TooFewClasses",
            Error::EmptyPairSet => "EmptyPairSet",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyCorpus => "EmptyCorpus",
            Error::MissingPrediction(_) => "MissingPrediction",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvalidLaneGraph(_) => "InvalidLaneGraph",
            Error::MissingColumn(_) => "MissingColumn",
            Error::NoTargetAgent => "NoTargetAgent",
            Error::NonMonotonicTimestamps(_) => "NonMonotonicTimestamps",
            Error::IrregularSampling { .. } => "IrregularSampling",
            Error::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            Error::MalformedRecord { .. } => "MalformedRecord",
            Error::NoScenes(_) => "NoScenes",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
