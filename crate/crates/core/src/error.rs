use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("schema violation in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("non-numeric cell in {path} (line {line}, column `{column}`): {value:?}")]
    NonNumeric {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
    },

    #[error("search volume value {value} outside [0, 100] in {path} (line {line})")]
    SviOutOfRange { path: PathBuf, line: u64, value: f64 },

    #[error("non-contiguous months in {path}: {message}")]
    NonContiguousMonths { path: PathBuf, message: String },

    #[error("fewer than two observations to interpolate from")]
    TooFewObservations,

    #[error("gap at year {year} is at the edge of the series and cannot be interpolated")]
    EdgeGap { year: i32 },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("insufficient history: year {year} needs {tau} lagged years but the panel starts in {start}")]
    InsufficientHistory { year: i32, tau: usize, start: i32 },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("width mismatch: expected {expected} columns, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("column metadata does not match the model: {0}")]
    ColumnMismatch(String),

    #[error("unknown country id {0}")]
    UnknownCountry(usize),

    #[error("batch of size {0} in train mode; batch normalization needs at least 2 rows")]
    BatchTooSmall(usize),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("not enough training rows: {0}")]
    NotEnoughRows(String),

    #[error("invalid training spec: {0}")]
    InvalidTrainSpec(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("unsupported model file version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("design matrix is rank deficient (rank {rank} of {cols})")]
    RankDeficient { rank: usize, cols: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("coordinate descent did not converge after {iterations} sweeps (duality gap {gap:.3e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("zero denominator: {0}")]
    ZeroDenominator(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("constant series: correlation is undefined")]
    ConstantSeries,

    #[error("missing artifact {artifact}; run `{requires}` first")]
    MissingArtifact { artifact: String, requires: String },

    #[error("invalid run config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::Schema { .. } => "schema",
            Error::NonNumeric { .. } => "non_numeric",
            Error::SviOutOfRange { .. } => "svi_out_of_range",
            Error::NonContiguousMonths { .. } => "non_contiguous_months",
            Error::TooFewObservations => "too_few_observations",
            Error::EdgeGap { .. } => "edge_gap",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::MissingData(_) => "missing_data",
            Error::OutOfRange(_) => "out_of_range",
            Error::WidthMismatch { .. } => "width_mismatch",
            Error::ColumnMismatch(_) => "column_mismatch",
            Error::UnknownCountry(_) => "unknown_country",
            Error::BatchTooSmall(_) => "batch_too_small",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NotEnoughRows(_) => "not_enough_rows",
            Error::InvalidTrainSpec(_) => "invalid_train_spec",
            Error::ModelFormat(_) => "model_format",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Singular(_) => "singular",
            Error::NoConvergence { .. } => "no_convergence",
            Error::ZeroDenominator(_) => "zero_denominator",
            Error::InvalidInput(_) => "invalid_input",
            Error::ConstantSeries => "constant_series",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::Config(_) => "config",
        }
    }
}
