use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("SVD failed: {0}")]
    SvdFailure(String),

    #[error("cannot factorize {0}")]
    NotFactorizable(usize),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("function value is not finite at coordinate {0}")]
    NonFiniteFunctionValue(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("embedding {0} has zero norm")]
    ZeroNormEmbedding(usize),

    #[error("GE2E needs at least two speakers, got {0}")]
    FewerThanTwoSpeakers(usize),

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("signal too short: {samples} samples, frame needs {frame}")]
    SignalTooShort { samples: usize, frame: usize },

    #[error("negative frequency {0} Hz")]
    NegativeFrequency(f64),

    #[error("bad IDX magic {0:02x?}")]
    BadMagic([u8; 4]),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("images have differing sizes")]
    RaggedImages,

    #[error("score set has no {0} scores")]
    EmptyScores(&'static str),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("parameter count must be positive")]
    ZeroCount,

    #[error("repetition count must be at least 1")]
    ZeroReps,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint incompatible: {0}")]
    IncompatibleCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn extent(msg: impl Into<String>) -> Self {
        Error::ExtentMismatch(msg.into())
    }
}
