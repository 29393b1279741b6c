use thiserror::Error;

pub type Result<T, E = EvsiError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EvsiError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("index {index} out of range (length {len})")]
    Index { index: usize, len: usize },

    #[error("insufficient data: need at least {needed} values, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate predictor: all values equal {0}")]
    DegeneratePredictor(f64),

    #[error("underdetermined fit: {rows} rows for {coefficients} coefficients")]
    Underdetermined { rows: usize, coefficients: usize },

    #[error("singular least-squares system")]
    SingularFit,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported likelihood family `{0}`; supply n0 and the information function directly")]
    UnsupportedFamily(String),

    #[error("numeric instability: {0}")]
    NumericInstability(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<EvsiError>,
    },
}

impl EvsiError {
    /// The innermost error, skipping any stage annotations.
    pub fn root(&self) -> &EvsiError {
        match self {
            EvsiError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Tags an error with the `module::operation` that produced it.
pub trait StageExt<T> {
    fn during(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn during(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| EvsiError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
