use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error: {0}")]
    Syntax(String),

    #[error("node `{node}`: {reason}")]
    Model { node: String, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("coordinate {coord} out of range for level {level} at position {pos}")]
    OutOfRange { pos: usize, coord: usize, level: usize },

    #[error("variable set error: {0}")]
    Variables(String),

    #[error("invalid cumulative logits: values must be strictly decreasing")]
    InvalidCumulativeLogits,

    #[error("probabilities must be strictly positive")]
    NonPositiveProbability,

    #[error("observed cell {cell:?} in stratum {stratum} has zero model probability")]
    ZeroProbabilityCell { stratum: usize, cell: Vec<usize> },

    #[error("scoring diverged for node `{0}`")]
    ScoringDiverged(String),

    #[error("information matrix singular - model may be unidentified (condition number {condition:e})")]
    SingularInformation { condition: f64 },

    #[error("reference survival probability is zero")]
    ZeroReferenceSurvival,

    #[error("invalid query: {0}")]
    Query(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn model(node: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Model {
            node: node.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable kind, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax(_) => "syntax",
            Error::Model { .. } | Error::InvalidModel(_) => "model",
            Error::Data(_) => "data",
            Error::Dimension(_) => "dimension",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Variables(_) => "variables",
            Error::InvalidCumulativeLogits => "invalid_cumulative_logits",
            Error::NonPositiveProbability => "non_positive_probability",
            Error::ZeroProbabilityCell { .. } => "zero_probability_cell",
            Error::ScoringDiverged(_) => "scoring_diverged",
            Error::SingularInformation { .. } => "singular_information",
            Error::ZeroReferenceSurvival => "zero_reference_survival",
            Error::Query(_) => "query",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
