//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

use crate::types::EstimatorKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{}", dim_mismatch_msg(id, *left, *right))]
    DimensionMismatch {
        id: String,
        left: usize,
        right: usize,
    },

    #[error("record `{id}`: missing payload for {estimator} estimation")]
    MissingPayload { id: String, estimator: EstimatorKind },

    #[error("zero-norm vector{}", fmt_id_suffix(id))]
    ZeroNormVector { id: String },

    #[error("token log-probability sequence is empty{}", fmt_id_suffix(id))]
    EmptySequence { id: String },

    #[error("positive log-probability {value} at index {index}{}", fmt_id_suffix(id))]
    PositiveLogProb {
        id: String,
        index: usize,
        value: f64,
    },

    #[error("non-finite input: {context}")]
    NonFiniteInput { context: String },

    #[error("token lengths unavailable in raw-score bypass mode for record `{id}`")]
    LengthUnavailable { id: String },

    #[error("no record carries a usable {estimator} score pair")]
    NoUsableRecords { estimator: EstimatorKind },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("all gaps are identical (zero standard deviation)")]
    DegenerateDistribution,

    #[error("both classification accuracies are zero; adaptive weights are undefined")]
    BothAccuraciesZero,

    #[error("{name} = {value} is outside [0, 1]")]
    WeightOutOfRange { name: &'static str, value: f64 },

    #[error("token {token} is outside the vocabulary of size {vocab_size}")]
    UnknownToken { token: u32, vocab_size: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("no difficulty score for record `{id}`")]
    MissingDifficultyScores { id: String },

    #[error("trace has {got} evaluation points, need at least 2")]
    TooFewEvaluations { got: usize },

    #[error("fraction {value} is outside (0, 1)")]
    FractionOutOfRange { value: f64 },

    #[error("need at least {needed} scored records with both normalized gaps, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("column `{name}` has zero variance; correlation is undefined")]
    DegenerateColumn { name: &'static str },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    #[error("{path}:{line}: {message}")]
    ParseLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    ParseFile { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn dim_mismatch_msg(id: &str, left: usize, right: usize) -> String {
    if id.is_empty() {
        format!("vector dimension mismatch: {left} vs {right}")
    } else {
        format!("record `{id}`: embedding dimension mismatch: {left} vs {right}")
    }
}

fn fmt_id_suffix(id: &str) -> String {
    if id.is_empty() {
        String::new()
    } else {
        format!(" (record `{id}`)")
    }
}

impl Error {
    /// Attaches a record id to errors raised by id-agnostic helpers.
    pub(crate) fn with_id(mut self, record_id: &str) -> Error {
        match &mut self {
            Error::DimensionMismatch { id, .. }
            | Error::ZeroNormVector { id }
            | Error::EmptySequence { id }
            | Error::PositiveLogProb { id, .. } => {
                if id.is_empty() {
                    *id = record_id.to_owned();
                }
            }
            _ => {}
        }
        self
    }

    /// Process exit code: 1 for validation failures, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            _ => 1,
        }
    }

    /// Machine-readable form emitted on stderr by the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        let kind = match self {
            Error::EmptyDataset => "empty_dataset",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::MissingPayload { .. } => "missing_payload",
            Error::ZeroNormVector { .. } => "zero_norm_vector",
            Error::EmptySequence { .. } => "empty_sequence",
            Error::PositiveLogProb { .. } => "positive_log_prob",
            Error::NonFiniteInput { .. } => "non_finite_input",
            Error::LengthUnavailable { .. } => "length_unavailable",
            Error::NoUsableRecords { .. } => "no_usable_records",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::DegenerateDistribution => "degenerate_distribution",
            Error::BothAccuraciesZero => "both_accuracies_zero",
            Error::WeightOutOfRange { .. } => "weight_out_of_range",
            Error::UnknownToken { .. } => "unknown_token",
            Error::EmptyBatch => "empty_batch",
            Error::MissingDifficultyScores { .. } => "missing_difficulty_scores",
            Error::TooFewEvaluations { .. } => "too_few_evaluations",
            Error::FractionOutOfRange { .. } => "fraction_out_of_range",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::DegenerateColumn { .. } => "degenerate_column",
            Error::InvalidConfig { .. } => "invalid_config",
            Error::ParseLine { .. } => "parse_error",
            Error::ParseFile { .. } => "parse_error",
            Error::Io(_) => "io_error",
        };
        let mut value = serde_json::json!({
            "error": kind,
            "message": self.to_string(),
        });
        if let Error::ParseLine { line, path, .. } = self {
            value["line"] = serde_json::json!(line);
            value["path"] = serde_json::json!(path);
        }
        value
    }
}
