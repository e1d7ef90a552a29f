//! Shared data model: preference records, difficulty scores, estimator
//! reports, and fusion configuration.
//!
//! All types are immutable after construction and safe to share across
//! threads. Token log-probabilities use natural logs throughout.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample category, matching the per-category accuracy breakdown.
///
/// Unknown category strings deserialize to [`Category::Other`] with a
/// warning so that accuracy reporting never fails on novel tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Vqa,
    Caption,
    TextVqa,
    Other,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Vqa,
        Category::Caption,
        Category::TextVqa,
        Category::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Vqa => "VQA",
            Category::Caption => "Caption",
            Category::TextVqa => "TextVQA",
            Category::Other => "Other",
        }
    }

    pub fn from_name(name: &str) -> Category {
        match name {
            "VQA" => Category::Vqa,
            "Caption" => Category::Caption,
            "TextVQA" => Category::TextVqa,
            "Other" => Category::Other,
            other => {
                log::warn!("unknown category `{other}`, mapping to Other");
                Category::Other
            }
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        Ok(Category::from_name(&name))
    }
}

/// The two difficulty estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Contrastive,
    Generative,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Contrastive => f.write_str("contrastive"),
            EstimatorKind::Generative => f.write_str("generative"),
        }
    }
}

/// Pre-supplied estimator scores, bypassing embedding / log-probability
/// payloads. Scores are trusted verbatim apart from a finiteness check.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawScores {
    pub c_c: Option<f64>,
    pub c_r: Option<f64>,
    pub m_c: Option<f64>,
    pub m_r: Option<f64>,
}

/// One pairwise preference sample.
///
/// Embeddings feed the contrastive estimator (cosine similarity against the
/// image embedding); token log-probabilities feed the generative estimator.
/// Either payload may be replaced by pre-supplied raw scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceRecord {
    pub id: String,
    pub category: Category,
    pub image_embedding: Option<Vec<f64>>,
    pub chosen_text_embedding: Option<Vec<f64>>,
    pub rejected_text_embedding: Option<Vec<f64>>,
    pub chosen_token_logprobs: Option<Vec<f64>>,
    pub rejected_token_logprobs: Option<Vec<f64>>,
    pub raw_scores: Option<RawScores>,
}

impl PreferenceRecord {
    /// Minimal record with only id and category; payloads start empty.
    pub fn new(id: impl Into<String>, category: Category) -> Self {
        PreferenceRecord {
            id: id.into(),
            category,
            image_embedding: None,
            chosen_text_embedding: None,
            rejected_text_embedding: None,
            chosen_token_logprobs: None,
            rejected_token_logprobs: None,
            raw_scores: None,
        }
    }

    /// Full embedding triple present (the computed contrastive path).
    pub fn has_embedding_triple(&self) -> bool {
        self.image_embedding.is_some()
            && self.chosen_text_embedding.is_some()
            && self.rejected_text_embedding.is_some()
    }

    /// Raw contrastive score pair present and finite.
    pub fn has_contrastive_bypass(&self) -> bool {
        matches!(
            &self.raw_scores,
            Some(RawScores { c_c: Some(c), c_r: Some(r), .. })
                if c.is_finite() && r.is_finite()
        )
    }

    /// Both token log-probability sequences present and non-empty.
    pub fn has_logprob_payload(&self) -> bool {
        matches!(&self.chosen_token_logprobs, Some(s) if !s.is_empty())
            && matches!(&self.rejected_token_logprobs, Some(s) if !s.is_empty())
    }

    /// Raw generative score pair present and finite.
    pub fn has_generative_bypass(&self) -> bool {
        matches!(
            &self.raw_scores,
            Some(RawScores { m_c: Some(c), m_r: Some(r), .. })
                if c.is_finite() && r.is_finite()
        )
    }
}

/// Per-sample difficulty scores: raw gaps, normalized gaps, fused weight.
///
/// Gap fields are `None` when the corresponding estimator was not requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyScore {
    pub id: String,
    pub c_g: Option<f64>,
    pub m_g: Option<f64>,
    pub c_g_hat: Option<f64>,
    pub m_g_hat: Option<f64>,
    pub beta_hat: f64,
}

/// Preference classification accuracy of one estimator on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: EstimatorKind,
    /// Fraction of evaluated records with a strictly positive gap.
    pub overall_accuracy: f64,
    pub per_category_accuracy: BTreeMap<Category, f64>,
    pub per_category_n: BTreeMap<Category, usize>,
    pub n_evaluated: usize,
}

/// How the two normalized gaps are combined into a fused weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FusionMode {
    /// Weights proportional to each estimator's classification accuracy.
    Adaptive,
    /// Fixed contrastive weight `w_c`; the generative weight is `1 - w_c`.
    Fixed { w_c: f64 },
}

/// Normalization applied to raw gaps before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Dataset-level Gaussian projection of the z-scored gap.
    Gaussian,
    /// Rank position projected linearly onto [0, 1].
    RankBased,
    /// Gaussian projection with the generative gap divided by token length.
    GaussianLengthControlled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub normalization: NormalizationMode,
    pub stabilizer: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mode: FusionMode::Adaptive,
            normalization: NormalizationMode::Gaussian,
            stabilizer: 1.0,
        }
    }
}

/// Why a record cannot serve a requested estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    MissingPayload,
    EmptySequence,
    PositiveLogProb { index: usize },
    NonFinite,
    ZeroNormVector,
}

impl fmt::Display for FlagReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlagReason::MissingPayload => f.write_str("missing payload"),
            FlagReason::EmptySequence => f.write_str("empty log-probability sequence"),
            FlagReason::PositiveLogProb { index } => {
                write!(f, "positive log-probability at index {index}")
            }
            FlagReason::NonFinite => f.write_str("non-finite value"),
            FlagReason::ZeroNormVector => f.write_str("zero-norm embedding"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordFlag {
    pub id: String,
    pub estimator: EstimatorKind,
    pub reason: FlagReason,
}

/// Outcome of [`validate_dataset`]: per-estimator usable counts plus flags
/// for records that fail an invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub n_records: usize,
    pub usable: BTreeMap<EstimatorKind, usize>,
    pub flags: Vec<RecordFlag>,
}

impl ValidationSummary {
    pub fn usable_for(&self, estimator: EstimatorKind) -> usize {
        self.usable.get(&estimator).copied().unwrap_or(0)
    }
}

fn check_embedding_dim(
    id: &str,
    expected: &mut Option<usize>,
    embedding: Option<&Vec<f64>>,
) -> Result<()> {
    if let Some(v) = embedding {
        match *expected {
            Some(dim) if dim != v.len() => {
                return Err(Error::DimensionMismatch {
                    id: id.to_owned(),
                    left: dim,
                    right: v.len(),
                })
            }
            Some(_) => {}
            None => *expected = Some(v.len()),
        }
    }
    Ok(())
}

fn logprob_flag(seq: &[f64]) -> Option<FlagReason> {
    if seq.is_empty() {
        return Some(FlagReason::EmptySequence);
    }
    for (index, &lp) in seq.iter().enumerate() {
        if lp.is_nan() || lp > 0.0 {
            return Some(FlagReason::PositiveLogProb { index });
        }
        if !lp.is_finite() {
            return Some(FlagReason::NonFinite);
        }
    }
    None
}

/// Checks a dataset against the record invariants and counts how many
/// records can serve each requested estimator.
///
/// Inconsistent embedding dimensionality anywhere in the dataset is a hard
/// error; everything else (missing payloads, positive log-probabilities,
/// zero-norm embeddings, non-finite raw scores) flags the offending record
/// and excludes it from the usable count. The input is never mutated.
pub fn validate_dataset(
    records: &[PreferenceRecord],
    required: &[EstimatorKind],
) -> Result<ValidationSummary> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut dim: Option<usize> = None;
    for record in records {
        check_embedding_dim(&record.id, &mut dim, record.image_embedding.as_ref())?;
        check_embedding_dim(&record.id, &mut dim, record.chosen_text_embedding.as_ref())?;
        check_embedding_dim(&record.id, &mut dim, record.rejected_text_embedding.as_ref())?;
    }

    let mut usable: BTreeMap<EstimatorKind, usize> = BTreeMap::new();
    let mut flags = Vec::new();
    for &estimator in required {
        let mut count = 0;
        for record in records {
            match flag_for(record, estimator) {
                None => count += 1,
                Some(reason) => flags.push(RecordFlag {
                    id: record.id.clone(),
                    estimator,
                    reason,
                }),
            }
        }
        usable.insert(estimator, count);
    }

    Ok(ValidationSummary {
        n_records: records.len(),
        usable,
        flags,
    })
}

/// `None` when the record can serve the estimator, or the first failing
/// invariant otherwise.
pub(crate) fn flag_for(record: &PreferenceRecord, estimator: EstimatorKind) -> Option<FlagReason> {
    match estimator {
        EstimatorKind::Contrastive => {
            if record.has_embedding_triple() {
                let zero_norm = [
                    record.image_embedding.as_ref(),
                    record.chosen_text_embedding.as_ref(),
                    record.rejected_text_embedding.as_ref(),
                ]
                .iter()
                .any(|v| v.map_or(false, |v| v.iter().map(|x| x * x).sum::<f64>() == 0.0));
                if zero_norm {
                    Some(FlagReason::ZeroNormVector)
                } else {
                    None
                }
            } else if record.raw_scores.as_ref().map_or(false, |r| {
                r.c_c.is_some() && r.c_r.is_some() && !record.has_contrastive_bypass()
            }) {
                Some(FlagReason::NonFinite)
            } else if record.has_contrastive_bypass() {
                None
            } else {
                Some(FlagReason::MissingPayload)
            }
        }
        EstimatorKind::Generative => {
            let chosen = record.chosen_token_logprobs.as_deref();
            let rejected = record.rejected_token_logprobs.as_deref();
            if chosen.is_some() || rejected.is_some() {
                match (chosen, rejected) {
                    (Some(c), Some(r)) => logprob_flag(c).or_else(|| logprob_flag(r)),
                    _ => Some(FlagReason::MissingPayload),
                }
            } else if record.raw_scores.as_ref().map_or(false, |r| {
                r.m_c.is_some() && r.m_r.is_some() && !record.has_generative_bypass()
            }) {
                Some(FlagReason::NonFinite)
            } else if record.has_generative_bypass() {
                None
            } else {
                Some(FlagReason::MissingPayload)
            }
        }
    }
}
