//! Gap normalization and distribution-aware voting fusion.
//!
//! Raw gaps are projected onto [0, 1] — by default through the Gaussian CDF
//! of their dataset z-score — and combined into a per-sample weight
//! `beta_hat = w_c * c_hat + w_m * m_hat + stabilizer`, where the adaptive
//! weights are proportional to each estimator's preference classification
//! accuracy. The stabilizer (default 1) keeps the weight away from zero so
//! that training cannot collapse when both normalized gaps vanish.

mod erf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    classify_preferences, contrastive_gap, generative_gap, kahan_sum, length_controlled_gap,
    RawGap,
};
use crate::types::{
    DifficultyScore, EstimatorKind, EstimatorReport, FusionConfig, FusionMode, NormalizationMode,
    PreferenceRecord,
};

/// Dataset-level moments used by the Gaussian projection; persisting them
/// makes re-fusion reproducible without the original payloads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mu: f64,
    /// Population standard deviation (divide by n, not n-1): the dataset
    /// being normalized is the entire population of interest.
    pub sigma: f64,
    pub n: usize,
}

/// Standard Gaussian cumulative distribution function.
///
/// Computed as `erfc(-z / sqrt(2)) / 2`; the erfc port is accurate to about
/// one ulp on every branch, so the absolute error stays below 1e-12.
pub fn gaussian_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::NonFiniteInput {
            context: format!("gaussian_cdf({z})"),
        });
    }
    Ok(0.5 * erf::erfc(-z / std::f64::consts::SQRT_2))
}

/// Gaussian projection of a gap vector: each output is `Phi((g - mu) / sigma)`.
///
/// When every gap is identical the distribution is degenerate; all outputs
/// become the neutral 0.5 with a warning instead of an error so that
/// synthetic edge-case datasets stay trainable.
pub fn normalize_gaussian(gaps: &[f64]) -> Result<(Vec<f64>, NormalizationStats)> {
    if gaps.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: gaps.len(),
        });
    }
    if let Some(bad) = gaps.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFiniteInput {
            context: format!("gap value {bad}"),
        });
    }
    let n = gaps.len();
    let mu = kahan_sum(gaps.iter().copied()) / n as f64;
    let variance = kahan_sum(gaps.iter().map(|g| (g - mu) * (g - mu))) / n as f64;
    let sigma = variance.sqrt();
    let stats = NormalizationStats { mu, sigma, n };

    if sigma == 0.0 {
        log::warn!("all {n} gaps are identical; projecting every sample to the neutral 0.5");
        return Ok((vec![0.5; n], stats));
    }

    let normalized = gaps
        .iter()
        .map(|&g| gaussian_cdf((g - mu) / sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok((normalized, stats))
}

/// Mean 0-based rank per value; tied values share the mean of the positions
/// they occupy.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let mean_rank = (start + end - 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = mean_rank;
        }
        start = end;
    }
    ranks
}

/// Rank-based projection: the value with ascending rank `k` maps to
/// `k / (n - 1)`; ties share the mean of their rank positions.
pub fn normalize_ranked(gaps: &[f64]) -> Result<Vec<f64>> {
    if gaps.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: gaps.len(),
        });
    }
    if let Some(bad) = gaps.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFiniteInput {
            context: format!("gap value {bad}"),
        });
    }
    let denom = (gaps.len() - 1) as f64;
    Ok(average_ranks(gaps).into_iter().map(|r| r / denom).collect())
}

/// Accuracy-proportional voting weights `(w_c, w_m)` with `w_c + w_m = 1`.
pub fn adaptive_weights(cls_c: f64, cls_m: f64) -> Result<(f64, f64)> {
    check_unit_interval("cls_c", cls_c)?;
    check_unit_interval("cls_m", cls_m)?;
    if cls_c == 0.0 && cls_m == 0.0 {
        return Err(Error::BothAccuraciesZero);
    }
    let w_c = cls_c / (cls_c + cls_m);
    Ok((w_c, 1.0 - w_c))
}

fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) || value.is_nan() {
        return Err(Error::WeightOutOfRange { name, value });
    }
    Ok(())
}

/// Resolves the fusion weights for a config, given the observed accuracies.
pub fn fusion_weights(cls_c: f64, cls_m: f64, config: &FusionConfig) -> Result<(f64, f64)> {
    match config.mode {
        FusionMode::Adaptive => adaptive_weights(cls_c, cls_m),
        FusionMode::Fixed { w_c } => {
            check_unit_interval("w_c", w_c)?;
            Ok((w_c, 1.0 - w_c))
        }
    }
}

/// Fused difficulty weight `w_c * c_hat + w_m * m_hat + stabilizer`.
///
/// The convex combination is clamped to [0, 1] before the stabilizer is
/// added, so the result always lands in [stabilizer, stabilizer + 1]
/// regardless of rounding.
pub fn fuse(c_hat: f64, m_hat: f64, cls_c: f64, cls_m: f64, config: &FusionConfig) -> Result<f64> {
    check_unit_interval("c_hat", c_hat)?;
    check_unit_interval("m_hat", m_hat)?;
    let (w_c, w_m) = fusion_weights(cls_c, cls_m, config)?;
    let combined = (w_c * c_hat + w_m * m_hat).clamp(0.0, 1.0);
    Ok(combined + config.stabilizer)
}

/// Everything a scores file needs to reproduce fusion without the original
/// payloads: normalization stats, classification reports, and resolved
/// weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHeader {
    pub estimators: Vec<EstimatorKind>,
    pub normalization: NormalizationMode,
    pub stabilizer: f64,
    pub w_c: Option<f64>,
    pub w_m: Option<f64>,
    pub contrastive_stats: Option<NormalizationStats>,
    pub generative_stats: Option<NormalizationStats>,
    pub contrastive_report: Option<EstimatorReport>,
    pub generative_report: Option<EstimatorReport>,
}

/// Output of [`score_dataset`]: one score per input record (same order)
/// plus the header needed for reproducible re-fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    pub header: ScoreHeader,
    pub scores: Vec<DifficultyScore>,
}

impl ScoredDataset {
    /// Recomputes every `beta_hat` from the cached normalized gaps and
    /// header weights. Used to check idempotent persistence.
    pub fn refuse(&self) -> Result<Vec<f64>> {
        self.scores
            .iter()
            .map(|s| match (s.c_g_hat, s.m_g_hat) {
                (Some(c), Some(m)) => {
                    let (w_c, w_m) = (
                        self.header.w_c.expect("two-estimator header carries w_c"),
                        self.header.w_m.expect("two-estimator header carries w_m"),
                    );
                    Ok((w_c * c + w_m * m).clamp(0.0, 1.0) + self.header.stabilizer)
                }
                (Some(h), None) | (None, Some(h)) => Ok(h + self.header.stabilizer),
                (None, None) => Err(Error::MissingDifficultyScores { id: s.id.clone() }),
            })
            .collect()
    }
}

/// Runs the full difficulty pipeline: gap estimation, preference
/// classification, normalization, and fusion.
///
/// With both estimators requested, `beta_hat` is the voted combination;
/// with a single estimator it degenerates to that estimator's normalized
/// gap plus the stabilizer. Output order matches input order.
pub fn score_dataset(
    records: &[PreferenceRecord],
    estimators: &[EstimatorKind],
    config: &FusionConfig,
) -> Result<ScoredDataset> {
    if estimators.is_empty() {
        return Err(Error::InvalidConfig {
            reason: "no estimators requested".into(),
        });
    }
    let mut estimators = estimators.to_vec();
    estimators.sort();
    estimators.dedup();

    let summary = crate::types::validate_dataset(records, &estimators)?;
    if let Some(flag) = summary.flags.first() {
        return Err(Error::MissingPayload {
            id: flag.id.clone(),
            estimator: flag.estimator,
        });
    }

    let use_contrastive = estimators.contains(&EstimatorKind::Contrastive);
    let use_generative = estimators.contains(&EstimatorKind::Generative);

    let gaps: Vec<RawGap> = records
        .iter()
        .map(|record| {
            let mut gap = None;
            if use_contrastive {
                gap = Some(contrastive_gap(record)?);
            }
            if use_generative {
                let g = match config.normalization {
                    NormalizationMode::GaussianLengthControlled => length_controlled_gap(record)?,
                    _ => generative_gap(record)?,
                };
                gap = Some(match gap {
                    Some(existing) => existing.merge(g),
                    None => g,
                });
            }
            Ok(gap.expect("at least one estimator requested"))
        })
        .collect::<Result<_>>()?;

    let normalize = |values: &[f64]| -> Result<(Vec<f64>, Option<NormalizationStats>)> {
        match config.normalization {
            NormalizationMode::Gaussian | NormalizationMode::GaussianLengthControlled => {
                let (hats, stats) = normalize_gaussian(values)?;
                Ok((hats, Some(stats)))
            }
            NormalizationMode::RankBased => Ok((normalize_ranked(values)?, None)),
        }
    };

    let mut header = ScoreHeader {
        estimators: estimators.clone(),
        normalization: config.normalization,
        stabilizer: config.stabilizer,
        w_c: None,
        w_m: None,
        contrastive_stats: None,
        generative_stats: None,
        contrastive_report: None,
        generative_report: None,
    };

    let mut c_hats = None;
    let mut m_hats = None;
    if use_contrastive {
        let values: Vec<f64> = gaps.iter().map(|g| g.c_g.unwrap()).collect();
        let (hats, stats) = normalize(&values)?;
        header.contrastive_stats = stats;
        header.contrastive_report =
            Some(classify_preferences(&gaps, EstimatorKind::Contrastive)?);
        c_hats = Some(hats);
    }
    if use_generative {
        let values: Vec<f64> = gaps.iter().map(|g| g.m_g.unwrap()).collect();
        let (hats, stats) = normalize(&values)?;
        header.generative_stats = stats;
        header.generative_report = Some(classify_preferences(&gaps, EstimatorKind::Generative)?);
        m_hats = Some(hats);
    }

    if use_contrastive && use_generative {
        let cls_c = header.contrastive_report.as_ref().unwrap().overall_accuracy;
        let cls_m = header.generative_report.as_ref().unwrap().overall_accuracy;
        let (w_c, w_m) = fusion_weights(cls_c, cls_m, config)?;
        header.w_c = Some(w_c);
        header.w_m = Some(w_m);
    }

    let scores = gaps
        .iter()
        .enumerate()
        .map(|(i, gap)| {
            let c_hat = c_hats.as_ref().map(|h| h[i]);
            let m_hat = m_hats.as_ref().map(|h| h[i]);
            let beta_hat = match (c_hat, m_hat) {
                (Some(c), Some(m)) => {
                    let (w_c, w_m) = (header.w_c.unwrap(), header.w_m.unwrap());
                    (w_c * c + w_m * m).clamp(0.0, 1.0) + config.stabilizer
                }
                (Some(h), None) | (None, Some(h)) => h + config.stabilizer,
                (None, None) => unreachable!("at least one estimator requested"),
            };
            Ok(DifficultyScore {
                id: gap.id.clone(),
                c_g: gap.c_g,
                m_g: gap.m_g,
                c_g_hat: c_hat,
                m_g_hat: m_hat,
                beta_hat,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ScoredDataset { header, scores })
}
