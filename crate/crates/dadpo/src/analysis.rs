//! Overfitting diagnostics: difficulty bucketing, the Area-Under-Gap metric
//! over reward trajectories, the easy-sample filtering baseline, and the
//! estimator correlation report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::average_ranks;
use crate::trainer::TrainingTrace;
use crate::types::{DifficultyScore, EstimatorKind};

/// Which score column orders the records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketBy {
    Contrastive,
    Generative,
    Fused,
}

/// Rank-quantile partition of a scored dataset. Bucket `k - 1` holds the
/// largest gaps, i.e. the easiest samples; bucket 0 the hardest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketAssignment {
    pub k: usize,
    /// Gap value at the lower edge of buckets `1..k`.
    pub edges: Vec<f64>,
    /// Bucket index per record, aligned with the input order.
    pub bucket_of: Vec<usize>,
}

impl BucketAssignment {
    pub fn bucket_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &b in &self.bucket_of {
            sizes[b] += 1;
        }
        sizes
    }
}

fn sort_key(score: &DifficultyScore, by: BucketBy) -> Result<f64> {
    let value = match by {
        BucketBy::Contrastive => score.c_g,
        BucketBy::Generative => score.m_g,
        BucketBy::Fused => Some(score.beta_hat),
    };
    value.ok_or_else(|| Error::MissingPayload {
        id: score.id.clone(),
        estimator: match by {
            BucketBy::Contrastive => EstimatorKind::Contrastive,
            _ => EstimatorKind::Generative,
        },
    })
}

/// Partitions records into `k` near-equal buckets by ascending gap rank.
///
/// Ties break by record id so the assignment is deterministic. When `n` is
/// not divisible by `k` the extra records go to the lowest-gap (hardest)
/// buckets.
pub fn bucketize(scores: &[DifficultyScore], by: BucketBy, k: usize) -> Result<BucketAssignment> {
    if k == 0 || scores.len() < k {
        return Err(Error::TooFewSamples {
            needed: k.max(1),
            got: scores.len(),
        });
    }
    let keys = scores
        .iter()
        .map(|s| sort_key(s, by))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .total_cmp(&keys[b])
            .then_with(|| scores[a].id.cmp(&scores[b].id))
    });

    let n = scores.len();
    let base = n / k;
    let remainder = n % k;
    let mut bucket_of = vec![0usize; n];
    let mut edges = Vec::with_capacity(k - 1);
    let mut cursor = 0;
    for bucket in 0..k {
        let size = base + usize::from(bucket < remainder);
        if bucket > 0 {
            edges.push(keys[order[cursor]]);
        }
        for &idx in &order[cursor..cursor + size] {
            bucket_of[idx] = bucket;
        }
        cursor += size;
    }

    Ok(BucketAssignment { k, edges, bucket_of })
}

/// Area-Under-Gap over one trace: the trapezoidal integral (over iteration
/// index) of the easiest-minus-hardest bucket reward.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugResult {
    pub aug: f64,
    /// `(iteration, gap)` per evaluation point.
    pub gap_series: Vec<(f64, f64)>,
    pub method: &'static str,
}

/// Integrates the reward gap between two buckets across training.
///
/// A larger value indicates a stronger optimization bias toward the easy
/// samples.
pub fn area_under_gap(
    trace: &TrainingTrace,
    easiest: usize,
    hardest: usize,
) -> Result<AugResult> {
    if trace.rows.len() < 2 {
        return Err(Error::TooFewEvaluations {
            got: trace.rows.len(),
        });
    }
    let gap_series: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .map(|row| {
            (
                row.iteration as f64,
                row.rewards[easiest] - row.rewards[hardest],
            )
        })
        .collect();
    let aug = trapezoid(&gap_series);
    Ok(AugResult {
        aug,
        gap_series,
        method: "trapezoid",
    })
}

/// Trapezoidal integral of `(x, y)` samples ordered by `x`.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Drops the `ceil(n * fraction)` records with the largest fused gap
/// component and returns the retained ids in their original order.
pub fn filter_easy(scores: &[DifficultyScore], fraction: f64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::FractionOutOfRange { value: fraction });
    }
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_remove = ((scores.len() as f64) * fraction).ceil() as usize;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Largest fused weight first; ties resolved by id.
    order.sort_by(|&a, &b| {
        scores[b]
            .beta_hat
            .total_cmp(&scores[a].beta_hat)
            .then_with(|| scores[a].id.cmp(&scores[b].id))
    });
    let mut removed = vec![false; scores.len()];
    for &idx in order.iter().take(n_remove) {
        removed[idx] = true;
    }

    Ok(scores
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(s, _)| s.id.clone())
        .collect())
}

/// Pearson and Spearman correlation between the two normalized gap columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub pearson: f64,
    pub spearman: f64,
    pub n: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(Error::DegenerateColumn { name: "c_g_hat" });
    }
    if var_y == 0.0 {
        return Err(Error::DegenerateColumn { name: "m_g_hat" });
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Correlation between the contrastive and generative normalized gaps.
/// Requires both columns on at least three records.
pub fn correlation_report(scores: &[DifficultyScore]) -> Result<CorrelationReport> {
    let pairs: Vec<(f64, f64)> = scores
        .iter()
        .filter_map(|s| Some((s.c_g_hat?, s.m_g_hat?)))
        .collect();
    if pairs.len() < 3 || pairs.len() != scores.len() {
        return Err(Error::InsufficientData {
            needed: 3.max(scores.len()),
            got: pairs.len(),
        });
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let pearson_r = pearson(&x, &y)?;
    let spearman_r = pearson(&average_ranks(&x), &average_ranks(&y))?;
    Ok(CorrelationReport {
        pearson: pearson_r,
        spearman: spearman_r,
        n: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{Objective, TraceRow};

    fn score(id: &str, gap: f64) -> DifficultyScore {
        DifficultyScore {
            id: id.into(),
            c_g: Some(gap),
            m_g: None,
            c_g_hat: None,
            m_g_hat: None,
            beta_hat: 1.0 + gap / 10.0,
        }
    }

    fn scores_with_gaps(gaps: &[f64]) -> Vec<DifficultyScore> {
        gaps.iter()
            .enumerate()
            .map(|(i, &g)| score(&format!("s{i:02}"), g))
            .collect()
    }

    #[test]
    fn eight_records_form_clean_quartiles() {
        let scores = scores_with_gaps(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let assignment = bucketize(&scores, BucketBy::Contrastive, 4).unwrap();
        assert_eq!(assignment.bucket_of, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(assignment.bucket_sizes(), vec![2, 2, 2, 2]);
        assert_eq!(assignment.edges, vec![3.0, 5.0, 7.0]);
    }

    #[test]
    fn remainder_goes_to_the_hardest_bucket() {
        let scores = scores_with_gaps(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let assignment = bucketize(&scores, BucketBy::Contrastive, 4).unwrap();
        assert_eq!(assignment.bucket_sizes(), vec![3, 2, 2, 2]);
        // The lowest-gap records absorb the extra slot.
        assert_eq!(assignment.bucket_of[0], 0);
        assert_eq!(assignment.bucket_of[2], 0);
        assert_eq!(assignment.bucket_of[8], 3);
    }

    #[test]
    fn ties_break_by_id() {
        let scores = scores_with_gaps(&[5.0, 5.0, 5.0, 5.0]);
        let assignment = bucketize(&scores, BucketBy::Contrastive, 4).unwrap();
        // Identical gaps: lexicographically smallest id lands in bucket 0.
        assert_eq!(assignment.bucket_of, vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_few_samples_is_rejected() {
        let scores = scores_with_gaps(&[1.0, 2.0]);
        assert!(matches!(
            bucketize(&scores, BucketBy::Contrastive, 4),
            Err(Error::TooFewSamples { .. })
        ));
    }

    fn trace_with(rewards_per_row: Vec<(usize, Vec<f64>)>) -> TrainingTrace {
        TrainingTrace {
            objective: Objective::Dpo,
            beta: 0.2,
            buckets: rewards_per_row[0].1.len(),
            rows: rewards_per_row
                .into_iter()
                .map(|(iteration, rewards)| TraceRow {
                    iteration,
                    loss: 0.5,
                    margins: vec![0.0; rewards.len()],
                    rewards,
                })
                .collect(),
        }
    }

    #[test]
    fn constant_gap_integrates_to_rectangle() {
        let trace = trace_with(vec![
            (0, vec![0.0, 3.0]),
            (5, vec![0.0, 3.0]),
            (10, vec![0.0, 3.0]),
        ]);
        let result = area_under_gap(&trace, 1, 0).unwrap();
        assert_eq!(result.aug, 30.0);
    }

    #[test]
    fn linear_gap_integrates_to_triangle() {
        let trace = trace_with(vec![(0, vec![0.0, 0.0]), (10, vec![0.0, 2.0])]);
        let result = area_under_gap(&trace, 1, 0).unwrap();
        assert_eq!(result.aug, 10.0);
    }

    #[test]
    fn coincident_series_integrate_to_zero() {
        let trace = trace_with(vec![(0, vec![1.0, 1.0]), (10, vec![4.0, 4.0])]);
        assert_eq!(area_under_gap(&trace, 1, 0).unwrap().aug, 0.0);
    }

    #[test]
    fn aug_matches_its_own_gap_series() {
        let trace = trace_with(vec![
            (0, vec![0.1, 0.4]),
            (3, vec![0.2, 0.9]),
            (9, vec![0.3, 1.1]),
        ]);
        let result = area_under_gap(&trace, 1, 0).unwrap();
        assert!((result.aug - trapezoid(&result.gap_series)).abs() < 1e-12);
    }

    #[test]
    fn single_row_trace_is_rejected() {
        let trace = trace_with(vec![(0, vec![0.0, 0.0])]);
        assert!(matches!(
            area_under_gap(&trace, 1, 0),
            Err(Error::TooFewEvaluations { got: 1 })
        ));
    }

    #[test]
    fn filter_keeps_exact_counts() {
        let scores = scores_with_gaps(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let retained = filter_easy(&scores, 0.1).unwrap();
        assert_eq!(retained.len(), 9);
    }

    #[test]
    fn filter_half_drops_the_largest_gaps() {
        let scores = scores_with_gaps(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let retained = filter_easy(&scores, 0.5).unwrap();
        assert_eq!(retained, vec!["s00", "s01", "s02", "s03", "s04"]);
    }

    #[test]
    fn filter_partitions_the_dataset() {
        let scores = scores_with_gaps(&[3.0, 1.0, 4.0, 1.5, 9.0, 2.6, 5.0]);
        let retained = filter_easy(&scores, 0.25).unwrap();
        let removed: Vec<&str> = scores
            .iter()
            .filter(|s| !retained.contains(&s.id))
            .map(|s| s.id.as_str())
            .collect();
        assert_eq!(retained.len() + removed.len(), scores.len());
        // ceil(7 * 0.25) = 2 removed, and they carry the largest gaps.
        assert_eq!(removed, vec!["s04", "s06"]);
    }

    #[test]
    fn filter_rejects_out_of_range_fractions() {
        let scores = scores_with_gaps(&[1.0, 2.0]);
        assert!(matches!(
            filter_easy(&scores, 0.0),
            Err(Error::FractionOutOfRange { .. })
        ));
        assert!(matches!(
            filter_easy(&scores, 1.0),
            Err(Error::FractionOutOfRange { .. })
        ));
    }

    fn scores_with_hats(pairs: &[(f64, f64)]) -> Vec<DifficultyScore> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(c, m))| DifficultyScore {
                id: format!("h{i:03}"),
                c_g: None,
                m_g: None,
                c_g_hat: Some(c),
                m_g_hat: Some(m),
                beta_hat: 1.5,
            })
            .collect()
    }

    #[test]
    fn identical_columns_correlate_perfectly() {
        let scores = scores_with_hats(&[(0.1, 0.1), (0.5, 0.5), (0.9, 0.9), (0.3, 0.3)]);
        let report = correlation_report(&scores).unwrap();
        assert!((report.pearson - 1.0).abs() < 1e-12);
        assert!((report.spearman - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mirrored_columns_correlate_negatively() {
        let scores = scores_with_hats(&[(0.1, 0.9), (0.5, 0.5), (0.9, 0.1), (0.3, 0.7)]);
        let report = correlation_report(&scores).unwrap();
        assert!((report.pearson + 1.0).abs() < 1e-12);
        assert!((report.spearman + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let scores = scores_with_hats(&[(0.5, 0.1), (0.5, 0.2), (0.5, 0.3)]);
        assert!(matches!(
            correlation_report(&scores),
            Err(Error::DegenerateColumn { name: "c_g_hat" })
        ));
    }

    #[test]
    fn missing_columns_are_insufficient() {
        let mut scores = scores_with_hats(&[(0.1, 0.2), (0.3, 0.4), (0.5, 0.6)]);
        scores[1].m_g_hat = None;
        assert!(matches!(
            correlation_report(&scores),
            Err(Error::InsufficientData { .. })
        ));
    }
}
