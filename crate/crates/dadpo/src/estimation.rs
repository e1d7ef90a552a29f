//! Raw difficulty gaps from record payloads.
//!
//! The contrastive estimator scores each response by cosine similarity
//! between its text embedding and the image embedding; the generative
//! estimator scores it by the summed token log-likelihood under a frozen
//! reference model. In both cases the gap is chosen-minus-rejected, and a
//! larger gap means the pair is easier to tell apart.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{Category, EstimatorKind, EstimatorReport, PreferenceRecord};

/// Raw per-record estimator scores and gaps. Fields are `None` until the
/// corresponding estimator has run.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGap {
    pub id: String,
    pub category: Category,
    pub c_c: Option<f64>,
    pub c_r: Option<f64>,
    pub m_c: Option<f64>,
    pub m_r: Option<f64>,
    pub c_g: Option<f64>,
    pub m_g: Option<f64>,
    pub chosen_len: Option<usize>,
    pub rejected_len: Option<usize>,
}

impl RawGap {
    fn empty(record: &PreferenceRecord) -> RawGap {
        RawGap {
            id: record.id.clone(),
            category: record.category,
            c_c: None,
            c_r: None,
            m_c: None,
            m_r: None,
            c_g: None,
            m_g: None,
            chosen_len: None,
            rejected_len: None,
        }
    }

    /// Field-wise union of two fragments for the same record.
    pub fn merge(mut self, other: RawGap) -> RawGap {
        debug_assert_eq!(self.id, other.id);
        self.c_c = self.c_c.or(other.c_c);
        self.c_r = self.c_r.or(other.c_r);
        self.m_c = self.m_c.or(other.m_c);
        self.m_r = self.m_r.or(other.m_r);
        self.c_g = self.c_g.or(other.c_g);
        self.m_g = self.m_g.or(other.m_g);
        self.chosen_len = self.chosen_len.or(other.chosen_len);
        self.rejected_len = self.rejected_len.or(other.rejected_len);
        self
    }

    pub fn gap_for(&self, estimator: EstimatorKind) -> Option<f64> {
        match estimator {
            EstimatorKind::Contrastive => self.c_g,
            EstimatorKind::Generative => self.m_g,
        }
    }
}

/// Compensated (Kahan) summation; the result is independent of summand
/// order up to a few ulps even for very long sequences.
pub(crate) fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut compensation = 0.0;
    for value in values {
        let y = value - compensation;
        let t = sum + y;
        compensation = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Cosine similarity `a·b / (‖a‖‖b‖)` in [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            id: String::new(),
            left: a.len(),
            right: b.len(),
        });
    }
    let dot = kahan_sum(a.iter().zip(b).map(|(x, y)| x * y));
    let norm_a = kahan_sum(a.iter().map(|x| x * x)).sqrt();
    let norm_b = kahan_sum(b.iter().map(|x| x * x)).sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(Error::ZeroNormVector { id: String::new() });
    }
    Ok(dot / (norm_a * norm_b))
}

/// Contrastive scores and gap for one record: `c_g = c_c - c_r` with
/// `c_c = CosSim(f_c, v_m)` and `c_r = CosSim(f_r, v_m)`. Pre-supplied raw
/// scores are used verbatim when the embedding triple is absent.
pub fn contrastive_gap(record: &PreferenceRecord) -> Result<RawGap> {
    let mut gap = RawGap::empty(record);
    let (c_c, c_r) = if record.has_embedding_triple() {
        let image = record.image_embedding.as_deref().unwrap();
        let chosen = record.chosen_text_embedding.as_deref().unwrap();
        let rejected = record.rejected_text_embedding.as_deref().unwrap();
        let c_c = cosine_similarity(chosen, image).map_err(|e| e.with_id(&record.id))?;
        let c_r = cosine_similarity(rejected, image).map_err(|e| e.with_id(&record.id))?;
        (c_c, c_r)
    } else if record.has_contrastive_bypass() {
        let raw = record.raw_scores.as_ref().unwrap();
        (raw.c_c.unwrap(), raw.c_r.unwrap())
    } else {
        return Err(Error::MissingPayload {
            id: record.id.clone(),
            estimator: EstimatorKind::Contrastive,
        });
    };
    gap.c_c = Some(c_c);
    gap.c_r = Some(c_r);
    gap.c_g = Some(c_c - c_r);
    Ok(gap)
}

/// Total sequence log-likelihood: the sum of per-token log-probabilities.
///
/// Uses compensated summation so the result is deterministic regardless of
/// how a producer ordered its accumulation.
pub fn generative_score(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::EmptySequence { id: String::new() });
    }
    for (index, &lp) in token_logprobs.iter().enumerate() {
        if lp.is_nan() || lp > 0.0 {
            return Err(Error::PositiveLogProb {
                id: String::new(),
                index,
                value: lp,
            });
        }
        if !lp.is_finite() {
            return Err(Error::NonFiniteInput {
                context: format!("log-probability at index {index}"),
            });
        }
    }
    Ok(kahan_sum(token_logprobs.iter().copied()))
}

/// Generative scores and gap for one record: `m_g = m_c - m_r` with each
/// side the summed log-likelihood of the response. Records token counts.
pub fn generative_gap(record: &PreferenceRecord) -> Result<RawGap> {
    let mut gap = RawGap::empty(record);
    if record.has_logprob_payload() {
        let chosen = record.chosen_token_logprobs.as_deref().unwrap();
        let rejected = record.rejected_token_logprobs.as_deref().unwrap();
        let m_c = generative_score(chosen).map_err(|e| e.with_id(&record.id))?;
        let m_r = generative_score(rejected).map_err(|e| e.with_id(&record.id))?;
        gap.m_c = Some(m_c);
        gap.m_r = Some(m_r);
        gap.m_g = Some(m_c - m_r);
        gap.chosen_len = Some(chosen.len());
        gap.rejected_len = Some(rejected.len());
    } else if record.has_generative_bypass() {
        let raw = record.raw_scores.as_ref().unwrap();
        let (m_c, m_r) = (raw.m_c.unwrap(), raw.m_r.unwrap());
        gap.m_c = Some(m_c);
        gap.m_r = Some(m_r);
        gap.m_g = Some(m_c - m_r);
    } else {
        return Err(Error::MissingPayload {
            id: record.id.clone(),
            estimator: EstimatorKind::Generative,
        });
    }
    Ok(gap)
}

/// Length-controlled generative gap: `m_g = m_c/T_c - m_r/T_r`, dividing
/// each side by its token count to mitigate length bias. Unavailable in
/// raw-score bypass mode because the lengths are unknown.
pub fn length_controlled_gap(record: &PreferenceRecord) -> Result<RawGap> {
    if !record.has_logprob_payload() {
        if record.has_generative_bypass() {
            return Err(Error::LengthUnavailable {
                id: record.id.clone(),
            });
        }
        return Err(Error::MissingPayload {
            id: record.id.clone(),
            estimator: EstimatorKind::Generative,
        });
    }
    let mut gap = generative_gap(record)?;
    let (m_c, m_r) = (gap.m_c.unwrap(), gap.m_r.unwrap());
    let (t_c, t_r) = (gap.chosen_len.unwrap() as f64, gap.rejected_len.unwrap() as f64);
    gap.m_g = Some(m_c / t_c - m_r / t_r);
    Ok(gap)
}

/// Preference classification accuracy: the fraction of records whose gap is
/// strictly positive (the chosen response out-scored the rejected one).
/// A zero gap counts as incorrect.
pub fn classify_preferences(gaps: &[RawGap], estimator: EstimatorKind) -> Result<EstimatorReport> {
    let mut correct_total = 0usize;
    let mut n_evaluated = 0usize;
    let mut per_category_correct: BTreeMap<Category, usize> = BTreeMap::new();
    let mut per_category_n: BTreeMap<Category, usize> = BTreeMap::new();

    for gap in gaps {
        let Some(g) = gap.gap_for(estimator) else {
            continue;
        };
        n_evaluated += 1;
        *per_category_n.entry(gap.category).or_insert(0) += 1;
        if g > 0.0 {
            correct_total += 1;
            *per_category_correct.entry(gap.category).or_insert(0) += 1;
        }
    }

    if n_evaluated == 0 {
        return Err(Error::NoUsableRecords { estimator });
    }

    let per_category_accuracy = per_category_n
        .iter()
        .map(|(&category, &n)| {
            let correct = per_category_correct.get(&category).copied().unwrap_or(0);
            (category, correct as f64 / n as f64)
        })
        .collect();

    Ok(EstimatorReport {
        estimator,
        overall_accuracy: correct_total as f64 / n_evaluated as f64,
        per_category_accuracy,
        per_category_n,
        n_evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RawScores;

    const COS_123_456: f64 = 0.974_631_846_197_076_3;

    fn triple(id: &str, f_c: Vec<f64>, f_r: Vec<f64>, v_m: Vec<f64>) -> PreferenceRecord {
        let mut r = PreferenceRecord::new(id, Category::Vqa);
        r.chosen_text_embedding = Some(f_c);
        r.rejected_text_embedding = Some(f_r);
        r.image_embedding = Some(v_m);
        r
    }

    #[test]
    fn cosine_identical_unit_vectors() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn cosine_orthogonal() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_hand_computed() {
        // 32 / (sqrt(14) * sqrt(77)), checked against independent numerics.
        let got = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - COS_123_456).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn cosine_rejects_zero_norm_and_mismatched_dims() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNormVector { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn contrastive_gap_aligned_vs_orthogonal() {
        let r = triple("t", vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]);
        let gap = contrastive_gap(&r).unwrap();
        assert_eq!(gap.c_g, Some(1.0));
    }

    #[test]
    fn contrastive_gap_identical_responses_is_zero() {
        let r = triple("t", vec![0.3, 0.4], vec![0.3, 0.4], vec![1.0, 2.0]);
        assert_eq!(contrastive_gap(&r).unwrap().c_g, Some(0.0));
    }

    #[test]
    fn contrastive_gap_bypass_uses_raw_scores_verbatim() {
        let mut r = PreferenceRecord::new("b", Category::Caption);
        r.raw_scores = Some(RawScores {
            c_c: Some(0.31),
            c_r: Some(0.27),
            ..RawScores::default()
        });
        let gap = contrastive_gap(&r).unwrap();
        assert!((gap.c_g.unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn generative_score_sums() {
        assert_eq!(generative_score(&[-0.5, -0.5, -1.0]).unwrap(), -2.0);
        assert_eq!(generative_score(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn generative_score_long_uniform_sequence() {
        // 50 * -0.1; compensated summation should land within one ulp of
        // the independently computed value.
        let seq = vec![-0.1; 50];
        let expected: f64 = -0.1 * 50.0;
        assert!((generative_score(&seq).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn generative_score_rejects_bad_input() {
        assert!(matches!(
            generative_score(&[]),
            Err(Error::EmptySequence { .. })
        ));
        match generative_score(&[-0.5, 0.1]) {
            Err(Error::PositiveLogProb { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn generative_gap_examples() {
        let mut r = PreferenceRecord::new("g", Category::Vqa);
        r.chosen_token_logprobs = Some(vec![-1.0, -1.0]);
        r.rejected_token_logprobs = Some(vec![-2.0, -2.0]);
        let gap = generative_gap(&r).unwrap();
        assert_eq!(gap.m_g, Some(2.0));
        assert_eq!(gap.chosen_len, Some(2));

        r.chosen_token_logprobs = Some(vec![-0.2, -0.3, -0.1]);
        r.rejected_token_logprobs = Some(vec![-0.9]);
        let gap = generative_gap(&r).unwrap();
        assert!((gap.m_g.unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn generative_gap_identical_sequences_is_zero() {
        let mut r = PreferenceRecord::new("g", Category::Vqa);
        r.chosen_token_logprobs = Some(vec![-0.3, -0.9]);
        r.rejected_token_logprobs = Some(vec![-0.3, -0.9]);
        assert_eq!(generative_gap(&r).unwrap().m_g, Some(0.0));
    }

    #[test]
    fn length_controlled_gap_uses_per_token_means() {
        let mut r = PreferenceRecord::new("lc", Category::Vqa);
        r.chosen_token_logprobs = Some(vec![-1.0, -1.0]);
        r.rejected_token_logprobs = Some(vec![-3.0]);
        assert!((length_controlled_gap(&r).unwrap().m_g.unwrap() - 2.0).abs() < 1e-12);

        r.chosen_token_logprobs = Some(vec![-0.6, -0.6, -0.6]);
        r.rejected_token_logprobs = Some(vec![-0.9]);
        assert!((length_controlled_gap(&r).unwrap().m_g.unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn length_controlled_gap_unavailable_in_bypass_mode() {
        let mut r = PreferenceRecord::new("lc", Category::Vqa);
        r.raw_scores = Some(RawScores {
            m_c: Some(-4.0),
            m_r: Some(-5.0),
            ..RawScores::default()
        });
        assert!(matches!(
            length_controlled_gap(&r),
            Err(Error::LengthUnavailable { .. })
        ));
    }

    fn gap_only(id: &str, category: Category, c_g: f64) -> RawGap {
        RawGap {
            id: id.into(),
            category,
            c_c: None,
            c_r: None,
            m_c: None,
            m_r: None,
            c_g: Some(c_g),
            m_g: None,
            chosen_len: None,
            rejected_len: None,
        }
    }

    #[test]
    fn classification_counts_strict_positives() {
        let gaps = vec![
            gap_only("a", Category::Vqa, 0.2),
            gap_only("b", Category::Vqa, -0.1),
            gap_only("c", Category::Caption, 0.3),
        ];
        let report = classify_preferences(&gaps, EstimatorKind::Contrastive).unwrap();
        assert!((report.overall_accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.n_evaluated, 3);
        assert_eq!(report.per_category_accuracy[&Category::Vqa], 0.5);
        assert_eq!(report.per_category_accuracy[&Category::Caption], 1.0);
    }

    #[test]
    fn zero_gap_counts_as_incorrect() {
        let gaps = vec![gap_only("a", Category::Vqa, 0.0)];
        let report = classify_preferences(&gaps, EstimatorKind::Contrastive).unwrap();
        assert_eq!(report.overall_accuracy, 0.0);
    }

    #[test]
    fn overall_accuracy_is_payload_weighted_category_mean() {
        let gaps = vec![
            gap_only("a", Category::Vqa, 0.2),
            gap_only("b", Category::Vqa, -0.1),
            gap_only("c", Category::Vqa, 0.4),
            gap_only("d", Category::Caption, 0.3),
        ];
        let report = classify_preferences(&gaps, EstimatorKind::Contrastive).unwrap();
        let weighted: f64 = report
            .per_category_accuracy
            .iter()
            .map(|(cat, acc)| acc * report.per_category_n[cat] as f64)
            .sum::<f64>()
            / report.n_evaluated as f64;
        assert!((report.overall_accuracy - weighted).abs() < 1e-9);
    }

    #[test]
    fn no_usable_records_is_an_error() {
        let gaps = vec![gap_only("a", Category::Vqa, 0.2)];
        assert!(matches!(
            classify_preferences(&gaps, EstimatorKind::Generative),
            Err(Error::NoUsableRecords { .. })
        ));
    }

    #[test]
    fn antisymmetry_under_swap() {
        let r = triple("s", vec![0.9, 0.1, 0.2], vec![0.1, 0.8, 0.3], vec![1.0, 0.5, 0.25]);
        let forward = contrastive_gap(&r).unwrap().c_g.unwrap();
        let mut swapped = r.clone();
        std::mem::swap(
            &mut swapped.chosen_text_embedding,
            &mut swapped.rejected_text_embedding,
        );
        let backward = contrastive_gap(&swapped).unwrap().c_g.unwrap();
        assert_eq!(forward, -backward);
    }
}
