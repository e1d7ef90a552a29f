//! Deterministic synthetic preference datasets with planted difficulty.
//!
//! Easy records get a large chosen-vs-rejected score gap on both estimator
//! channels, hard records a small one, so the full pipeline can be verified
//! end to end without any real embedding or log-probability producer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Category, PreferenceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Vocabulary assumed by the surrogate tokenization downstream.
    pub vocab_size: usize,
    pub prompt_len: usize,
    /// Nominal response length; actual lengths jitter by up to
    /// `min(4, response_len - 1)` tokens per response.
    pub response_len: usize,
    pub easy_fraction: f64,
    /// Planted chosen-minus-rejected gap for easy records, in cosine units
    /// (and in per-token probability units on the generative channel).
    pub easy_gap_scale: f64,
    pub hard_gap_scale: f64,
    pub embedding_dim: usize,
    /// Standard deviation of the Gaussian perturbation applied to every
    /// planted target; zero makes the gaps exact.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 2000,
            vocab_size: 32,
            prompt_len: 4,
            response_len: 12,
            easy_fraction: 0.25,
            easy_gap_scale: 0.8,
            hard_gap_scale: 0.1,
            embedding_dim: 16,
            noise_sigma: 0.05,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut reason = None;
        if self.n_samples == 0 {
            reason = Some("n_samples must be at least 1".to_string());
        } else if self.prompt_len == 0 || self.response_len == 0 {
            reason = Some("prompt_len and response_len must be at least 1".to_string());
        } else if !(0.0..=1.0).contains(&self.easy_fraction) {
            reason = Some(format!("easy_fraction {} outside [0, 1]", self.easy_fraction));
        } else if !(self.easy_gap_scale > self.hard_gap_scale && self.hard_gap_scale > 0.0) {
            reason = Some("need easy_gap_scale > hard_gap_scale > 0".to_string());
        } else if self.easy_gap_scale > 0.95 {
            reason = Some("easy_gap_scale above 0.95 cannot be planted as a cosine gap".to_string());
        } else if self.embedding_dim < 2 {
            reason = Some("embedding_dim must be at least 2".to_string());
        } else if !(self.noise_sigma >= 0.0) {
            reason = Some(format!("noise_sigma {} must be non-negative", self.noise_sigma));
        } else if self.vocab_size == 0 {
            reason = Some("vocab_size must be at least 1".to_string());
        }
        match reason {
            Some(reason) => Err(Error::InvalidConfig { reason }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyLabel {
    Easy,
    Hard,
}

/// A generated record plus its hidden ground truth, used by test oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedRecord {
    pub record: PreferenceRecord,
    pub label: DifficultyLabel,
    pub planted_gap: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng, 1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Unit vector orthogonal to `base` (Gram-Schmidt of a random draw).
fn random_orthogonal_unit(rng: &mut ChaCha8Rng, base: &[f64]) -> Vec<f64> {
    loop {
        let candidate = random_unit_vector(rng, base.len());
        let dot: f64 = candidate.iter().zip(base).map(|(a, b)| a * b).sum();
        let mut v: Vec<f64> = candidate
            .iter()
            .zip(base)
            .map(|(c, b)| c - dot * b)
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for x in &mut v {
                *x /= norm;
            }
            return v;
        }
    }
}

/// Embedding at an exact cosine `target` from `base`, rotated inside the
/// plane spanned by `base` and `lateral`.
fn embedding_at_cosine(base: &[f64], lateral: &[f64], target: f64) -> Vec<f64> {
    let sine = (1.0 - target * target).max(0.0).sqrt();
    base.iter()
        .zip(lateral)
        .map(|(b, l)| target * b + sine * l)
        .collect()
}

fn response_logprobs(
    rng: &mut ChaCha8Rng,
    len: usize,
    target_p: f64,
    noise_sigma: f64,
) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let p = (target_p + gaussian(rng, noise_sigma)).clamp(0.02, 0.98);
            p.ln()
        })
        .collect()
}

/// Generates the planted dataset. Deterministic given the config: the same
/// seed always yields byte-identical records.
///
/// Easy records receive a chosen embedding close to the image embedding and
/// a rejected one far from it (cosine gap ~ `easy_gap_scale`), plus chosen
/// token probabilities near `0.5 + gap/2` against rejected ones near
/// `0.5 - gap/2`. Hard records follow the same construction at
/// `hard_gap_scale`.
pub fn generate(config: &SynthConfig) -> Result<Vec<PlantedRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_easy = ((config.n_samples as f64) * config.easy_fraction).round() as usize;
    let len_jitter = config.response_len.saturating_sub(1).min(4);

    let mut records = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let easy = i < n_easy;
        let gap = if easy {
            config.easy_gap_scale
        } else {
            config.hard_gap_scale
        };
        let label = if easy {
            DifficultyLabel::Easy
        } else {
            DifficultyLabel::Hard
        };

        let mut record = PreferenceRecord::new(
            format!("synth-{i:05}"),
            Category::ALL[i % Category::ALL.len()],
        );

        let image = random_unit_vector(&mut rng, config.embedding_dim);
        let lateral = random_orthogonal_unit(&mut rng, &image);
        let c_c = (0.5 + gap / 2.0 + gaussian(&mut rng, config.noise_sigma)).clamp(-0.999, 0.999);
        let c_r = (0.5 - gap / 2.0 + gaussian(&mut rng, config.noise_sigma)).clamp(-0.999, 0.999);
        record.chosen_text_embedding = Some(embedding_at_cosine(&image, &lateral, c_c));
        record.rejected_text_embedding = Some(embedding_at_cosine(&image, &lateral, c_r));
        record.image_embedding = Some(image);

        let chosen_len = config.response_len - len_jitter + rng.gen_range(0..=2 * len_jitter);
        let rejected_len = config.response_len - len_jitter + rng.gen_range(0..=2 * len_jitter);
        record.chosen_token_logprobs = Some(response_logprobs(
            &mut rng,
            chosen_len,
            0.5 + gap / 2.0,
            config.noise_sigma,
        ));
        record.rejected_token_logprobs = Some(response_logprobs(
            &mut rng,
            rejected_len,
            0.5 - gap / 2.0,
            config.noise_sigma,
        ));

        records.push(PlantedRecord {
            record,
            label,
            planted_gap: gap,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::contrastive_gap;

    #[test]
    fn zero_noise_plants_exact_contrastive_gaps() {
        let config = SynthConfig {
            n_samples: 24,
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        for planted in generate(&config).unwrap() {
            let gap = contrastive_gap(&planted.record).unwrap().c_g.unwrap();
            assert!(
                (gap - planted.planted_gap).abs() < 1e-6,
                "planted {} measured {gap}",
                planted.planted_gap
            );
        }
    }

    #[test]
    fn easy_fraction_one_labels_everything_easy() {
        let config = SynthConfig {
            n_samples: 10,
            easy_fraction: 1.0,
            ..SynthConfig::default()
        };
        let records = generate(&config).unwrap();
        assert!(records.iter().all(|r| r.label == DifficultyLabel::Easy));
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SynthConfig {
            n_samples: 50,
            ..SynthConfig::default()
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a, b);
        let bytes_a = serde_json::to_string(&a.iter().map(|p| &p.record).collect::<Vec<_>>());
        let bytes_b = serde_json::to_string(&b.iter().map(|p| &p.record).collect::<Vec<_>>());
        assert_eq!(bytes_a.unwrap(), bytes_b.unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = SynthConfig::default();
        config.easy_gap_scale = 0.05; // below hard_gap_scale
        assert!(generate(&config).is_err());

        let mut config = SynthConfig::default();
        config.embedding_dim = 1;
        assert!(generate(&config).is_err());

        let mut config = SynthConfig::default();
        config.easy_fraction = 1.5;
        assert!(generate(&config).is_err());
    }

    #[test]
    fn logprobs_are_valid_probabilities() {
        let records = generate(&SynthConfig {
            n_samples: 40,
            ..SynthConfig::default()
        })
        .unwrap();
        for planted in records {
            for lp in planted.record.chosen_token_logprobs.as_deref().unwrap() {
                assert!(*lp <= 0.0 && lp.is_finite());
            }
        }
    }
}
