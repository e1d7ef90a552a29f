//! DPO and difficulty-aware DPO on the toy policy.
//!
//! The objective is `-log sigmoid(beta_hat * (r(x, y_c) - r(x, y_r)))`
//! averaged over a batch, where `r` is the Z-free implicit reward
//! `beta * (log pi_theta(y|x) - log pi_ref(y|x))`. The partition term of the
//! reparameterized reward cancels in the pairwise difference and is never
//! computed. With `beta_hat = 1` for every sample the objective is exactly
//! the standard DPO loss.
//!
//! Records carry no token sequences, only per-token reference
//! log-probabilities, so the trainer derives surrogate tokens by quantizing
//! each token's probability onto the vocabulary: `floor(exp(lp) * V)`. The
//! derived sequences preserve the distinguishability structure of the data
//! (high-probability chosen tokens land in a different vocabulary region
//! than low-probability rejected ones), which is all the toy policy needs.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{bucketize, BucketBy};
use crate::error::{Error, Result};
use crate::policy::{Token, ToyPolicy};
use crate::types::{DifficultyScore, PreferenceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Dpo,
    Dadpo,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Objective::Dpo => f.write_str("dpo"),
            Objective::Dadpo => f.write_str("dadpo"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Temperature of the implicit reward.
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub objective: Objective,
    /// When set, the CLI trains once per listed beta.
    pub beta_sweep: Option<Vec<f64>>,
    /// Number of evaluation checkpoints spread evenly over training.
    pub eval_checkpoints: usize,
    /// Difficulty buckets on the held-out split.
    pub buckets: usize,
    pub vocab_size: usize,
    pub context_states: usize,
    /// Token window hashed into the policy state.
    pub window: usize,
    /// Length of the surrogate prompt derived from each record id.
    pub prompt_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 0.2,
            learning_rate: 1.0,
            epochs: 3,
            batch_size: 32,
            seed: 0,
            objective: Objective::Dadpo,
            beta_sweep: None,
            eval_checkpoints: 20,
            buckets: 4,
            vocab_size: 32,
            context_states: 64,
            window: 2,
            prompt_len: 4,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let mut reason = None;
        if !(self.beta > 0.0) {
            reason = Some("beta must be positive");
        } else if !(self.learning_rate >= 0.0) {
            reason = Some("learning_rate must be non-negative");
        } else if self.batch_size == 0 {
            reason = Some("batch_size must be at least 1");
        } else if self.epochs == 0 {
            reason = Some("epochs must be at least 1");
        } else if self.vocab_size == 0 || self.context_states == 0 {
            reason = Some("policy shape must be non-zero");
        } else if self.buckets == 0 {
            reason = Some("buckets must be at least 1");
        } else if self.eval_checkpoints == 0 {
            reason = Some("eval_checkpoints must be at least 1");
        }
        match reason {
            Some(reason) => Err(Error::InvalidConfig {
                reason: reason.into(),
            }),
            None => Ok(()),
        }
    }
}

/// One training example: surrogate prompt/response tokens plus the fused
/// difficulty weight (1 for plain DPO).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub prompt: Vec<Token>,
    pub chosen: Vec<Token>,
    pub rejected: Vec<Token>,
    pub beta_hat: f64,
}

fn stable_id_hash(id: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in id.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x1_0000_0000_01b3);
    }
    hash
}

/// Quantizes per-token probabilities onto the vocabulary:
/// `token = min(floor(exp(lp) * vocab), vocab - 1)`.
pub fn surrogate_tokens(logprobs: &[f64], vocab_size: usize) -> Result<Vec<Token>> {
    if logprobs.is_empty() {
        return Err(Error::EmptySequence { id: String::new() });
    }
    logprobs
        .iter()
        .enumerate()
        .map(|(index, &lp)| {
            if lp.is_nan() || lp > 0.0 {
                return Err(Error::PositiveLogProb {
                    id: String::new(),
                    index,
                    value: lp,
                });
            }
            let p = lp.exp();
            Ok(((p * vocab_size as f64) as usize).min(vocab_size - 1) as Token)
        })
        .collect()
}

/// Builds the surrogate training example for one record. The prompt is a
/// deterministic function of `(seed, record id)` so identical runs see
/// identical data.
pub fn surrogate_example(
    record: &PreferenceRecord,
    beta_hat: f64,
    config: &TrainConfig,
) -> Result<TrainExample> {
    if !record.has_logprob_payload() {
        return Err(Error::MissingPayload {
            id: record.id.clone(),
            estimator: crate::types::EstimatorKind::Generative,
        });
    }
    let chosen = surrogate_tokens(record.chosen_token_logprobs.as_deref().unwrap(), config.vocab_size)
        .map_err(|e| e.with_id(&record.id))?;
    let rejected = surrogate_tokens(
        record.rejected_token_logprobs.as_deref().unwrap(),
        config.vocab_size,
    )
    .map_err(|e| e.with_id(&record.id))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ stable_id_hash(&record.id));
    let prompt = (0..config.prompt_len)
        .map(|_| rng.gen_range(0..config.vocab_size as Token))
        .collect();

    Ok(TrainExample {
        id: record.id.clone(),
        prompt,
        chosen,
        rejected,
        beta_hat,
    })
}

/// Z-free implicit reward
/// `beta * (log pi_policy(y|x) - log pi_ref(y|x))`, restricted to response
/// tokens: the prompt conditions the state but contributes no summands.
pub fn implicit_reward(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    prompt: &[Token],
    response: &[Token],
    beta: f64,
) -> Result<f64> {
    let lp_policy = policy.response_logprob(prompt, response)?;
    let lp_reference = reference.response_logprob(prompt, response)?;
    Ok(beta * (lp_policy - lp_reference))
}

/// `-log sigmoid(z)` via a numerically stable softplus.
fn neg_log_sigmoid(z: f64) -> f64 {
    let t = -z;
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn weighted_pairwise_loss(
    batch: &[TrainExample],
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    beta: f64,
    beta_hat_of: impl Fn(&TrainExample) -> f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grad = vec![0.0; policy.logits().len()];
    let mut loss = 0.0;
    let inv_batch = 1.0 / batch.len() as f64;
    for example in batch {
        let beta_hat = beta_hat_of(example);
        let r_c = implicit_reward(policy, reference, &example.prompt, &example.chosen, beta)?;
        let r_r = implicit_reward(policy, reference, &example.prompt, &example.rejected, beta)?;
        let weighted_margin = beta_hat * r_c - beta_hat * r_r;
        loss += neg_log_sigmoid(weighted_margin) * inv_batch;

        // d loss / d margin = -sigmoid(-margin); the reference terms are
        // constant in theta, so only the policy log-likelihoods contribute.
        let coeff = -sigmoid(-weighted_margin) * beta_hat * beta * inv_batch;
        policy.accumulate_response_grad(&example.prompt, &example.chosen, coeff, &mut grad)?;
        policy.accumulate_response_grad(&example.prompt, &example.rejected, -coeff, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Difficulty-aware DPO loss and its analytic gradient with respect to the
/// policy logits (row-major, same layout as [`ToyPolicy::logits`]).
pub fn dadpo_loss(
    batch: &[TrainExample],
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    weighted_pairwise_loss(batch, policy, reference, beta, |e| e.beta_hat)
}

/// Standard DPO loss and gradient; per-sample weights are ignored.
pub fn dpo_loss(
    batch: &[TrainExample],
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    weighted_pairwise_loss(batch, policy, reference, beta, |_| 1.0)
}

/// Unweighted reward margin `r(x, y_c) - r(x, y_r)` for one example, plus
/// its gradient with respect to the policy logits.
pub fn margin_and_gradient(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    example: &TrainExample,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let r_c = implicit_reward(policy, reference, &example.prompt, &example.chosen, beta)?;
    let r_r = implicit_reward(policy, reference, &example.prompt, &example.rejected, beta)?;
    let mut grad = vec![0.0; policy.logits().len()];
    policy.accumulate_response_grad(&example.prompt, &example.chosen, beta, &mut grad)?;
    policy.accumulate_response_grad(&example.prompt, &example.rejected, -beta, &mut grad)?;
    Ok((r_c - r_r, grad))
}

/// Central finite differences on a random subset of logit coordinates
/// against the analytic gradient; returns the maximum relative error.
pub fn gradient_check(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    batch: &[TrainExample],
    beta: f64,
    epsilon: f64,
    n_coords: usize,
    seed: u64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidConfig {
            reason: format!("epsilon {epsilon} outside [1e-7, 1e-3]"),
        });
    }
    let (_, analytic) = dadpo_loss(batch, policy, reference, beta)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = policy.logits().len();
    let mut max_rel_err = 0.0f64;
    for _ in 0..n_coords.max(50) {
        let coord = rng.gen_range(0..total);
        let mut perturbed = policy.clone();
        perturbed.logits_mut()[coord] += epsilon;
        let (loss_plus, _) = dadpo_loss(batch, &perturbed, reference, beta)?;
        perturbed.logits_mut()[coord] -= 2.0 * epsilon;
        let (loss_minus, _) = dadpo_loss(batch, &perturbed, reference, beta)?;
        let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
        let denom = analytic[coord].abs().max(numeric.abs()).max(1e-6);
        max_rel_err = max_rel_err.max((analytic[coord] - numeric).abs() / denom);
    }
    Ok(max_rel_err)
}

/// One evaluation checkpoint: per-bucket mean implicit reward of the chosen
/// response and per-bucket mean reward margin on the held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub rewards: Vec<f64>,
    pub margins: Vec<f64>,
}

/// Reward trajectory of one training run. Bucket `buckets - 1` holds the
/// largest difficulty gaps, i.e. the easiest samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub objective: Objective,
    pub beta: f64,
    pub buckets: usize,
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn easiest_bucket(&self) -> usize {
        self.buckets - 1
    }

    pub fn hardest_bucket(&self) -> usize {
        0
    }
}

struct EvalSet {
    examples: Vec<TrainExample>,
    bucket_of: Vec<usize>,
    bucket_sizes: Vec<usize>,
    /// Frozen reference log-probabilities, precomputed once.
    ref_chosen: Vec<f64>,
    ref_rejected: Vec<f64>,
}

impl EvalSet {
    fn evaluate(&self, policy: &ToyPolicy, beta: f64, buckets: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rewards = vec![0.0; buckets];
        let mut margins = vec![0.0; buckets];
        for (i, example) in self.examples.iter().enumerate() {
            let lp_c = policy.response_logprob(&example.prompt, &example.chosen)?;
            let lp_r = policy.response_logprob(&example.prompt, &example.rejected)?;
            let r_c = beta * (lp_c - self.ref_chosen[i]);
            let r_r = beta * (lp_r - self.ref_rejected[i]);
            let bucket = self.bucket_of[i];
            rewards[bucket] += r_c;
            margins[bucket] += r_c - r_r;
        }
        for bucket in 0..buckets {
            let n = self.bucket_sizes[bucket].max(1) as f64;
            rewards[bucket] /= n;
            margins[bucket] /= n;
        }
        Ok((rewards, margins))
    }
}

/// Trains the toy policy with SGD on the requested objective.
///
/// Deterministic given the seed: fixed shuffle, fixed batch order,
/// single-threaded updates. The dataset is shuffled once, split
/// `split : 1 - split` into train and held-out validation, and the
/// validation samples are bucketed by fused difficulty. The held-out
/// rewards are evaluated at `eval_checkpoints` evenly spaced points plus
/// the initial state.
pub fn train(
    records: &[PreferenceRecord],
    scores: &[DifficultyScore],
    split: f64,
    config: &TrainConfig,
) -> Result<(ToyPolicy, TrainingTrace)> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::FractionOutOfRange { value: split });
    }

    let score_by_id: HashMap<&str, &DifficultyScore> =
        scores.iter().map(|s| (s.id.as_str(), s)).collect();

    let examples: Vec<TrainExample> = records
        .iter()
        .map(|record| {
            let score = score_by_id
                .get(record.id.as_str())
                .ok_or_else(|| Error::MissingDifficultyScores {
                    id: record.id.clone(),
                })?;
            surrogate_example(record, score.beta_hat, config)
        })
        .collect::<Result<_>>()?;
    if config.objective == Objective::Dpo {
        log::info!("objective is dpo: per-sample difficulty weights are ignored");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);

    let train_n = ((examples.len() as f64) * split).floor() as usize;
    let val_n = examples.len() - train_n;
    if train_n == 0 || val_n == 0 {
        return Err(Error::InvalidConfig {
            reason: format!(
                "split {split} leaves {train_n} training / {val_n} validation samples"
            ),
        });
    }
    let train_idx = &order[..train_n];
    let val_idx = &order[train_n..];

    // Bucket the validation samples by fused difficulty.
    let val_scores: Vec<DifficultyScore> = val_idx
        .iter()
        .map(|&i| (*score_by_id[examples[i].id.as_str()]).clone())
        .collect();
    let assignment = bucketize(&val_scores, BucketBy::Fused, config.buckets)?;

    let reference = ToyPolicy::uniform(config.context_states, config.vocab_size, config.window);
    let mut policy = reference.clone();

    let val_examples: Vec<TrainExample> = val_idx.iter().map(|&i| examples[i].clone()).collect();
    let mut bucket_sizes = vec![0usize; config.buckets];
    for &b in &assignment.bucket_of {
        bucket_sizes[b] += 1;
    }
    let eval_set = EvalSet {
        ref_chosen: val_examples
            .iter()
            .map(|e| reference.response_logprob(&e.prompt, &e.chosen))
            .collect::<Result<_>>()?,
        ref_rejected: val_examples
            .iter()
            .map(|e| reference.response_logprob(&e.prompt, &e.rejected))
            .collect::<Result<_>>()?,
        bucket_of: assignment.bucket_of.clone(),
        bucket_sizes,
        examples: val_examples,
    };

    let batches_per_epoch = train_n.div_ceil(config.batch_size);
    let total_updates = batches_per_epoch * config.epochs;
    let stride = (total_updates as f64 / config.eval_checkpoints as f64).max(1.0);
    let mut checkpoints: Vec<usize> = (1..=config.eval_checkpoints)
        .map(|j| ((j as f64 * stride).round() as usize).min(total_updates))
        .collect();
    checkpoints.dedup();

    let loss_fn = |batch: &[TrainExample], policy: &ToyPolicy| match config.objective {
        Objective::Dadpo => dadpo_loss(batch, policy, &reference, config.beta),
        Objective::Dpo => dpo_loss(batch, policy, &reference, config.beta),
    };

    let mut rows = Vec::with_capacity(checkpoints.len() + 1);
    let train_examples: Vec<TrainExample> =
        train_idx.iter().map(|&i| examples[i].clone()).collect();

    // Initial checkpoint: full-set loss under the untouched policy.
    let (initial_loss, _) = loss_fn(&train_examples, &policy)?;
    let (rewards, margins) = eval_set.evaluate(&policy, config.beta, config.buckets)?;
    rows.push(TraceRow {
        iteration: 0,
        loss: initial_loss,
        rewards,
        margins,
    });

    let mut epoch_order: Vec<usize> = (0..train_n).collect();
    let mut update = 0usize;
    let mut losses_since_checkpoint = Vec::new();
    for _epoch in 0..config.epochs {
        epoch_order.shuffle(&mut rng);
        for batch_ids in epoch_order.chunks(config.batch_size) {
            let batch: Vec<TrainExample> = batch_ids
                .iter()
                .map(|&i| train_examples[i].clone())
                .collect();
            let (loss, grad) = loss_fn(&batch, &policy)?;
            policy.apply_gradient(&grad, config.learning_rate);
            update += 1;
            losses_since_checkpoint.push(loss);

            if checkpoints.contains(&update) {
                let mean_loss = losses_since_checkpoint.iter().sum::<f64>()
                    / losses_since_checkpoint.len() as f64;
                losses_since_checkpoint.clear();
                let (rewards, margins) = eval_set.evaluate(&policy, config.beta, config.buckets)?;
                rows.push(TraceRow {
                    iteration: update,
                    loss: mean_loss,
                    rewards,
                    margins,
                });
            }
        }
    }

    Ok((
        policy,
        TrainingTrace {
            objective: config.objective,
            beta: config.beta,
            buckets: config.buckets,
            rows,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Category;

    fn example(id: &str, chosen: Vec<Token>, rejected: Vec<Token>, beta_hat: f64) -> TrainExample {
        TrainExample {
            id: id.into(),
            prompt: vec![0, 1],
            chosen,
            rejected,
            beta_hat,
        }
    }

    fn random_policy(seed: u64) -> ToyPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ToyPolicy::random(16, 8, 2, 0.5, &mut rng)
    }

    fn random_batch(seed: u64, len: usize) -> Vec<TrainExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|i| {
                let gen = |rng: &mut ChaCha8Rng| {
                    let n = rng.gen_range(3..10);
                    (0..n).map(|_| rng.gen_range(0..8)).collect::<Vec<Token>>()
                };
                TrainExample {
                    id: format!("b{i}"),
                    prompt: gen(&mut rng),
                    chosen: gen(&mut rng),
                    rejected: gen(&mut rng),
                    beta_hat: rng.gen_range(1.0..2.0),
                }
            })
            .collect()
    }

    #[test]
    fn reward_is_zero_when_policy_equals_reference() {
        let policy = random_policy(1);
        let r = implicit_reward(&policy, &policy, &[1, 2], &[3, 4, 5], 0.2).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn reward_is_linear_in_beta() {
        let reference = random_policy(2);
        let mut policy = reference.clone();
        policy.logits_mut()[5] += 0.7;
        let r1 = implicit_reward(&policy, &reference, &[0], &[1, 2, 3], 0.1).unwrap();
        let r2 = implicit_reward(&policy, &reference, &[0], &[1, 2, 3], 0.2).unwrap();
        assert!((r2 - 2.0 * r1).abs() < 1e-12);
    }

    #[test]
    fn reward_matches_hand_softmax() {
        // 1-state 2-vocab policy, logits (1, 0) vs reference (0, 0),
        // response [0], beta 0.2:
        // 0.2 * (log softmax(1,0)[0] - log 0.5) = 0.0759770986083445.
        let reference = ToyPolicy::uniform(1, 2, 1);
        let mut policy = reference.clone();
        policy.logits_mut()[0] = 1.0;
        let r = implicit_reward(&policy, &reference, &[], &[0], 0.2).unwrap();
        assert!((r - 0.075_977_098_608_344_5).abs() < 1e-12);
    }

    #[test]
    fn loss_is_log_two_at_reference() {
        let policy = random_policy(3);
        let batch = vec![
            example("a", vec![1, 2], vec![3, 4], 1.7),
            example("b", vec![5], vec![6, 7, 0], 1.1),
        ];
        let (loss, _) = dadpo_loss(&batch, &policy, &policy, 0.2).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_freezes_loss_and_gradient() {
        let reference = random_policy(4);
        let policy = random_policy(5);
        let batch = vec![example("a", vec![1, 2, 3], vec![4, 5], 0.0)];
        let (loss, grad) = dadpo_loss(&batch, &policy, &reference, 0.2).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn unit_weights_reduce_to_dpo() {
        let reference = random_policy(6);
        let policy = random_policy(7);
        let mut batch = random_batch(8, 5);
        for e in &mut batch {
            e.beta_hat = 1.0;
        }
        let (weighted, _) = dadpo_loss(&batch, &policy, &reference, 0.2).unwrap();
        let (plain, _) = dpo_loss(&batch, &policy, &reference, 0.2).unwrap();
        assert!((weighted - plain).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let policy = random_policy(9);
        assert!(matches!(
            dadpo_loss(&[], &policy, &policy, 0.2),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn per_sample_gradient_factorizes_through_the_margin() {
        // grad = -beta_hat * sigmoid(-beta_hat * margin) * margin_grad.
        let reference = random_policy(10);
        let policy = random_policy(11);
        for beta_hat in [0.3, 1.0, 1.8] {
            let e = example("f", vec![1, 2, 3, 4], vec![5, 6], beta_hat);
            let (loss_margin, margin_grad) =
                margin_and_gradient(&policy, &reference, &e, 0.2).unwrap();
            let (_, grad) = dadpo_loss(&[e], &policy, &reference, 0.2).unwrap();
            let factor = -beta_hat * sigmoid(-beta_hat * loss_margin);
            for (g, mg) in grad.iter().zip(&margin_grad) {
                assert!((g - factor * mg).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_check_at_reference_point() {
        // policy == reference: every margin is zero, a smooth point.
        let policy = random_policy(12);
        let batch = random_batch(13, 4);
        let err = gradient_check(&policy, &policy, &batch, 0.2, 1e-5, 60, 99).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn gradient_check_away_from_reference() {
        let policy = random_policy(16);
        let reference = random_policy(17);
        let batch = random_batch(18, 4);
        let err = gradient_check(&policy, &reference, &batch, 0.2, 1e-5, 60, 99).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_zero_weight_batch_is_flat() {
        let policy = random_policy(19);
        let reference = random_policy(20);
        let mut batch = random_batch(21, 3);
        for e in &mut batch {
            e.beta_hat = 0.0;
        }
        let err = gradient_check(&policy, &reference, &batch, 0.2, 1e-5, 60, 7).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_rejects_bad_epsilon() {
        let policy = random_policy(14);
        let batch = random_batch(15, 2);
        assert!(gradient_check(&policy, &policy, &batch, 0.2, 1e-2, 60, 0).is_err());
    }

    fn planted_dataset(n: usize) -> (Vec<PreferenceRecord>, Vec<DifficultyScore>) {
        // Records whose chosen tokens are likelier than rejected ones, with
        // matching fused scores.
        let mut records = Vec::new();
        let mut scores = Vec::new();
        for i in 0..n {
            let easy = i % 2 == 0;
            let (p_c, p_r) = if easy { (0.9, 0.1) } else { (0.55, 0.45) };
            let mut r = PreferenceRecord::new(format!("p{i:03}"), Category::Vqa);
            r.chosen_token_logprobs = Some(vec![f64::ln(p_c); 6]);
            r.rejected_token_logprobs = Some(vec![f64::ln(p_r); 6]);
            records.push(r);
            scores.push(DifficultyScore {
                id: format!("p{i:03}"),
                c_g: None,
                m_g: Some(p_c - p_r),
                c_g_hat: None,
                m_g_hat: Some(if easy { 0.9 } else { 0.1 }),
                beta_hat: if easy { 1.9 } else { 1.1 },
            });
        }
        (records, scores)
    }

    #[test]
    fn zero_learning_rate_keeps_policy_at_reference() {
        let (records, scores) = planted_dataset(40);
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            eval_checkpoints: 5,
            buckets: 2,
            ..TrainConfig::default()
        };
        let (policy, trace) = train(&records, &scores, 0.8, &config).unwrap();
        let uniform = ToyPolicy::uniform(config.context_states, config.vocab_size, config.window);
        assert_eq!(policy.logits(), uniform.logits());
        for row in &trace.rows {
            assert!(row.rewards.iter().all(|r| *r == 0.0));
            assert!(row.margins.iter().all(|m| *m == 0.0));
        }
    }

    #[test]
    fn identical_seeds_produce_identical_traces() {
        let (records, scores) = planted_dataset(60);
        let config = TrainConfig {
            epochs: 2,
            eval_checkpoints: 6,
            buckets: 2,
            seed: 42,
            ..TrainConfig::default()
        };
        let (_, trace_a) = train(&records, &scores, 0.9, &config).unwrap();
        let (_, trace_b) = train(&records, &scores, 0.9, &config).unwrap();
        assert_eq!(trace_a, trace_b);
    }

    #[test]
    fn missing_scores_are_rejected() {
        let (records, mut scores) = planted_dataset(10);
        scores.pop();
        let config = TrainConfig::default();
        assert!(matches!(
            train(&records, &scores, 0.9, &config),
            Err(Error::MissingDifficultyScores { .. })
        ));
    }
}
