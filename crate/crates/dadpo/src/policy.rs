//! Desk-scale categorical sequence policy.
//!
//! The policy is a conditional categorical model: a logit matrix indexed by
//! a bounded hash of the preceding token window. Small enough that every
//! gradient is hand-checkable, expressive enough to exhibit the easy-sample
//! overfitting dynamics the diagnostics measure.

use rand::Rng;

use crate::error::{Error, Result};

pub type Token = u32;

/// Conditional categorical policy `pi(token | state)` with
/// `state = hash(last w tokens) mod context_states`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    logits: Vec<f64>,
    context_states: usize,
    vocab_size: usize,
    window: usize,
}

impl ToyPolicy {
    /// Zero logits: the uniform distribution in every state.
    pub fn uniform(context_states: usize, vocab_size: usize, window: usize) -> ToyPolicy {
        ToyPolicy {
            logits: vec![0.0; context_states * vocab_size],
            context_states,
            vocab_size,
            window,
        }
    }

    /// Logits drawn i.i.d. from `Normal(0, scale)`.
    pub fn random<R: Rng>(
        context_states: usize,
        vocab_size: usize,
        window: usize,
        scale: f64,
        rng: &mut R,
    ) -> ToyPolicy {
        let mut policy = ToyPolicy::uniform(context_states, vocab_size, window);
        for logit in &mut policy.logits {
            // Box-Muller keeps the dependency surface small and the stream
            // stable across rand versions.
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            *logit = scale * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
        policy
    }

    pub fn context_states(&self) -> usize {
        self.context_states
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Row-major `[context_states x vocab_size]` logit matrix.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Applies one SGD step: `logits -= learning_rate * grad`.
    pub fn apply_gradient(&mut self, grad: &[f64], learning_rate: f64) {
        debug_assert_eq!(grad.len(), self.logits.len());
        for (logit, g) in self.logits.iter_mut().zip(grad) {
            *logit -= learning_rate * g;
        }
    }

    /// State index for the given history: an FNV-1a fold over the last
    /// `window` tokens, reduced modulo `context_states`. Stable across
    /// platforms and runs.
    pub fn state_for(&self, history: &[Token]) -> usize {
        let start = history.len().saturating_sub(self.window);
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for &token in &history[start..] {
            hash ^= u64::from(token) + 1;
            hash = hash.wrapping_mul(0x1_0000_0000_01b3);
        }
        (hash % self.context_states as u64) as usize
    }

    fn check_token(&self, token: Token) -> Result<()> {
        if (token as usize) < self.vocab_size {
            Ok(())
        } else {
            Err(Error::UnknownToken {
                token,
                vocab_size: self.vocab_size,
            })
        }
    }

    fn row(&self, state: usize) -> &[f64] {
        &self.logits[state * self.vocab_size..(state + 1) * self.vocab_size]
    }

    /// `log softmax(logits[state])[token]`, computed against a shifted
    /// log-sum-exp for stability.
    fn token_logprob(&self, state: usize, token: Token) -> f64 {
        let row = self.row(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        row[token as usize] - lse
    }

    /// Probability distribution over the vocabulary in one state.
    pub fn distribution(&self, state: usize) -> Vec<f64> {
        let row = self.row(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Total log-likelihood of a token sequence: the sum over positions of
    /// `log pi(token_t | state_t)`, where each state is hashed from the
    /// preceding window.
    pub fn sequence_logprob(&self, tokens: &[Token]) -> Result<f64> {
        self.scored_logprob(&[], tokens)
    }

    /// Log-likelihood of `response` given `prompt`: prompt tokens condition
    /// the state but contribute no summands.
    pub fn response_logprob(&self, prompt: &[Token], response: &[Token]) -> Result<f64> {
        if response.is_empty() {
            return Err(Error::EmptySequence { id: String::new() });
        }
        self.scored_logprob(prompt, response)
    }

    fn scored_logprob(&self, prompt: &[Token], response: &[Token]) -> Result<f64> {
        for &t in prompt.iter().chain(response) {
            self.check_token(t)?;
        }
        let mut history: Vec<Token> = prompt.to_vec();
        let mut total = 0.0;
        for &token in response {
            let state = self.state_for(&history);
            total += self.token_logprob(state, token);
            history.push(token);
        }
        Ok(total)
    }

    /// Adds `scale * d log pi(response | prompt) / d logits` into `grad`.
    ///
    /// For each response position with state `s` and token `v` the
    /// contribution to row `s` is `scale * (onehot(v) - softmax(row_s))`.
    pub fn accumulate_response_grad(
        &self,
        prompt: &[Token],
        response: &[Token],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        debug_assert_eq!(grad.len(), self.logits.len());
        for &t in prompt.iter().chain(response) {
            self.check_token(t)?;
        }
        let mut history: Vec<Token> = prompt.to_vec();
        for &token in response {
            let state = self.state_for(&history);
            let probs = self.distribution(state);
            let row = &mut grad[state * self.vocab_size..(state + 1) * self.vocab_size];
            for (g, p) in row.iter_mut().zip(&probs) {
                *g -= scale * p;
            }
            row[token as usize] += scale;
            history.push(token);
        }
        Ok(())
    }
}
