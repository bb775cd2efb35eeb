//! Bradley–Terry–Luce preference probabilities and stable log-likelihoods.
//!
//! The probability that the chosen response beats the rejected one is
//! `σ(r_chosen − r_rejected)`. All math is done in `f64`; margins produced by
//! trained models can be large enough to saturate single precision.

use crate::data::PreferenceRecord;
use crate::error::{Error, Result};

/// Rewards assigned to the two sides of a comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardPair {
    pub reward_chosen: f64,
    pub reward_rejected: f64,
}

impl RewardPair {
    pub fn new(reward_chosen: f64, reward_rejected: f64) -> Self {
        Self {
            reward_chosen,
            reward_rejected,
        }
    }

    pub fn margin(&self) -> f64 {
        self.reward_chosen - self.reward_rejected
    }
}

/// Log-probability of one comparison and its derivative in the margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub log_prob: f64,
    /// `d log σ(m) / dm = 1 − σ(m)`
    pub grad_wrt_margin: f64,
}

impl PairLoss {
    pub fn from_margin(margin: f64) -> Self {
        Self {
            log_prob: log_sigmoid(margin),
            grad_wrt_margin: sigmoid(-margin),
        }
    }
}

/// Logistic function, evaluated without overflow for either sign.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x) = −log(1 + e^{−x})`, split by sign so neither branch overflows.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn btl_probability(pair: RewardPair) -> Result<f64> {
    if !pair.reward_chosen.is_finite() || !pair.reward_rejected.is_finite() {
        return Err(Error::NonFinite("reward pair".into()));
    }
    Ok(sigmoid(pair.margin()))
}

/// Sum of `log σ(margin)` over a slice of records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    /// Set when the slice had no records; `value` is then 0.
    pub empty: bool,
}

/// Sums log-probabilities in record order, so the result does not depend on
/// how callers parallelize around it.
pub fn dataset_log_likelihood<F>(records: &[PreferenceRecord], mut reward_fn: F) -> LogLikelihood
where
    F: FnMut(&PreferenceRecord) -> RewardPair,
{
    let value = records
        .iter()
        .map(|r| log_sigmoid(reward_fn(r).margin()))
        .sum();
    LogLikelihood {
        value,
        empty: records.is_empty(),
    }
}
