//! The skip policy: action distributions, action selection, per-episode
//! traces and the actor and critic losses.

mod rewards;

use std::f64::consts::{E, PI};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::flow_data::Label;
use crate::model::ActionSpace;
use crate::nn::{softplus, LogNormal, NodeId, Tape};

pub use rewards::{
    classification_reward, compute_rewards, sparsity_reward, terminal_sparsity_reward,
};

/// Largest skip a continuous sample can turn into. Samples beyond it (up to
/// infinity) saturate; any value this large already leaves every flow.
pub const MAX_ACTION: usize = 1 << 30;

#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    /// Log-probabilities of actions `1..=k`.
    Discrete { log_probs: Vec<f64> },
    Continuous(LogNormal),
}

impl ActionDistribution {
    /// Build the distribution from raw actor outputs: a softmax for the
    /// discrete space, softplus-activated `(μ, σ)` for the continuous one.
    pub fn from_raw(space: ActionSpace, raw: &[f64]) -> Result<Self> {
        if raw.len() != space.actor_outputs() {
            return Err(Error::DimensionMismatch {
                expected: space.actor_outputs(),
                got: raw.len(),
            });
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actor output".into()));
        }
        match space {
            ActionSpace::Continuous => Ok(ActionDistribution::Continuous(LogNormal::new(
                softplus(raw[0]),
                softplus(raw[1]),
            )?)),
            ActionSpace::Discrete(_) => {
                let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + raw.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                Ok(ActionDistribution::Discrete {
                    log_probs: raw.iter().map(|v| v - lse).collect(),
                })
            }
        }
    }

    pub fn probabilities(&self) -> Option<Vec<f64>> {
        match self {
            ActionDistribution::Discrete { log_probs } => {
                Some(log_probs.iter().map(|l| l.exp()).collect())
            }
            ActionDistribution::Continuous(_) => None,
        }
    }

    /// Shannon entropy (discrete) or differential entropy (continuous).
    pub fn entropy(&self) -> f64 {
        match self {
            ActionDistribution::Discrete { log_probs } => {
                -log_probs.iter().map(|l| l.exp() * l).sum::<f64>()
            }
            ActionDistribution::Continuous(d) => d.entropy(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    /// Sample from the distribution.
    Training,
    /// Distribution mean (continuous) or mode (discrete); draws no randomness.
    Deployment,
}

/// A selected action. `action = 1` consumes the very next packet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionChoice {
    pub action: usize,
    /// `ln x` of the raw continuous sample; `None` for discrete actions.
    pub log_sample: Option<f64>,
    /// Log-probability (discrete) or log-density of the raw sample.
    pub log_prob: f64,
}

/// `floor(x) + 1`, saturating at [`MAX_ACTION`].
pub fn discretize(x: f64) -> usize {
    if x.is_nan() || x < 0.0 {
        return 1;
    }
    if x >= MAX_ACTION as f64 {
        return MAX_ACTION + 1;
    }
    x.floor() as usize + 1
}

fn continuous_choice(d: &LogNormal, log_sample: f64) -> ActionChoice {
    ActionChoice {
        action: discretize(log_sample.exp()),
        log_sample: Some(log_sample),
        log_prob: lognormal_log_density_ln(d, log_sample),
    }
}

/// Log-density of a log-normal at `x = e^y`, written in terms of `y` so
/// that huge samples stay finite.
pub fn lognormal_log_density_ln(d: &LogNormal, y: f64) -> f64 {
    let z = (y - d.mu) / d.sigma;
    -y - d.sigma.ln() - 0.5 * (2.0 * PI).ln() - 0.5 * z * z
}

pub fn select_action(
    dist: &ActionDistribution,
    mode: ActionMode,
    rng: &mut impl Rng,
) -> Result<ActionChoice> {
    match (dist, mode) {
        (ActionDistribution::Continuous(d), ActionMode::Training) => {
            let z: f64 = rng.sample(StandardNormal);
            Ok(continuous_choice(d, d.mu + d.sigma * z))
        }
        (ActionDistribution::Continuous(d), ActionMode::Deployment) => {
            Ok(continuous_choice(d, d.mu + 0.5 * d.sigma * d.sigma))
        }
        (ActionDistribution::Discrete { log_probs }, ActionMode::Training) => {
            let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
            let idx = WeightedIndex::new(&probs)
                .map_err(|e| Error::invalid(format!("action distribution: {e}")))?
                .sample(rng);
            Ok(ActionChoice {
                action: idx + 1,
                log_sample: None,
                log_prob: log_probs[idx],
            })
        }
        (ActionDistribution::Discrete { log_probs }, ActionMode::Deployment) => {
            let mut best = 0;
            for (i, &l) in log_probs.iter().enumerate() {
                if l > log_probs[best] {
                    best = i;
                }
            }
            Ok(ActionChoice {
                action: best + 1,
                log_sample: None,
                log_prob: log_probs[best],
            })
        }
    }
}

/// Re-evaluate a recorded choice under a (possibly different) distribution.
pub fn replay_choice(dist: &ActionDistribution, action: usize, log_sample: Option<f64>) -> Result<ActionChoice> {
    match dist {
        ActionDistribution::Continuous(d) => {
            let y = log_sample.ok_or_else(|| Error::invalid("continuous replay needs the raw sample"))?;
            Ok(continuous_choice(d, y))
        }
        ActionDistribution::Discrete { log_probs } => {
            if action == 0 || action > log_probs.len() {
                return Err(Error::invalid(format!("action {action} outside 1..={}", log_probs.len())));
            }
            Ok(ActionChoice {
                action,
                log_sample: None,
                log_prob: log_probs[action - 1],
            })
        }
    }
}

/// Sparsity/accuracy tradeoff `alpha` and entropy weight `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TradeoffConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        TradeoffConfig {
            alpha: 0.5,
            beta: 0.01,
        }
    }
}

impl TradeoffConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) || !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "alpha and beta must be finite and non-negative, got {alpha} and {beta}"
            )));
        }
        Ok(TradeoffConfig { alpha, beta })
    }
}

/// Everything recorded about one consumed packet.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Position of the packet in the flow.
    pub index: usize,
    pub logit: f64,
    pub confidence: f64,
    /// Distance to the next consumed packet (or past the end of the flow).
    pub action: usize,
    pub log_sample: Option<f64>,
    pub log_prob: Option<f64>,
    pub entropy: Option<f64>,
    /// Critic estimates `(classification, sparsity)`.
    pub value: Option<[f64; 2]>,
    /// Rewards `(classification, sparsity)`; `None` for the final packet.
    pub reward: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub flow_len: usize,
    pub label: Label,
    pub steps: Vec<StepRecord>,
    /// `mask[i]` is true when packet `i` was consumed.
    pub mask: Vec<bool>,
}

impl EpisodeTrace {
    pub fn consumed(&self) -> usize {
        self.steps.len()
    }

    pub fn skipped(&self) -> usize {
        self.flow_len - self.steps.len()
    }

    pub fn sparsity(&self) -> f64 {
        self.skipped() as f64 / self.flow_len as f64
    }

    pub fn consumed_indices(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.index).collect()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.confidence).collect()
    }
}

/// `(r_cls + α r_sp) − (v_cls + α v_sp)`.
pub fn compute_utility(r_cls: f64, r_sp: f64, v_cls: f64, v_sp: f64, alpha: f64) -> f64 {
    (r_cls + alpha * r_sp) - (v_cls + alpha * v_sp)
}

fn step_utility(step: &StepRecord, alpha: f64) -> Option<f64> {
    let r = step.reward?;
    let v = step.value?;
    Some(compute_utility(r[0], r[1], v[0], v[1], alpha))
}

/// Sum of squared errors of the critic's two estimates over packets that
/// have rewards.
pub fn critic_loss(trace: &EpisodeTrace) -> f64 {
    trace
        .steps
        .iter()
        .filter_map(|s| {
            let r = s.reward?;
            let v = s.value?;
            Some((r[0] - v[0]).powi(2) + (r[1] - v[1]).powi(2))
        })
        .sum()
}

/// `Σ −log π(a|s)·U − β·H` over packets that have rewards.
pub fn actor_loss(trace: &EpisodeTrace, tradeoff: TradeoffConfig) -> f64 {
    trace
        .steps
        .iter()
        .filter_map(|s| {
            let u = step_utility(s, tradeoff.alpha)?;
            Some(actor_term(s.log_prob?, u, s.entropy?, tradeoff.beta))
        })
        .sum()
}

/// One packet's contribution to the actor loss.
pub fn actor_term(log_prob: f64, utility: f64, entropy: f64, beta: f64) -> f64 {
    -log_prob * utility - beta * entropy
}

/// Tape nodes for `log π(a|s)` and the entropy of the distribution built
/// from `actor_raw`.
pub fn policy_terms_tape(
    tape: &mut Tape<'_>,
    space: ActionSpace,
    actor_raw: NodeId,
    action: usize,
    log_sample: Option<f64>,
) -> Result<(NodeId, NodeId)> {
    match space {
        ActionSpace::Continuous => {
            let y = log_sample.ok_or_else(|| Error::invalid("continuous action without a sample"))?;
            let params = tape.softplus(actor_raw);
            let mu = tape.slice(params, 0, 1);
            let sigma = tape.slice(params, 1, 1);
            let neg_mu = tape.scale(mu, -1.0);
            let diff = tape.add_const(neg_mu, y);
            let diff2 = tape.square(diff);
            let var = tape.square(sigma);
            let ratio = tape.div(diff2, var);
            let quad = tape.scale(ratio, -0.5);
            let ln_sigma = tape.ln(sigma);
            let body = tape.sub(quad, ln_sigma);
            let log_prob = tape.add_const(body, -y - 0.5 * (2.0 * PI).ln());
            let h = tape.add(mu, ln_sigma);
            let entropy = tape.add_const(h, 0.5 * (2.0 * PI * E).ln());
            Ok((log_prob, entropy))
        }
        ActionSpace::Discrete(k) => {
            if action == 0 || action > k {
                return Err(Error::invalid(format!("action {action} outside 1..={k}")));
            }
            let ls = tape.log_softmax(actor_raw);
            let log_prob = tape.slice(ls, action - 1, 1);
            let p = tape.exp(ls);
            let plogp = tape.mul(p, ls);
            let s = tape.sum(plogp);
            let entropy = tape.scale(s, -1.0);
            Ok((log_prob, entropy))
        }
    }
}
