//! Joint training of classifier, actor and critic on whole-flow episodes.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::classifier::{classifier_loss, classifier_loss_tape, flow_verdict};
use crate::error::{Error, Result};
use crate::flow_data::{compute_normalization, truncate_flows, FeatureEncoder, Flow, FlowDataset};
use crate::model::{ActionSpace, Model, ModelConfig, Topology};
use crate::nn::{AdamState, Gradients, NodeId, Tape};
use crate::rl_sampler::{
    actor_loss, compute_utility, critic_loss, policy_terms_tape, ActionMode, EpisodeTrace,
    TradeoffConfig,
};
use crate::rollout::{record_episode, RecordedEpisode, StepPolicy};

/// Flows between two training log records.
pub const LOG_INTERVAL: usize = 100;

/// How the sparsity/accuracy tradeoff is set during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaMode {
    Fixed(f64),
    /// Drawn uniformly from [0, 1] per flow and fed to the model as an extra
    /// input, so the tradeoff can be chosen at deployment.
    Uniform,
}

impl AlphaMode {
    pub fn is_uniform(self) -> bool {
        matches!(self, AlphaMode::Uniform)
    }
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaMode::Fixed(a) => write!(f, "{a}"),
            AlphaMode::Uniform => f.write_str("uniform"),
        }
    }
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "uniform" {
            return Ok(AlphaMode::Uniform);
        }
        let a: f64 = s
            .parse()
            .map_err(|_| Error::invalid(format!("alpha must be a number or \"uniform\", got {s:?}")))?;
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::invalid(format!("alpha must be non-negative, got {a}")));
        }
        Ok(AlphaMode::Fixed(a))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub alpha: AlphaMode,
    pub beta: f64,
    pub action_space: ActionSpace,
    pub topology: Topology,
    /// Flows per optimizer step.
    pub batch: usize,
    pub seed: u64,
    pub max_len: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 8,
            lr: 0.001,
            alpha: AlphaMode::Fixed(0.5),
            beta: 0.01,
            action_space: ActionSpace::Continuous,
            topology: Topology::Shared,
            batch: 1,
            seed: 0,
            max_len: 20,
            hidden: 128,
            layers: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch < 1 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let AlphaMode::Fixed(a) = self.alpha {
            TradeoffConfig::new(a, self.beta)?;
        } else {
            TradeoffConfig::new(0.0, self.beta)?;
        }
        if self.max_len < 1 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: crate::flow_data::feature_dim(self.alpha.is_uniform()),
            hidden: self.hidden,
            layers: self.layers,
            topology: self.topology,
            action_space: self.action_space,
        }
    }

    /// `key=value` pairs describing this configuration.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("actions", self.action_space.to_string()),
            ("topology", self.topology.to_string()),
            ("batch", self.batch.to_string()),
            ("seed", self.seed.to_string()),
            ("max_len", self.max_len.to_string()),
            ("hidden", self.hidden.to_string()),
            ("layers", self.layers.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("bad value {v:?} for {key}")))
        }
        let mut cfg = TrainConfig::default();
        for (k, v) in pairs {
            match k {
                "epochs" => cfg.epochs = num(k, v)?,
                "lr" => cfg.lr = num(k, v)?,
                "alpha" => cfg.alpha = v.parse()?,
                "beta" => cfg.beta = num(k, v)?,
                "actions" => cfg.action_space = v.parse()?,
                "topology" => cfg.topology = v.parse()?,
                "batch" => cfg.batch = num(k, v)?,
                "seed" => cfg.seed = num(k, v)?,
                "max_len" => cfg.max_len = num(k, v)?,
                "hidden" => cfg.hidden = num(k, v)?,
                "layers" => cfg.layers = num(k, v)?,
                _ => return Err(Error::invalid(format!("unknown training key {k:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Summary of the flows seen since the previous record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogRecord {
    /// Flows processed so far.
    pub step: usize,
    pub epoch: usize,
    pub accuracy: f64,
    pub sparsity: f64,
    pub loss: f64,
}

impl TrainLogRecord {
    pub const CSV_HEADER: &'static str = "step,epoch,accuracy,sparsity,loss";

    pub fn write_csv_row<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{},{},{},{},{}",
            self.step, self.epoch, self.accuracy, self.sparsity, self.loss
        )
    }
}

/// Classifier + critic + actor loss of one recorded episode. The utility
/// and the critic targets enter as constants.
pub fn episode_loss(
    tape: &mut Tape<'_>,
    space: ActionSpace,
    episode: &RecordedEpisode,
    tradeoff: TradeoffConfig,
) -> Result<NodeId> {
    let trace = &episode.trace;
    let mut terms = vec![classifier_loss_tape(tape, &episode.logits, trace.label)?];
    for (k, step) in trace.steps.iter().enumerate() {
        let Some(r) = step.reward else { continue };
        let v = step
            .value
            .ok_or_else(|| Error::invalid("training episode lacks critic values"))?;
        let target = tape.input(r.to_vec());
        let diff = tape.sub(episode.critic[k], target);
        let sq = tape.square(diff);
        terms.push(tape.sum(sq));

        let u = compute_utility(r[0], r[1], v[0], v[1], tradeoff.alpha);
        let (log_prob, entropy) =
            policy_terms_tape(tape, space, episode.actor_raw[k], step.action, step.log_sample)?;
        let policy = tape.scale(log_prob, -u);
        let bonus = tape.scale(entropy, -tradeoff.beta);
        terms.push(tape.add(policy, bonus));
    }
    Ok(tape.sum_all(&terms))
}

/// Numeric value of [`episode_loss`] from a finished trace.
pub fn episode_loss_value(trace: &EpisodeTrace, tradeoff: TradeoffConfig) -> Result<f64> {
    Ok(classifier_loss(&trace.confidences(), trace.label)? + critic_loss(trace) + actor_loss(trace, tradeoff))
}

/// Mean of the per-episode losses of a batch.
pub fn combine_losses(
    tape: &mut Tape<'_>,
    space: ActionSpace,
    episodes: &[(RecordedEpisode, TradeoffConfig)],
) -> Result<NodeId> {
    if episodes.is_empty() {
        return Err(Error::invalid("cannot combine an empty batch"));
    }
    let losses = episodes
        .iter()
        .map(|(e, t)| episode_loss(tape, space, e, *t))
        .collect::<Result<Vec<_>>>()?;
    let total = tape.sum_all(&losses);
    Ok(tape.scale(total, 1.0 / episodes.len() as f64))
}

/// Result of training one flow: its gradients and what happened.
pub struct FlowUpdate {
    pub flow_id: String,
    pub grads: Gradients,
    pub loss: f64,
    pub trace: EpisodeTrace,
}

/// Roll out `flow` in training mode on a fresh tape and backpropagate its
/// episode loss. `alpha` is the tradeoff used in the utility; when
/// `tradeoff_feature` is set it is also fed to the model.
pub fn flow_update(
    model: &Model,
    encoder: &FeatureEncoder,
    flow: &Flow,
    tradeoff: TradeoffConfig,
    tradeoff_feature: Option<f64>,
    rng: &mut impl Rng,
) -> Result<FlowUpdate> {
    let mut tape = Tape::new(model.store());
    let episode = record_episode(
        &mut tape,
        model,
        encoder,
        flow,
        tradeoff_feature,
        StepPolicy::Actor(ActionMode::Training),
        rng,
    )?;
    let loss = episode_loss(&mut tape, model.config().action_space, &episode, tradeoff)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Diverged(format!("loss {value} on flow {:?}", flow.flow_id)));
    }
    let grads = tape.backward(loss)?;
    Ok(FlowUpdate {
        flow_id: flow.flow_id.clone(),
        grads,
        loss: value,
        trace: episode.trace,
    })
}

/// Stream selector for the per-flow generators, kept apart from the
/// epoch-shuffle stream.
fn flow_rng(seed: u64, epoch: usize, position: usize, flows: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + (epoch * flows + position) as u64);
    rng
}

#[derive(Default)]
struct Window {
    flows: usize,
    correct: usize,
    consumed: usize,
    packets: usize,
    loss: f64,
}

/// Train a fresh model on `train`. Calls `log` every [`LOG_INTERVAL`]
/// flows and once at the end of every epoch if flows were seen since the
/// last record.
pub fn train(
    config: &TrainConfig,
    train: &FlowDataset,
    mut log: impl FnMut(&TrainLogRecord),
) -> Result<Checkpoint> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let data = truncate_flows(train, config.max_len)?;
    let stats = compute_normalization(&data)?;
    let encoder = FeatureEncoder::new(stats.clone(), config.max_len, config.alpha.is_uniform())?;
    let mut model = Model::new(config.model_config(), config.seed)?;
    let mut adam = AdamState::new(model.store(), config.lr);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut window = Window::default();
    let mut seen = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (chunk_idx, chunk) in order.chunks(config.batch).enumerate() {
            let frozen = &model;
            let mut updates: Vec<FlowUpdate> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &fi)| {
                    let position = chunk_idx * config.batch + j;
                    let mut rng = flow_rng(config.seed, epoch, position, n);
                    let (alpha, feature) = match config.alpha {
                        AlphaMode::Fixed(a) => (a, None),
                        AlphaMode::Uniform => {
                            let a: f64 = rng.random_range(0.0..=1.0);
                            (a, Some(a))
                        }
                    };
                    let tradeoff = TradeoffConfig {
                        alpha,
                        beta: config.beta,
                    };
                    flow_update(frozen, &encoder, &data.flows[fi], tradeoff, feature, &mut rng)
                })
                .collect::<Result<_>>()?;
            updates.sort_by(|a, b| a.flow_id.cmp(&b.flow_id));

            let store = model.store_mut();
            store.zero_grad();
            for u in &updates {
                store.accumulate(&u.grads);
            }
            store.scale_grads(1.0 / updates.len() as f64);
            if !store.grads_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite gradient in epoch {epoch}, batch {chunk_idx}"
                )));
            }
            adam.update(store);

            for u in &updates {
                window.flows += 1;
                window.correct += usize::from(flow_verdict(&u.trace) == u.trace.label);
                window.consumed += u.trace.consumed();
                window.packets += u.trace.flow_len;
                window.loss += u.loss;
                seen += 1;
                if seen % LOG_INTERVAL == 0 {
                    emit(&mut window, seen, epoch, &mut log);
                }
            }
        }
        if window.flows > 0 {
            emit(&mut window, seen, epoch, &mut log);
        }
    }
    Ok(Checkpoint {
        train: config.clone(),
        stats,
        model,
    })
}

fn emit(window: &mut Window, step: usize, epoch: usize, log: &mut impl FnMut(&TrainLogRecord)) {
    let w = std::mem::take(window);
    log(&TrainLogRecord {
        step,
        epoch,
        accuracy: w.correct as f64 / w.flows as f64,
        sparsity: 1.0 - w.consumed as f64 / w.packets as f64,
        loss: w.loss / w.flows as f64,
    });
}
