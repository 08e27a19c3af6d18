//! Closed-loop control of the tradeoff input at deployment.
//!
//! Flows are processed in consecutive windows. After each full window the
//! controller lowers the tradeoff by one step if the window's sparsity is
//! still above the target, and stops once the target is met, the tradeoff
//! hits 0, or the stream ends.

use std::io::Write;

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::flow_data::{FeatureEncoder, Flow};
use crate::model::Model;
use crate::rollout::deploy_episode;

/// Something that can run one flow at a given tradeoff and report how many
/// of its packets were skipped.
pub trait FlowSampler: Sync {
    type Flow: Sync;

    /// Returns `(skipped, total)` packets of `flow` at `tradeoff`.
    fn sample(&self, flow: &Self::Flow, tradeoff: f64) -> Result<(usize, usize)>;
}

/// A trained model whose inputs include the tradeoff.
pub struct ModelSampler<'a> {
    model: &'a Model,
    encoder: FeatureEncoder,
}

impl<'a> ModelSampler<'a> {
    /// Fails for checkpoints trained with a fixed tradeoff: they have no
    /// tradeoff input to steer.
    pub fn new(checkpoint: &'a Checkpoint) -> Result<Self> {
        if !checkpoint.train.alpha.is_uniform() {
            return Err(Error::invalid(format!(
                "steering needs a model trained with --alpha uniform; this one used a fixed alpha of {}",
                checkpoint.train.alpha
            )));
        }
        Ok(ModelSampler {
            model: &checkpoint.model,
            encoder: checkpoint.encoder(),
        })
    }
}

impl FlowSampler for ModelSampler<'_> {
    type Flow = Flow;

    fn sample(&self, flow: &Flow, tradeoff: f64) -> Result<(usize, usize)> {
        let trace = deploy_episode(self.model, &self.encoder, flow, Some(tradeoff))?;
        Ok((trace.skipped(), trace.flow_len))
    }
}

/// Reference plant whose sparsity equals the tradeoff: every flow has ten
/// packets and `round(10·tradeoff)` of them are skipped.
pub struct LinearStub;

impl FlowSampler for LinearStub {
    type Flow = ();

    fn sample(&self, _flow: &(), tradeoff: f64) -> Result<(usize, usize)> {
        Ok(((10.0 * tradeoff).round() as usize, 10))
    }
}

/// Sparsity reported regardless of the tradeoff.
pub struct ConstantStub(pub f64);

impl FlowSampler for ConstantStub {
    type Flow = ();

    fn sample(&self, _flow: &(), _tradeoff: f64) -> Result<(usize, usize)> {
        Ok(((1000.0 * self.0).round() as usize, 1000))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteeringConfig {
    /// Starting (and largest) tradeoff; the maximum used in training.
    pub tradeoff_max: f64,
    pub step: f64,
    /// Flows per window.
    pub window: usize,
    /// Minimum sparsity to reach.
    pub target: f64,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        SteeringConfig {
            tradeoff_max: 1.0,
            step: 0.1,
            window: 1000,
            target: 0.5,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tradeoff_max >= 0.0 && self.tradeoff_max.is_finite()) {
            return Err(Error::invalid("tradeoff maximum must be non-negative"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid("steering step must be positive"));
        }
        if self.window == 0 {
            return Err(Error::invalid("steering window must hold at least one flow"));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::invalid(format!("target sparsity must lie in (0, 1), got {}", self.target)));
        }
        Ok(())
    }
}

/// Controller state. The tradeoff is derived from the number of steps
/// taken, so repeated decrements do not accumulate rounding error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteeringState {
    pub tradeoff_max: f64,
    pub step: f64,
    pub target: f64,
    steps_taken: u32,
}

impl SteeringState {
    pub fn new(config: &SteeringConfig) -> Self {
        SteeringState {
            tradeoff_max: config.tradeoff_max,
            step: config.step,
            target: config.target,
            steps_taken: 0,
        }
    }

    pub fn tradeoff(&self) -> f64 {
        (self.tradeoff_max - f64::from(self.steps_taken) * self.step).max(0.0)
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps_taken
    }

    /// Lower the tradeoff by one step if `window_sparsity` exceeds the
    /// target and the floor has not been reached. Returns whether it moved.
    pub fn steering_step(&mut self, window_sparsity: f64) -> bool {
        if window_sparsity > self.target && self.tradeoff() > 0.0 {
            self.steps_taken += 1;
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    TargetReached,
    FloorReached,
    EndOfStream,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowRecord {
    pub window: usize,
    pub tradeoff: f64,
    pub sparsity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteeringTrace {
    pub windows: Vec<WindowRecord>,
    pub stop: StopReason,
}

impl SteeringTrace {
    pub fn final_tradeoff(&self) -> Option<f64> {
        self.windows.last().map(|w| w.tradeoff)
    }

    /// CSV with columns `window,tradeoff,sparsity`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "window,tradeoff,sparsity")?;
        for w in &self.windows {
            writeln!(out, "{},{},{}", w.window, w.tradeoff, w.sparsity)?;
        }
        Ok(())
    }
}

/// Run the controller over `flows` in order.
pub fn run_steered<S: FlowSampler>(
    sampler: &S,
    flows: &[S::Flow],
    config: &SteeringConfig,
) -> Result<SteeringTrace> {
    config.validate()?;
    let mut state = SteeringState::new(config);
    let mut windows = Vec::new();
    for (w, chunk) in flows.chunks(config.window).enumerate() {
        let tradeoff = state.tradeoff();
        let counts = chunk
            .par_iter()
            .map(|f| sampler.sample(f, tradeoff))
            .collect::<Result<Vec<_>>>()?;
        let (skipped, total) = counts
            .iter()
            .fold((0usize, 0usize), |(s, t), &(a, b)| (s + a, t + b));
        let sparsity = if total == 0 { 0.0 } else { skipped as f64 / total as f64 };
        windows.push(WindowRecord {
            window: w,
            tradeoff,
            sparsity,
        });
        if chunk.len() < config.window {
            break;
        }
        if sparsity <= config.target {
            return Ok(SteeringTrace {
                windows,
                stop: StopReason::TargetReached,
            });
        }
        if !state.steering_step(sparsity) {
            return Ok(SteeringTrace {
                windows,
                stop: StopReason::FloorReached,
            });
        }
    }
    Ok(SteeringTrace {
        windows,
        stop: StopReason::EndOfStream,
    })
}
