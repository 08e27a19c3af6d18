//! Walking a flow: consume packet 0, classify, pick a jump, repeat until the
//! jump leaves the flow.
//!
//! The same driver runs against plain forward evaluation (deployment,
//! baselines) and against a gradient tape (training).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow_data::{FeatureEncoder, Flow};
use crate::model::{HeadSet, Model, ModelState, StepOutput, TapeState};
use crate::nn::{sigmoid, NodeId, Tape};
use crate::rl_sampler::{
    compute_rewards, replay_choice, select_action, ActionChoice, ActionDistribution, ActionMode,
    EpisodeTrace, StepRecord,
};

/// Where the next jump comes from.
#[derive(Clone, Copy, Debug)]
pub enum StepPolicy<'a> {
    /// Ask the actor.
    Actor(ActionMode),
    /// Consume exactly the packets marked true; `mask[0]` must be set.
    Mask(&'a [bool]),
    /// Repeat the jumps of an earlier trace of the same flow, re-scoring
    /// them under the current weights.
    Replay(&'a EpisodeTrace),
}

trait Stepper {
    fn step(&mut self, x: &[f64], heads: HeadSet) -> Result<StepOutput>;
}

struct PlainStepper<'m> {
    model: &'m Model,
    state: ModelState,
}

impl Stepper for PlainStepper<'_> {
    fn step(&mut self, x: &[f64], heads: HeadSet) -> Result<StepOutput> {
        self.model.step(x, &mut self.state, heads)
    }
}

struct TapeStepper<'m, 't, 's> {
    model: &'m Model,
    tape: &'t mut Tape<'s>,
    state: TapeState,
    logits: Vec<NodeId>,
    actor: Vec<NodeId>,
    critic: Vec<NodeId>,
}

impl Stepper for TapeStepper<'_, '_, '_> {
    fn step(&mut self, x: &[f64], heads: HeadSet) -> Result<StepOutput> {
        let out = self.model.step_tape(self.tape, x, &mut self.state, heads)?;
        self.logits.push(out.logit);
        let actor_raw = out.actor_raw.map(|n| {
            self.actor.push(n);
            self.tape.value(n).to_vec()
        });
        let critic = out.critic.map(|n| {
            self.critic.push(n);
            let v = self.tape.value(n);
            [v[0], v[1]]
        });
        Ok(StepOutput {
            logit: self.tape.scalar(out.logit),
            actor_raw,
            critic,
        })
    }
}

fn check_mask(mask: &[bool], flow: &Flow) -> Result<()> {
    if mask.len() != flow.len() {
        return Err(Error::DimensionMismatch {
            expected: flow.len(),
            got: mask.len(),
        });
    }
    if !mask[0] {
        return Err(Error::invalid("sampling mask must consume packet 0"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn drive<S: Stepper, R: Rng>(
    stepper: &mut S,
    model: &Model,
    encoder: &FeatureEncoder,
    flow: &Flow,
    tradeoff: Option<f64>,
    policy: StepPolicy<'_>,
    with_critic: bool,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let n = flow.len();
    if n == 0 {
        return Err(Error::InvalidFlow {
            flow_id: flow.flow_id.clone(),
            msg: "flow has no packets".into(),
        });
    }
    if let StepPolicy::Mask(mask) = policy {
        check_mask(mask, flow)?;
    }
    let heads = HeadSet {
        actor: !matches!(policy, StepPolicy::Mask(_)),
        critic: with_critic,
    };
    let space = model.config().action_space;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut mask = vec![false; n];
    let mut index = 0;
    let mut skipped = 0;
    let mut x = vec![0.0; encoder.dim()];
    loop {
        encoder.encode_into(flow, index, skipped, tradeoff, &mut x)?;
        let out = stepper.step(&x, heads)?;
        if !out.logit.is_finite() {
            return Err(Error::NonFinite(format!("classifier output on flow {:?}", flow.flow_id)));
        }
        let (choice, entropy) = match policy {
            StepPolicy::Mask(m) => {
                let next = (index + 1..n).find(|&i| m[i]).unwrap_or(n);
                (
                    ActionChoice {
                        action: next - index,
                        log_sample: None,
                        log_prob: f64::NAN,
                    },
                    None,
                )
            }
            StepPolicy::Actor(mode) => {
                let dist = ActionDistribution::from_raw(space, out.actor_raw.as_deref().expect("actor evaluated"))?;
                (select_action(&dist, mode, rng)?, Some(dist.entropy()))
            }
            StepPolicy::Replay(prev) => {
                let rec = prev
                    .steps
                    .get(steps.len())
                    .filter(|r| r.index == index)
                    .ok_or_else(|| Error::invalid("replayed trace does not match the flow"))?;
                let dist = ActionDistribution::from_raw(space, out.actor_raw.as_deref().expect("actor evaluated"))?;
                (replay_choice(&dist, rec.action, rec.log_sample)?, Some(dist.entropy()))
            }
        };
        mask[index] = true;
        let is_rl = entropy.is_some();
        steps.push(StepRecord {
            index,
            logit: out.logit,
            confidence: sigmoid(out.logit),
            action: choice.action,
            log_sample: choice.log_sample,
            log_prob: is_rl.then_some(choice.log_prob),
            entropy,
            value: out.critic,
            reward: None,
        });
        let next = index.saturating_add(choice.action);
        if next >= n {
            break;
        }
        skipped = choice.action - 1;
        index = next;
    }
    let mut trace = EpisodeTrace {
        flow_len: n,
        label: flow.label,
        steps,
        mask,
    };
    compute_rewards(&mut trace)?;
    Ok(trace)
}

/// Roll out one flow with plain forward evaluation. The critic runs only
/// when `with_critic` is set.
pub fn run_episode<R: Rng>(
    model: &Model,
    encoder: &FeatureEncoder,
    flow: &Flow,
    tradeoff: Option<f64>,
    policy: StepPolicy<'_>,
    with_critic: bool,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    let mut stepper = PlainStepper {
        model,
        state: model.initial_state(),
    };
    drive(&mut stepper, model, encoder, flow, tradeoff, policy, with_critic, rng)
}

/// Deployment rollout: actor by mean/mode, critic off, no randomness.
pub fn deploy_episode(
    model: &Model,
    encoder: &FeatureEncoder,
    flow: &Flow,
    tradeoff: Option<f64>,
) -> Result<EpisodeTrace> {
    // deployment selection never draws from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    run_episode(
        model,
        encoder,
        flow,
        tradeoff,
        StepPolicy::Actor(ActionMode::Deployment),
        false,
        &mut rng,
    )
}

/// A rollout recorded on a tape, with the head outputs of every step.
#[derive(Clone, Debug)]
pub struct RecordedEpisode {
    pub trace: EpisodeTrace,
    pub logits: Vec<NodeId>,
    pub actor_raw: Vec<NodeId>,
    pub critic: Vec<NodeId>,
}

/// Roll out one flow while recording every head on `tape` (all three
/// heads, so that all three losses can be built afterwards).
pub fn record_episode<R: Rng>(
    tape: &mut Tape<'_>,
    model: &Model,
    encoder: &FeatureEncoder,
    flow: &Flow,
    tradeoff: Option<f64>,
    policy: StepPolicy<'_>,
    rng: &mut R,
) -> Result<RecordedEpisode> {
    if matches!(policy, StepPolicy::Mask(_)) {
        return Err(Error::invalid("recorded episodes need an actor policy"));
    }
    let state = model.tape_state(tape);
    let mut stepper = TapeStepper {
        model,
        tape,
        state,
        logits: Vec::new(),
        actor: Vec::new(),
        critic: Vec::new(),
    };
    let trace = drive(&mut stepper, model, encoder, flow, tradeoff, policy, true, rng)?;
    Ok(RecordedEpisode {
        trace,
        logits: stepper.logits,
        actor_raw: stepper.actor,
        critic: stepper.critic,
    })
}
