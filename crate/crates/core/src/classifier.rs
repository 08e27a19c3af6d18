//! Per-packet attack confidence, the supervised loss and the flow verdict.

use crate::error::{Error, Result};
use crate::flow_data::Label;
use crate::model::{HeadSet, Model, ModelState};
use crate::nn::{sigmoid, NodeId, Tape};
use crate::rl_sampler::EpisodeTrace;

/// Confidences at or above this value mean "attack".
pub const VERDICT_THRESHOLD: f64 = 0.5;

/// One recurrent step over `features` followed by the classifier head.
/// Returns the attack confidence in (0, 1).
pub fn classify_packet(model: &Model, features: &[f64], state: &mut ModelState) -> Result<f64> {
    let out = model.step(features, state, HeadSet::CLASSIFIER)?;
    Ok(sigmoid(out.logit))
}

/// Mean binary cross-entropy of per-packet confidences against the flow label.
pub fn classifier_loss(confidences: &[f64], label: Label) -> Result<f64> {
    if confidences.is_empty() {
        return Err(Error::invalid("classifier loss needs at least one confidence"));
    }
    let y = label.as_f64();
    let total: f64 = confidences
        .iter()
        .map(|&c| -(y * c.ln() + (1.0 - y) * (1.0 - c).ln()))
        .sum();
    Ok(total / confidences.len() as f64)
}

/// [`classifier_loss`] recorded on a tape from logits, using
/// `softplus(z) - y·z` so saturated confidences stay finite.
pub fn classifier_loss_tape(tape: &mut Tape<'_>, logits: &[NodeId], label: Label) -> Result<NodeId> {
    if logits.is_empty() {
        return Err(Error::invalid("classifier loss needs at least one logit"));
    }
    let y = label.as_f64();
    let terms: Vec<NodeId> = logits
        .iter()
        .map(|&z| {
            let sp = tape.softplus(z);
            let yz = tape.scale(z, y);
            tape.sub(sp, yz)
        })
        .collect();
    let total = tape.sum_all(&terms);
    Ok(tape.scale(total, 1.0 / logits.len() as f64))
}

pub fn verdict_from_confidence(confidence: f64) -> Label {
    if confidence >= VERDICT_THRESHOLD {
        Label::Attack
    } else {
        Label::Benign
    }
}

/// The confidence after the last consumed packet decides the flow.
pub fn flow_verdict(trace: &EpisodeTrace) -> Label {
    let last = trace
        .steps
        .last()
        .expect("an episode always consumes its first packet");
    verdict_from_confidence(last.confidence)
}
