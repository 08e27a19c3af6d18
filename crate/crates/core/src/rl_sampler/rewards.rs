//! Rewards for each consumed packet.
//!
//! Both rewards look at the packets strictly after the consumed one, of
//! which there are `F = N − 1 − index`. Packets with `F = 0` get no reward.
//! A skipped packet carries the confidence of the last consumed packet
//! before it.

use super::EpisodeTrace;
use crate::error::{Error, Result};

fn future_count(trace: &EpisodeTrace, step: usize) -> Result<usize> {
    let s = trace
        .steps
        .get(step)
        .ok_or_else(|| Error::invalid(format!("step {step} out of range")))?;
    let f = trace.flow_len - 1 - s.index;
    if f == 0 {
        return Err(Error::invalid("no packets follow the final packet of the flow"));
    }
    Ok(f)
}

/// Mean of `1 − |label − confidence_i|` over the packets after step `step`.
pub fn classification_reward(trace: &EpisodeTrace, step: usize) -> Result<f64> {
    let f = future_count(trace, step)?;
    let y = trace.label.as_f64();
    let mut total = 0.0;
    let mut current = step;
    for i in trace.steps[step].index + 1..trace.flow_len {
        while current + 1 < trace.steps.len() && trace.steps[current + 1].index <= i {
            current += 1;
        }
        total += 1.0 - (y - trace.steps[current].confidence).abs();
    }
    Ok(total / f as f64)
}

/// Fraction of the packets after step `step` that were skipped.
pub fn sparsity_reward(trace: &EpisodeTrace, step: usize) -> Result<f64> {
    let f = future_count(trace, step)?;
    let consumed_after = trace.steps.len() - 1 - step;
    Ok((f - consumed_after) as f64 / f as f64)
}

/// Sparsity reward of the final consumed packet, reduced when the action
/// lands more than one position past the flow: `F / (F + overshoot)`.
/// Returns `None` when nothing follows `last`.
pub fn terminal_sparsity_reward(last: usize, action: usize, flow_len: usize) -> Result<Option<f64>> {
    if last >= flow_len {
        return Err(Error::invalid(format!(
            "packet {last} is outside a flow of {flow_len}"
        )));
    }
    let landing = last.saturating_add(action);
    if landing < flow_len {
        return Err(Error::invalid(format!(
            "action {action} from packet {last} stays inside a flow of {flow_len}"
        )));
    }
    let f = flow_len - 1 - last;
    if f == 0 {
        return Ok(None);
    }
    let overshoot = landing - flow_len;
    Ok(Some(f as f64 / (f as f64 + overshoot as f64)))
}

/// Fill in `reward` for every step in one backward sweep.
pub fn compute_rewards(trace: &mut EpisodeTrace) -> Result<()> {
    let n = trace.flow_len;
    let steps = trace.steps.len();
    if steps == 0 {
        return Err(Error::invalid("episode consumed no packets"));
    }
    let y = trace.label.as_f64();
    // Σ (1 − |y − c_i|) over the packets after the current step.
    let mut score_after = 0.0;
    for k in (0..steps).rev() {
        let s = &trace.steps[k];
        let next = if k + 1 < steps {
            trace.steps[k + 1].index
        } else {
            n
        };
        let f = n - 1 - s.index;
        let own = 1.0 - (y - s.confidence).abs();
        let score = score_after + (next - s.index - 1) as f64 * own;
        score_after = score + own;
        let reward = if f == 0 {
            None
        } else {
            let sparsity = if k + 1 == steps {
                terminal_sparsity_reward(s.index, s.action, n)?.expect("f > 0")
            } else {
                let consumed_after = steps - 1 - k;
                (f - consumed_after) as f64 / f as f64
            };
            Some([score / f as f64, sparsity])
        };
        trace.steps[k].reward = reward;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_data::Label;
    use crate::rl_sampler::StepRecord;

    fn trace(n: usize, consumed: &[(usize, f64)], last_action: usize, label: Label) -> EpisodeTrace {
        let steps = consumed
            .iter()
            .enumerate()
            .map(|(k, &(index, confidence))| StepRecord {
                index,
                logit: 0.0,
                confidence,
                action: consumed.get(k + 1).map_or(last_action, |nx| nx.0 - index),
                log_sample: None,
                log_prob: None,
                entropy: None,
                value: None,
                reward: None,
            })
            .collect();
        let mut mask = vec![false; n];
        for &(i, _) in consumed {
            mask[i] = true;
        }
        EpisodeTrace {
            flow_len: n,
            label,
            steps,
            mask,
        }
    }

    #[test]
    fn worked_sparsity_example() {
        // N = 10, packets 0..=4 processed, then 3 of the remaining 5 chosen
        let t = trace(
            10,
            &[(0, 0.5), (1, 0.5), (2, 0.5), (3, 0.5), (4, 0.5), (5, 0.5), (7, 0.5), (9, 0.5)],
            1,
            Label::Attack,
        );
        assert!((sparsity_reward(&t, 4).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn classification_examples() {
        let t = trace(3, &[(0, 0.1), (1, 0.2), (2, 0.8)], 1, Label::Attack);
        assert!((classification_reward(&t, 0).unwrap() - 0.5).abs() < 1e-15);
        let t = trace(4, &[(0, 1.0), (1, 1.0), (3, 1.0)], 1, Label::Attack);
        assert_eq!(classification_reward(&t, 0).unwrap(), 1.0);
        let t = trace(4, &[(0, 0.5), (2, 0.5)], 5, Label::Benign);
        assert_eq!(classification_reward(&t, 0).unwrap(), 0.5);
        assert!(classification_reward(&trace(1, &[(0, 0.5)], 1, Label::Benign), 0).is_err());
    }

    #[test]
    fn sparsity_extremes() {
        let all = trace(5, &[(0, 0.5), (1, 0.5), (2, 0.5), (3, 0.5), (4, 0.5)], 1, Label::Benign);
        assert_eq!(sparsity_reward(&all, 0).unwrap(), 0.0);
        let none = trace(5, &[(0, 0.5)], 5, Label::Benign);
        assert_eq!(sparsity_reward(&none, 0).unwrap(), 1.0);
    }

    #[test]
    fn terminal_examples() {
        assert_eq!(terminal_sparsity_reward(5, 5, 10).unwrap(), Some(1.0));
        assert!(terminal_sparsity_reward(5, 4, 10).is_err());
        let r = terminal_sparsity_reward(5, 10, 10).unwrap().unwrap();
        assert!((r - 4.0 / 9.0).abs() < 1e-15);
        assert_eq!(terminal_sparsity_reward(9, 1, 10).unwrap(), None);
        assert_eq!(terminal_sparsity_reward(9, 7, 10).unwrap(), None);
        assert!(terminal_sparsity_reward(5, 3, 10).is_err());
    }

    #[test]
    fn streaming_matches_direct() {
        let mut t = trace(
            8,
            &[(0, 0.3), (2, 0.9), (3, 0.6), (6, 0.2)],
            4,
            Label::Attack,
        );
        compute_rewards(&mut t).unwrap();
        for k in 0..t.steps.len() - 1 {
            let r = t.steps[k].reward.unwrap();
            assert!((r[0] - classification_reward(&t, k).unwrap()).abs() < 1e-12);
            assert!((r[1] - sparsity_reward(&t, k).unwrap()).abs() < 1e-12);
        }
        let last = t.steps.last().unwrap().reward.unwrap();
        // lands at 10, two past the first position after the flow
        assert!((last[1] - 1.0 / 3.0).abs() < 1e-12);
    }
}
