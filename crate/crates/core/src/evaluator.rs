//! Deployment-mode evaluation: per-flow metrics, sparsity and per-position
//! sampling histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baseline::{PolicyKind, SamplingPolicy};
use crate::classifier::flow_verdict;
use crate::error::{Error, Result};
use crate::flow_data::{truncate_flows, FeatureEncoder, FlowDataset, Label};
use crate::model::Model;
use crate::rl_sampler::EpisodeTrace;
use crate::rollout::{deploy_episode, run_episode, StepPolicy};

/// Name that selects every flow in [`Evaluation::histogram`].
pub const ALL_ATTACKS: &str = "All";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, verdict: Label) {
        match (truth, verdict) {
            (Label::Attack, Label::Attack) => self.tp += 1,
            (Label::Benign, Label::Attack) => self.fp += 1,
            (Label::Benign, Label::Benign) => self.tn += 1,
            (Label::Attack, Label::Benign) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Accuracy and sparsity of one attack type (or of benign flows).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupStats {
    pub flows: u64,
    pub correct: u64,
    pub consumed: u64,
    pub packets: u64,
}

impl GroupStats {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.flows).unwrap_or(0.0)
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - ratio(self.consumed, self.packets).unwrap_or(1.0)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub youden: f64,
    /// Skipped packets over all packets.
    pub sparsity: f64,
    pub consumed_packets: u64,
    pub total_packets: u64,
    /// Set when the metric's denominator was zero and 0 was reported.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub specificity_undefined: bool,
    pub by_attack: BTreeMap<String, GroupStats>,
}

impl MetricsReport {
    pub fn from_counts(
        confusion: Confusion,
        consumed_packets: u64,
        total_packets: u64,
        by_attack: BTreeMap<String, GroupStats>,
    ) -> Self {
        let c = confusion;
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let specificity = ratio(c.tn, c.tn + c.fp);
        let p = precision.unwrap_or(0.0);
        let r = recall.unwrap_or(0.0);
        let s = specificity.unwrap_or(0.0);
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        MetricsReport {
            confusion,
            accuracy: ratio(c.tp + c.tn, c.total()).unwrap_or(0.0),
            precision: p,
            recall: r,
            specificity: s,
            f1,
            youden: r + s - 1.0,
            sparsity: 1.0 - ratio(consumed_packets, total_packets).unwrap_or(1.0),
            consumed_packets,
            total_packets,
            precision_undefined: precision.is_none(),
            recall_undefined: recall.is_none(),
            specificity_undefined: specificity.is_none(),
            by_attack,
        }
    }

    pub fn flows(&self) -> u64 {
        self.confusion.total()
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        let _ = writeln!(s, "flows        {}", self.flows());
        let _ = writeln!(s, "packets      {} ({} consumed)", self.total_packets, self.consumed_packets);
        let _ = writeln!(s, "sparsity     {:.4}", self.sparsity);
        let _ = writeln!(s, "accuracy     {:.4}", self.accuracy);
        let _ = writeln!(s, "precision    {:.4}{}", self.precision, flag(self.precision_undefined));
        let _ = writeln!(s, "recall       {:.4}{}", self.recall, flag(self.recall_undefined));
        let _ = writeln!(s, "f1           {:.4}", self.f1);
        let _ = writeln!(s, "youden       {:.4}{}", self.youden, flag(self.specificity_undefined));
        let _ = writeln!(s, "confusion    tp={} fp={} tn={} fn={}", c.tp, c.fp, c.tn, c.fn_);
        if !self.by_attack.is_empty() {
            let _ = writeln!(s, "\n{:<24} {:>8} {:>9} {:>9}", "attack_type", "flows", "accuracy", "sparsity");
            for (name, g) in &self.by_attack {
                let _ = writeln!(
                    s,
                    "{:<24} {:>8} {:>9.4} {:>9.4}",
                    name,
                    g.flows,
                    g.accuracy(),
                    g.sparsity()
                );
            }
        }
        s
    }

    /// One `key=value` per line.
    pub fn to_key_values(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("flows", self.flows().to_string());
        kv("total_packets", self.total_packets.to_string());
        kv("consumed_packets", self.consumed_packets.to_string());
        kv("sparsity", self.sparsity.to_string());
        kv("accuracy", self.accuracy.to_string());
        kv("precision", self.precision.to_string());
        kv("recall", self.recall.to_string());
        kv("specificity", self.specificity.to_string());
        kv("f1", self.f1.to_string());
        kv("youden", self.youden.to_string());
        kv("tp", c.tp.to_string());
        kv("fp", c.fp.to_string());
        kv("tn", c.tn.to_string());
        kv("fn", c.fn_.to_string());
        kv("precision_undefined", self.precision_undefined.to_string());
        kv("recall_undefined", self.recall_undefined.to_string());
        kv("specificity_undefined", self.specificity_undefined.to_string());
        for (name, g) in &self.by_attack {
            kv(&format!("attack.{name}.flows"), g.flows.to_string());
            kv(&format!("attack.{name}.accuracy"), g.accuracy().to_string());
            kv(&format!("attack.{name}.sparsity"), g.sparsity().to_string());
        }
        s
    }
}

fn flag(on: bool) -> &'static str {
    if on {
        "  (undefined, reported as 0)"
    } else {
        ""
    }
}

/// Per-position counts over flows: how many flows reach a position, how
/// many of those consumed it, and the mean confidence there.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingHistogram {
    pub alive: Vec<u64>,
    pub consumed: Vec<u64>,
    confidence_sum: Vec<f64>,
}

impl SamplingHistogram {
    pub fn new(positions: usize) -> Self {
        SamplingHistogram {
            alive: vec![0; positions],
            consumed: vec![0; positions],
            confidence_sum: vec![0.0; positions],
        }
    }

    pub fn add(&mut self, trace: &EpisodeTrace) {
        if trace.flow_len > self.alive.len() {
            let n = trace.flow_len;
            self.alive.resize(n, 0);
            self.consumed.resize(n, 0);
            self.confidence_sum.resize(n, 0.0);
        }
        for j in 0..trace.flow_len {
            self.alive[j] += 1;
        }
        for s in &trace.steps {
            self.consumed[s.index] += 1;
            self.confidence_sum[s.index] += s.confidence;
        }
    }

    /// Mean confidence of the packets consumed at `position`.
    pub fn mean_confidence(&self, position: usize) -> Option<f64> {
        let n = self.consumed[position];
        (n > 0).then(|| self.confidence_sum[position] / n as f64)
    }

    pub fn consumed_share(&self, position: usize) -> f64 {
        ratio(self.consumed[position], self.alive[position]).unwrap_or(0.0)
    }

    /// CSV with columns `position,alive,consumed,mean_confidence`; the
    /// confidence is empty where nothing was consumed.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "position,alive,consumed,mean_confidence")?;
        for j in 0..self.alive.len() {
            let conf = self
                .mean_confidence(j)
                .map(|c| c.to_string())
                .unwrap_or_default();
            writeln!(out, "{j},{},{},{conf}", self.alive[j], self.consumed[j])?;
        }
        Ok(())
    }
}

/// Everything one evaluation run produced.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub traces: Vec<EpisodeTrace>,
    /// Distinct attack types of the test set.
    pub attack_types: Vec<String>,
    flow_types: Vec<String>,
    max_len: usize,
}

impl Evaluation {
    /// Histogram over flows of one attack type, or of all flows for
    /// [`ALL_ATTACKS`].
    pub fn histogram(&self, attack_type: &str) -> Result<SamplingHistogram> {
        if attack_type != ALL_ATTACKS && !self.attack_types.iter().any(|t| t == attack_type) {
            let mut available = vec![ALL_ATTACKS.to_string()];
            available.extend(self.attack_types.iter().cloned());
            return Err(Error::UnknownAttackType {
                requested: attack_type.to_string(),
                available: available.join(", "),
            });
        }
        let mut h = SamplingHistogram::new(self.max_len);
        for (trace, kind) in self.traces.iter().zip(&self.flow_types) {
            if attack_type == ALL_ATTACKS || kind == attack_type {
                h.add(trace);
            }
        }
        Ok(h)
    }
}

/// Roll every test flow out under `policy` and collect metrics. The RL
/// policy uses deployment mode; the random baseline draws from a stream
/// keyed by `seed` and the flow's position, so results do not depend on
/// scheduling.
pub fn evaluate(
    model: &Model,
    encoder: &FeatureEncoder,
    test: &FlowDataset,
    policy: &SamplingPolicy,
    tradeoff: Option<f64>,
    seed: u64,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // flows are scored as the model sees them
    let test = &truncate_flows(test, encoder.max_len)?;
    let traces: Vec<EpisodeTrace> = test
        .flows
        .par_iter()
        .enumerate()
        .map(|(i, flow)| {
            if policy.kind == PolicyKind::Rl {
                deploy_episode(model, encoder, flow, tradeoff)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let mask = policy.mask(flow.len(), &mut rng)?;
                run_episode(model, encoder, flow, tradeoff, StepPolicy::Mask(&mask), false, &mut rng)
            }
        })
        .collect::<Result<_>>()?;

    let mut confusion = Confusion::default();
    let mut by_attack: BTreeMap<String, GroupStats> = BTreeMap::new();
    let mut consumed = 0u64;
    let mut total = 0u64;
    for (flow, trace) in test.flows.iter().zip(&traces) {
        let verdict = flow_verdict(trace);
        confusion.record(flow.label, verdict);
        consumed += trace.consumed() as u64;
        total += trace.flow_len as u64;
        let g = by_attack.entry(flow.attack_type.clone()).or_default();
        g.flows += 1;
        g.correct += u64::from(verdict == flow.label);
        g.consumed += trace.consumed() as u64;
        g.packets += trace.flow_len as u64;
    }
    let report = MetricsReport::from_counts(confusion, consumed, total, by_attack);
    Ok(Evaluation {
        report,
        traces,
        attack_types: test.attack_types(),
        flow_types: test.flows.iter().map(|f| f.attack_type.clone()).collect(),
        max_len: encoder.max_len,
    })
}
