//! Flow datasets: per-packet records grouped into labelled flows, plus the
//! preprocessing the classifier expects (truncation, splitting, z-scoring and
//! feature-vector assembly).

mod csv_io;
mod normalize;
mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use csv_io::{load_flows_csv, read_flows_csv, write_flows_csv, CSV_COLUMNS};
pub use normalize::{compute_normalization, NormalizationStats};
pub use synth::{generate_synthetic, SynthConfig, SIGNAL_THRESHOLD, SYNTH_ATTACK_TYPE};

/// Number of raw (z-scored) features per packet.
pub const RAW_FEATURES: usize = 14;

/// Names of the raw features in input order.
pub const RAW_FEATURE_NAMES: [&str; RAW_FEATURES] = [
    "src_port", "dst_port", "protocol", "length_bytes", "iat_us", "direction", "fin", "syn", "rst",
    "psh", "ack", "urg", "ece", "cwr",
];

/// Attack-type tag used for benign flows.
pub const BENIGN_TAG: &str = "Normal";

pub const TCP_FLAG_NAMES: [&str; 8] = ["fin", "syn", "rst", "psh", "ack", "urg", "ece", "cwr"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn as_f64(self) -> f64 {
        match self {
            Direction::Forward => 0.0,
            Direction::Reverse => 1.0,
        }
    }
}

/// The eight TCP flags as a bitmask, in the order of [`TCP_FLAG_NAMES`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: u8 = 1 << 0;
    pub const SYN: u8 = 1 << 1;
    pub const RST: u8 = 1 << 2;
    pub const PSH: u8 = 1 << 3;
    pub const ACK: u8 = 1 << 4;
    pub const URG: u8 = 1 << 5;
    pub const ECE: u8 = 1 << 6;
    pub const CWR: u8 = 1 << 7;

    pub fn get(self, bit: usize) -> bool {
        self.0 & (1 << bit) != 0
    }

    pub fn set(&mut self, bit: usize, on: bool) {
        if on {
            self.0 |= 1 << bit;
        } else {
            self.0 &= !(1 << bit);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Benign,
    Attack,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Label::Benign),
            1 => Some(Label::Attack),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Attack => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.bit() as f64
    }
}

/// Per-packet varying features.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketRecord {
    /// Microseconds since the previous packet of the flow; 0 for the first.
    pub iat_us: u64,
    pub length_bytes: u32,
    pub direction: Direction,
    /// All zero for non-TCP flows.
    pub tcp_flags: TcpFlags,
}

/// One labelled network conversation.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub flow_id: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub packets: Vec<PacketRecord>,
    pub label: Label,
    pub attack_type: String,
}

impl Flow {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Raw feature row for packet `index`, in the canonical column order.
    pub fn raw_features(&self, index: usize) -> Result<[f64; RAW_FEATURES]> {
        let packet = self.packets.get(index).ok_or_else(|| {
            Error::invalid(format!(
                "packet index {index} out of range for flow of length {}",
                self.len()
            ))
        })?;
        let mut out = [0.0; RAW_FEATURES];
        out[0] = self.src_port as f64;
        out[1] = self.dst_port as f64;
        out[2] = self.protocol as f64;
        out[3] = packet.length_bytes as f64;
        out[4] = packet.iat_us as f64;
        out[5] = packet.direction.as_f64();
        for bit in 0..8 {
            out[6 + bit] = if packet.tcp_flags.get(bit) { 1.0 } else { 0.0 };
        }
        Ok(out)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Error::InvalidFlow {
            flow_id: self.flow_id.clone(),
            msg: msg.to_string(),
        };
        if self.packets.is_empty() {
            return Err(bad("flow has no packets"));
        }
        if self.packets[0].iat_us != 0 {
            return Err(bad("first packet must have iat_us = 0"));
        }
        Ok(())
    }
}

/// Summary counts reported after loading or generating a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub flows: usize,
    pub packets: usize,
    pub benign: usize,
    pub attacks: usize,
    /// Flow count per attack-type tag (benign flows included under their tag).
    pub per_type: BTreeMap<String, usize>,
}

impl DatasetSummary {
    pub fn benign_share(&self) -> f64 {
        if self.flows == 0 {
            0.0
        } else {
            self.benign as f64 / self.flows as f64
        }
    }

    /// Number of distinct attack types, excluding benign flows.
    pub fn attack_types(&self) -> usize {
        self.per_type.keys().filter(|t| t.as_str() != BENIGN_TAG).count()
    }
}

/// An immutable collection of flows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowDataset {
    pub flows: Vec<Flow>,
}

impl FlowDataset {
    pub fn new(flows: Vec<Flow>) -> Self {
        FlowDataset { flows }
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn total_packets(&self) -> usize {
        self.flows.iter().map(Flow::len).sum()
    }

    pub fn mean_flow_length(&self) -> f64 {
        if self.flows.is_empty() {
            0.0
        } else {
            self.total_packets() as f64 / self.flows.len() as f64
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut per_type = BTreeMap::new();
        let mut attacks = 0;
        for flow in &self.flows {
            *per_type.entry(flow.attack_type.clone()).or_insert(0) += 1;
            if flow.label == Label::Attack {
                attacks += 1;
            }
        }
        DatasetSummary {
            flows: self.flows.len(),
            packets: self.total_packets(),
            benign: self.flows.len() - attacks,
            attacks,
            per_type,
        }
    }

    /// Distinct attack-type tags present, sorted.
    pub fn attack_types(&self) -> Vec<String> {
        let mut types: Vec<String> = self.summary().per_type.into_keys().collect();
        types.sort();
        types
    }
}

/// Cut every flow to at most `max_len` packets.
pub fn truncate_flows(ds: &FlowDataset, max_len: usize) -> Result<FlowDataset> {
    if max_len < 1 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let flows = ds
        .flows
        .iter()
        .map(|flow| {
            let mut flow = flow.clone();
            flow.packets.truncate(max_len);
            flow
        })
        .collect();
    Ok(FlowDataset { flows })
}

/// Flow-level random partition into (train, test). Each side keeps the
/// original relative flow order.
pub fn split_dataset(
    ds: &FlowDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(FlowDataset, FlowDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total = ds.len();
    let n_train = ((total as f64) * train_fraction).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut is_train = vec![false; total];
    for &i in &order[..n_train.min(total)] {
        is_train[i] = true;
    }
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(total - n_train);
    for (flow, in_train) in ds.flows.iter().zip(is_train) {
        if in_train {
            train.push(flow.clone());
        } else {
            test.push(flow.clone());
        }
    }
    Ok((FlowDataset::new(train), FlowDataset::new(test)))
}

/// Turns packets into model inputs: z-scored raw features, the scaled
/// skipped-packet count, and optionally the tradeoff the flow runs under.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEncoder {
    pub stats: NormalizationStats,
    pub max_len: usize,
    pub with_tradeoff: bool,
}

impl FeatureEncoder {
    pub fn new(stats: NormalizationStats, max_len: usize, with_tradeoff: bool) -> Result<Self> {
        if max_len < 1 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        Ok(FeatureEncoder {
            stats,
            max_len,
            with_tradeoff,
        })
    }

    pub fn dim(&self) -> usize {
        feature_dim(self.with_tradeoff)
    }

    /// Write the feature vector for packet `index` into `out`.
    pub fn encode_into(
        &self,
        flow: &Flow,
        index: usize,
        skipped: usize,
        tradeoff: Option<f64>,
        out: &mut [f64],
    ) -> Result<()> {
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: out.len(),
            });
        }
        if tradeoff.is_some() != self.with_tradeoff {
            return Err(Error::invalid(if self.with_tradeoff {
                "this encoder requires a tradeoff value"
            } else {
                "this encoder has no tradeoff component"
            }));
        }
        let raw = flow.raw_features(index)?;
        let z = self.stats.normalize(&raw);
        out[..RAW_FEATURES].copy_from_slice(&z);
        out[RAW_FEATURES] = skipped.min(self.max_len) as f64 / self.max_len as f64;
        if let Some(t) = tradeoff {
            out[RAW_FEATURES + 1] = t;
        }
        Ok(())
    }

    pub fn encode(
        &self,
        flow: &Flow,
        index: usize,
        skipped: usize,
        tradeoff: Option<f64>,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.encode_into(flow, index, skipped, tradeoff, &mut out)?;
        Ok(out)
    }
}

/// Model input dimension: raw features + skipped count (+ tradeoff).
pub fn feature_dim(with_tradeoff: bool) -> usize {
    RAW_FEATURES + 1 + usize::from(with_tradeoff)
}

/// Free-function form of [`FeatureEncoder::encode`].
pub fn build_feature_vector(
    flow: &Flow,
    index: usize,
    skipped: usize,
    stats: &NormalizationStats,
    max_len: usize,
    tradeoff: Option<f64>,
) -> Result<Vec<f64>> {
    FeatureEncoder::new(stats.clone(), max_len, tradeoff.is_some())?.encode(
        flow, index, skipped, tradeoff,
    )
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;

    pub fn packet(len: u32, iat: u64) -> PacketRecord {
        PacketRecord {
            iat_us: iat,
            length_bytes: len,
            direction: Direction::Forward,
            tcp_flags: TcpFlags(TcpFlags::ACK),
        }
    }

    pub fn flow(id: &str, lengths: &[u32], label: Label) -> Flow {
        Flow {
            flow_id: id.to_string(),
            src_port: 40000,
            dst_port: 443,
            protocol: 6,
            packets: lengths
                .iter()
                .enumerate()
                .map(|(i, &l)| packet(l, if i == 0 { 0 } else { 1000 }))
                .collect(),
            label,
            attack_type: if label == Label::Attack {
                "DoS".to_string()
            } else {
                BENIGN_TAG.to_string()
            },
        }
    }
}
