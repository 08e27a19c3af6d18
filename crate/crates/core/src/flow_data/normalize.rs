use super::{FlowDataset, RAW_FEATURES};
use crate::error::{Error, Result};

/// Per-column z-score statistics over all packets of a training set.
///
/// Standard deviations use the population convention and are stored as 1
/// for constant columns, so `std` is always strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: [f64; RAW_FEATURES],
    pub std: [f64; RAW_FEATURES],
}

impl NormalizationStats {
    pub fn identity() -> Self {
        NormalizationStats {
            mean: [0.0; RAW_FEATURES],
            std: [1.0; RAW_FEATURES],
        }
    }

    pub fn normalize(&self, raw: &[f64; RAW_FEATURES]) -> [f64; RAW_FEATURES] {
        let mut out = [0.0; RAW_FEATURES];
        for j in 0..RAW_FEATURES {
            out[j] = (raw[j] - self.mean[j]) / self.std[j];
        }
        out
    }

    pub fn denormalize(&self, z: &[f64; RAW_FEATURES]) -> [f64; RAW_FEATURES] {
        let mut out = [0.0; RAW_FEATURES];
        for j in 0..RAW_FEATURES {
            out[j] = z[j] * self.std[j] + self.mean[j];
        }
        out
    }
}

pub fn compute_normalization(train: &FlowDataset) -> Result<NormalizationStats> {
    let count = train.total_packets();
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    // Two passes: mean first, then centred second moment.
    let mut mean = [0.0; RAW_FEATURES];
    for flow in &train.flows {
        for i in 0..flow.len() {
            let raw = flow.raw_features(i)?;
            for j in 0..RAW_FEATURES {
                mean[j] += raw[j];
            }
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = [0.0; RAW_FEATURES];
    for flow in &train.flows {
        for i in 0..flow.len() {
            let raw = flow.raw_features(i)?;
            for j in 0..RAW_FEATURES {
                let d = raw[j] - mean[j];
                var[j] += d * d;
            }
        }
    }
    let mut std = [1.0; RAW_FEATURES];
    for j in 0..RAW_FEATURES {
        let s = (var[j] / count as f64).sqrt();
        // Tiny residual variance from rounding counts as constant.
        if s > 1e-12 * mean[j].abs().max(1.0) {
            std[j] = s;
        }
    }
    Ok(NormalizationStats { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow_data::test_util::flow;
    use crate::flow_data::Label;
    use proptest::prelude::*;

    #[test]
    fn single_packet_is_zero_variance() {
        let ds = FlowDataset::new(vec![flow("a", &[512], Label::Benign)]);
        let stats = compute_normalization(&ds).unwrap();
        let raw = ds.flows[0].raw_features(0).unwrap();
        assert_eq!(stats.mean, raw);
        assert!(stats.std.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn two_point_length_stats() {
        let ds = FlowDataset::new(vec![flow("a", &[100, 300], Label::Benign)]);
        let stats = compute_normalization(&ds).unwrap();
        assert!((stats.mean[3] - 200.0).abs() < 1e-12);
        assert!((stats.std[3] - 100.0).abs() < 1e-12);
        // protocol column is constant 6
        assert_eq!(stats.mean[2], 6.0);
        assert_eq!(stats.std[2], 1.0);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(compute_normalization(&FlowDataset::default()).is_err());
    }

    fn random_dataset(lengths: Vec<Vec<u32>>) -> FlowDataset {
        FlowDataset::new(
            lengths
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let mut f = flow(&i.to_string(), l, Label::Benign);
                    f.src_port = 1000 + (i as u16 * 37) % 5000;
                    for (k, p) in f.packets.iter_mut().enumerate().skip(1) {
                        p.iat_us = (k as u64 * 7919 + i as u64 * 31) % 100_000;
                    }
                    f
                })
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn round_trip_recovers_raw(lengths in prop::collection::vec(prop::collection::vec(40u32..1500, 1..8), 1..10)) {
            let ds = random_dataset(lengths);
            let stats = compute_normalization(&ds).unwrap();
            for f in &ds.flows {
                for i in 0..f.len() {
                    let raw = f.raw_features(i).unwrap();
                    let back = stats.denormalize(&stats.normalize(&raw));
                    for j in 0..RAW_FEATURES {
                        prop_assert!((back[j] - raw[j]).abs() <= 1e-9 * raw[j].abs().max(1.0));
                    }
                }
            }
        }

        #[test]
        fn normalized_columns_are_standard(lengths in prop::collection::vec(prop::collection::vec(40u32..1500, 1..8), 1..10)) {
            let ds = random_dataset(lengths);
            let stats = compute_normalization(&ds).unwrap();
            let mut rows = Vec::new();
            for f in &ds.flows {
                for i in 0..f.len() {
                    rows.push(stats.normalize(&f.raw_features(i).unwrap()));
                }
            }
            let n = rows.len() as f64;
            for j in 0..RAW_FEATURES {
                let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                let var: f64 = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() <= 1e-6);
                if stats.std[j] == 1.0 && var < 1e-12 {
                    continue; // constant column
                }
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }
}
