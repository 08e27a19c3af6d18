use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Direction, Flow, FlowDataset, Label, PacketRecord, TcpFlags, BENIGN_TAG};
use crate::error::{Error, Result};

pub const SYNTH_ATTACK_TYPE: &str = "SignalAttack";

/// Packet lengths outside the signal packet are drawn from this range.
const BACKGROUND_LEN: (u32, u32) = (40, 1000);
/// Length of the signal packet of an attack flow.
const SIGNAL_LEN: (u32, u32) = (1300, 1500);
/// Any packet at least this long is an attack's signal packet.
pub const SIGNAL_THRESHOLD: u32 = 1200;

/// Parameters of the synthetic flow generator.
///
/// Attack and benign flows are statistically identical except at packet
/// `signal_index`, where attack flows carry an oversized packet. Flows too
/// short to contain that packet are always benign.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub flows: usize,
    pub max_len: usize,
    pub min_len: usize,
    /// Probability that a flow runs all the way to `max_len` (the spike that
    /// truncation produces in real traces); otherwise the length is uniform.
    pub long_flow_share: f64,
    pub attack_ratio: f64,
    pub signal_index: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            flows: 2000,
            max_len: 20,
            min_len: 1,
            long_flow_share: 0.5,
            attack_ratio: 0.5,
            signal_index: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.flows == 0 {
            return Err(Error::invalid("flow count must be positive"));
        }
        if !(self.attack_ratio > 0.0 && self.attack_ratio < 1.0) {
            return Err(Error::invalid("attack ratio must lie in (0, 1)"));
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return Err(Error::invalid("need 1 <= min_len <= max_len"));
        }
        if self.signal_index >= self.max_len {
            return Err(Error::invalid("signal index must be below max_len"));
        }
        if !(0.0..=1.0).contains(&self.long_flow_share) {
            return Err(Error::invalid("long flow share must lie in [0, 1]"));
        }
        Ok(())
    }

    fn draw_length(&self, rng: &mut ChaCha8Rng, min_len: usize) -> usize {
        if rng.random_bool(self.long_flow_share) {
            self.max_len
        } else {
            rng.random_range(min_len..=self.max_len)
        }
    }
}

pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<FlowDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attack_min_len = config.min_len.max(config.signal_index + 1);
    let mut flows = Vec::with_capacity(config.flows);
    for id in 0..config.flows {
        let label = if rng.random_bool(config.attack_ratio) {
            Label::Attack
        } else {
            Label::Benign
        };
        let len = match label {
            Label::Attack => config.draw_length(&mut rng, attack_min_len),
            Label::Benign => config.draw_length(&mut rng, config.min_len),
        };
        let tcp = rng.random_bool(0.8);
        let protocol = if tcp { 6 } else { 17 };
        let src_port = rng.random_range(1024..=65535u16);
        let dst_port = [80u16, 443, 22, 53, 8080][rng.random_range(0..5)];
        let packets = (0..len)
            .map(|i| {
                let length_bytes = if label == Label::Attack && i == config.signal_index {
                    rng.random_range(SIGNAL_LEN.0..=SIGNAL_LEN.1)
                } else {
                    rng.random_range(BACKGROUND_LEN.0..=BACKGROUND_LEN.1)
                };
                let iat_us = if i == 0 {
                    0
                } else {
                    rng.random_range(10..50_000u64)
                };
                let direction = if i == 0 || rng.random_bool(0.5) {
                    Direction::Forward
                } else {
                    Direction::Reverse
                };
                let mut flags = TcpFlags::default();
                if tcp {
                    if i == 0 {
                        flags.0 = TcpFlags::SYN;
                    } else {
                        flags.0 = TcpFlags::ACK;
                        if rng.random_bool(0.3) {
                            flags.0 |= TcpFlags::PSH;
                        }
                    }
                }
                PacketRecord {
                    iat_us,
                    length_bytes,
                    direction,
                    tcp_flags: flags,
                }
            })
            .collect();
        flows.push(Flow {
            flow_id: format!("syn-{id:06}"),
            src_port,
            dst_port,
            protocol,
            packets,
            label,
            attack_type: match label {
                Label::Attack => SYNTH_ATTACK_TYPE.to_string(),
                Label::Benign => BENIGN_TAG.to_string(),
            },
        });
    }
    Ok(FlowDataset::new(flows))
}
