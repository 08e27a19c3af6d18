//! Non-adaptive samplers. Each one decides the whole mask of a flow up
//! front; all of them consume packet 0.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    /// The trained actor in deployment mode.
    Rl,
    Random,
    RelativeFirstM,
    FirstM,
    EveryIth,
}

impl PolicyKind {
    pub const BASELINES: [PolicyKind; 4] = [
        PolicyKind::Random,
        PolicyKind::RelativeFirstM,
        PolicyKind::FirstM,
        PolicyKind::EveryIth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Rl => "rl",
            PolicyKind::Random => "random",
            PolicyKind::RelativeFirstM => "relative-first-m",
            PolicyKind::FirstM => "first-m",
            PolicyKind::EveryIth => "every-ith",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PolicyKind::Rl]
            .into_iter()
            .chain(PolicyKind::BASELINES)
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown policy {s:?} (rl|random|first-m|relative-first-m|every-ith)"
                ))
            })
    }
}

fn check_rate(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("sampling rate must lie in (0, 1], got {p}")))
    }
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("flow length must be at least 1"));
    }
    Ok(())
}

fn prefix_mask(n: usize, m: usize) -> Vec<bool> {
    (0..n).map(|i| i < m).collect()
}

/// Probability used for packets 1.. so that, counting the forced first
/// packet, a flow of length `n` keeps a fraction `p` in expectation.
pub fn adjusted_rate(n: usize, p: f64) -> f64 {
    if n <= 1 {
        return 1.0;
    }
    ((p * n as f64 - 1.0) / (n as f64 - 1.0)).clamp(0.0, 1.0)
}

pub fn random_mask(n: usize, p: f64, rng: &mut impl Rng) -> Result<Vec<bool>> {
    check_len(n)?;
    check_rate(p)?;
    let q = adjusted_rate(n, p);
    Ok((0..n).map(|i| i == 0 || rng.random_bool(q)).collect())
}

pub fn relative_first_m_count(n: usize, p: f64) -> usize {
    ((n as f64 * p).round() as usize).clamp(1, n)
}

/// The first `max(1, round(n·p))` packets; needs the flow length up front.
pub fn relative_first_m_mask(n: usize, p: f64) -> Result<Vec<bool>> {
    check_len(n)?;
    check_rate(p)?;
    Ok(prefix_mask(n, relative_first_m_count(n, p)))
}

pub fn first_m_count(n: usize, p: f64, avg_len: f64) -> usize {
    ((avg_len * p).round() as usize).max(1).min(n)
}

/// The first `max(1, round(avg_len·p))` packets, capped at the flow length.
pub fn first_m_mask(n: usize, p: f64, avg_len: f64) -> Result<Vec<bool>> {
    check_len(n)?;
    check_rate(p)?;
    if !(avg_len > 0.0 && avg_len.is_finite()) {
        return Err(Error::invalid(format!("average flow length must be positive, got {avg_len}")));
    }
    Ok(prefix_mask(n, first_m_count(n, p, avg_len)))
}

pub fn every_ith_stride(p: f64) -> usize {
    ((1.0 / p).round() as usize).max(1)
}

/// Packets `0, i, 2i, …` with `i = max(1, round(1/p))`.
pub fn every_ith_mask(n: usize, p: f64) -> Result<Vec<bool>> {
    check_len(n)?;
    check_rate(p)?;
    let i = every_ith_stride(p);
    Ok((0..n).map(|j| j % i == 0).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingPolicy {
    pub kind: PolicyKind,
    /// Target fraction of packets to consume.
    pub rate: f64,
    /// Expected flow length, used by [`PolicyKind::FirstM`].
    pub avg_len: Option<f64>,
}

impl SamplingPolicy {
    pub fn new(kind: PolicyKind, rate: f64, avg_len: Option<f64>) -> Result<Self> {
        if kind != PolicyKind::Rl {
            check_rate(rate)?;
        }
        if kind == PolicyKind::FirstM && avg_len.is_none() {
            return Err(Error::invalid("first-m needs an average flow length"));
        }
        Ok(SamplingPolicy { kind, rate, avg_len })
    }

    pub fn rl() -> Self {
        SamplingPolicy {
            kind: PolicyKind::Rl,
            rate: 1.0,
            avg_len: None,
        }
    }

    /// Mask for a flow of length `n`. Only the random kind reads `rng`.
    pub fn mask(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<bool>> {
        match self.kind {
            PolicyKind::Rl => Err(Error::invalid("the rl policy has no fixed mask")),
            PolicyKind::Random => random_mask(n, self.rate, rng),
            PolicyKind::RelativeFirstM => relative_first_m_mask(n, self.rate),
            PolicyKind::FirstM => first_m_mask(n, self.rate, self.avg_len.unwrap_or(f64::NAN)),
            PolicyKind::EveryIth => every_ith_mask(n, self.rate),
        }
    }

    /// Expected number of packets consumed from a flow of length `n`.
    pub fn expected_consumed(&self, n: usize) -> f64 {
        match self.kind {
            PolicyKind::Rl => f64::NAN,
            PolicyKind::Random => {
                if n == 0 {
                    0.0
                } else {
                    1.0 + (n - 1) as f64 * adjusted_rate(n, self.rate)
                }
            }
            PolicyKind::RelativeFirstM => relative_first_m_count(n, self.rate) as f64,
            PolicyKind::FirstM => first_m_count(n, self.rate, self.avg_len.unwrap_or(f64::NAN)) as f64,
            PolicyKind::EveryIth => n.div_ceil(every_ith_stride(self.rate)) as f64,
        }
    }

    /// Expected fraction of packets consumed over flows with these lengths.
    pub fn expected_fraction(&self, lengths: &[usize]) -> f64 {
        let total: usize = lengths.iter().sum();
        let consumed: f64 = lengths.iter().map(|&n| self.expected_consumed(n)).sum();
        consumed / total as f64
    }
}

/// Rate in (0, 1] whose expected consumed fraction over `lengths` is
/// closest to `target`; ties go to the smaller rate. Searched on a grid of
/// step 1/1000.
pub fn calibrate_rate(
    kind: PolicyKind,
    lengths: &[usize],
    avg_len: Option<f64>,
    target: f64,
) -> Result<f64> {
    if kind == PolicyKind::Rl {
        return Err(Error::invalid("the rl policy has no rate to calibrate"));
    }
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::invalid("calibration needs non-empty flows"));
    }
    let mut best = (f64::INFINITY, 1.0);
    for k in 1..=1000 {
        let p = k as f64 / 1000.0;
        let policy = SamplingPolicy::new(kind, p, avg_len)?;
        let gap = (policy.expected_fraction(lengths) - target).abs();
        if gap < best.0 {
            best = (gap, p);
        }
    }
    Ok(best.1)
}
