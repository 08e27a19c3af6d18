//! Scalar nonlinearities and the log-normal distribution.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `ln(1 + eˣ)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `exp(N(mu, sigma²))`. `mu` and `sigma` parameterise the underlying
/// normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogNormal {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormal {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(Error::invalid(format!(
                "log-normal needs finite mu and sigma > 0, got mu={mu} sigma={sigma}"
            )));
        }
        Ok(LogNormal { mu, sigma })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        (self.mu + self.sigma * z).exp()
    }

    pub fn log_density(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::invalid(format!("log-normal density needs x > 0, got {x}")));
        }
        let lx = x.ln();
        let d = lx - self.mu;
        Ok(-(x * self.sigma * (2.0 * PI).sqrt()).ln() - d * d / (2.0 * self.sigma * self.sigma))
    }

    /// Differential entropy `mu + ½ ln(2πe sigma²)`.
    pub fn entropy(&self) -> f64 {
        self.mu + 0.5 * (2.0 * PI * E * self.sigma * self.sigma).ln()
    }

    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }
}
