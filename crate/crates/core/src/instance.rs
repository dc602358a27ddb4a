//! Synthetic problem instances `y = A x + w` with known ground truth.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{LinearOperator, MeasurementOperator};
use crate::rng;
use crate::vecops::norm_sq;

/// Bernoulli-Gaussian prior: each entry is nonzero with probability
/// `sparsity`, nonzeros are `N(0, 1/sparsity)` so `E x_k² = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sparsity() -> f64 {
    0.1
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec { sparsity: default_sparsity(), seed: 0 }
    }
}

pub fn bernoulli_gaussian(n: usize, sparsity: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::InvalidParameter(format!("sparsity {sparsity} must lie in (0, 1]")));
    }
    let mut rng = rng::stream(seed);
    let sd = (1.0 / sparsity).sqrt();
    Ok((0..n)
        .map(|_| {
            let active = rng.gen::<f64>() < sparsity;
            let g: f64 = rng.sample(StandardNormal);
            if active {
                sd * g
            } else {
                0.0
            }
        })
        .collect())
}

/// Noise variance giving `‖A x‖² / (M v_w) = 10^(snr_db / 10)`.
pub fn noise_variance_for_snr(ax: &[f64], snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!("SNR {snr_db} dB must be finite")));
    }
    let power = norm_sq(ax) / ax.len() as f64;
    Ok(power / 10f64.powf(snr_db / 10.0))
}

/// Ground truth and measurements of one simulated system.
#[derive(Debug, Clone)]
pub struct SystemInstance {
    pub x: Vec<f64>,
    pub operator: MeasurementOperator,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub v_w: f64,
    pub delta: f64,
}

impl SystemInstance {
    /// Assembles `y = A x + w`.
    pub fn from_parts(x: Vec<f64>, operator: MeasurementOperator, w: Vec<f64>, v_w: f64) -> Result<Self> {
        if x.len() != operator.n() || w.len() != operator.m() {
            return Err(Error::InvalidShape(format!(
                "x has {} entries and w {}, operator is {}x{}",
                x.len(),
                w.len(),
                operator.m(),
                operator.n()
            )));
        }
        let mut y = operator.forward(&x);
        for (yi, wi) in y.iter_mut().zip(&w) {
            *yi += wi;
        }
        let delta = operator.delta();
        Ok(SystemInstance { x, operator, w, y, v_w, delta })
    }

    /// Bernoulli-Gaussian signal, white Gaussian noise at the requested SNR.
    pub fn generate(operator: MeasurementOperator, signal: &SignalSpec, snr_db: f64, noise_seed: u64) -> Result<Self> {
        let x = bernoulli_gaussian(operator.n(), signal.sparsity, signal.seed)?;
        let ax = operator.forward(&x);
        let v_w = noise_variance_for_snr(&ax, snr_db)?;
        let mut rng = rng::stream(noise_seed);
        let sd = v_w.sqrt();
        let w: Vec<f64> = (0..operator.m()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        Self::from_parts(x, operator, w, v_w)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }
}
