//! Block B: denoisers, their divergence, and the Onsager-corrected output.

use std::time::Duration;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::vecops::{all_finite, mean_sq};

/// A separable-or-not denoiser `x̂ = g(r, v)` for an AWGN channel of variance `v`.
pub trait Denoiser: Sync {
    fn denoise(&self, r: &[f64], v: f64) -> Vec<f64>;

    /// Closed-form `(1/N) ∇·g`, when the denoiser has one.
    fn analytic_divergence(&self, _r: &[f64], _v: f64) -> Option<f64> {
        None
    }
}

/// Soft thresholding at `τ = λ √v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftThreshold {
    pub lambda_mult: f64,
}

impl Default for SoftThreshold {
    fn default() -> Self {
        SoftThreshold { lambda_mult: 1.4 }
    }
}

fn threshold(v: f64, lambda_mult: f64) -> f64 {
    lambda_mult * v.max(0.0).sqrt()
}

pub fn soft_threshold(r: &[f64], v: f64, lambda_mult: f64) -> Vec<f64> {
    let tau = threshold(v, lambda_mult);
    r.iter().map(|x| x.signum() * (x.abs() - tau).max(0.0)).collect()
}

/// Fraction of entries that survive the threshold.
pub fn analytic_divergence_soft_threshold(r: &[f64], v: f64, lambda_mult: f64) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    let tau = threshold(v, lambda_mult);
    r.iter().filter(|x| x.abs() > tau).count() as f64 / r.len() as f64
}

impl Denoiser for SoftThreshold {
    fn denoise(&self, r: &[f64], v: f64) -> Vec<f64> {
        soft_threshold(r, v, self.lambda_mult)
    }

    fn analytic_divergence(&self, r: &[f64], v: f64) -> Option<f64> {
        Some(analytic_divergence_soft_threshold(r, v, self.lambda_mult))
    }
}

/// Wraps a denoiser with a fixed per-call delay, standing in for an
/// expensive image denoiser when timing the solver.
#[derive(Debug, Clone)]
pub struct Costed<D> {
    pub inner: D,
    pub delay: Duration,
}

impl<D: Denoiser> Denoiser for Costed<D> {
    fn denoise(&self, r: &[f64], v: f64) -> Vec<f64> {
        std::thread::sleep(self.delay);
        self.inner.denoise(r, v)
    }

    fn analytic_divergence(&self, r: &[f64], v: f64) -> Option<f64> {
        self.inner.analytic_divergence(r, v)
    }
}

/// Default probe step, `1e-3 √(mean r²)`.
pub fn default_epsilon(r: &[f64]) -> f64 {
    let p = mean_sq(r).sqrt();
    if p > 0.0 {
        1e-3 * p
    } else {
        1e-3
    }
}

/// Black-box divergence with Rademacher probes:
/// `(1/P) Σ_j ⟨η_j, g(r + ε η_j) − g(r)⟩ / (N ε)`.
pub fn mc_divergence<D: Denoiser + ?Sized>(
    denoiser: &D,
    r: &[f64],
    v: f64,
    epsilon: f64,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    if !(epsilon > 0.0) || probes == 0 {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon}, probes {probes}")));
    }
    if r.is_empty() {
        return Ok(0.0);
    }
    let base = denoiser.denoise(r, v);
    if !all_finite(&base) {
        return Err(Error::NumericInput("denoiser output"));
    }
    let mut rng = rng::stream(seed);
    let n = r.len() as f64;
    let mut total = 0.0;
    for _ in 0..probes {
        let eta: Vec<f64> = (0..r.len()).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let shifted: Vec<f64> = r.iter().zip(&eta).map(|(x, e)| x + epsilon * e).collect();
        let out = denoiser.denoise(&shifted, v);
        if !all_finite(&out) {
            return Err(Error::NumericInput("denoiser output"));
        }
        let s: f64 = eta.iter().zip(out.iter().zip(&base)).map(|(e, (o, b))| e * (o - b)).sum();
        total += s / (n * epsilon);
    }
    Ok(total / probes as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Analytic,
    MonteCarlo,
}

/// How Block B obtains `γ_B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceMode {
    Analytic,
    MonteCarlo { probes: usize, epsilon: Option<f64>, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct BlockBOutput {
    pub x_ba: Vec<f64>,
    pub gamma_b: f64,
    pub mu_b: Vec<f64>,
}

/// Upper bound on `γ_B` before the Onsager division is considered degenerate.
pub const ONSAGER_LIMIT: f64 = 1.0 - 1e-6;

/// `μ_B = g(x_ab, ṽ_ab)`, `x_ba = (μ_B − γ_B x_ab) / (1 − γ_B)`.
pub fn block_b_update<D: Denoiser + ?Sized>(
    x_ab: &[f64],
    v_ab_tilde: f64,
    denoiser: &D,
    mode: DivergenceMode,
) -> Result<BlockBOutput> {
    let mu_b = denoiser.denoise(x_ab, v_ab_tilde);
    if !all_finite(&mu_b) {
        return Err(Error::NumericInput("denoiser output"));
    }
    let gamma_b = match mode {
        DivergenceMode::Analytic => denoiser
            .analytic_divergence(x_ab, v_ab_tilde)
            .ok_or_else(|| Error::InvalidParameter("denoiser has no analytic divergence".into()))?,
        DivergenceMode::MonteCarlo { probes, epsilon, seed } => {
            let eps = epsilon.unwrap_or_else(|| default_epsilon(x_ab));
            mc_divergence(denoiser, x_ab, v_ab_tilde, eps, probes, seed)?
        }
    };
    if gamma_b >= ONSAGER_LIMIT {
        return Err(Error::OnsagerDegenerate(gamma_b));
    }
    let scale = 1.0 / (1.0 - gamma_b);
    let x_ba = mu_b.iter().zip(x_ab).map(|(m, x)| scale * (m - gamma_b * x)).collect();
    Ok(BlockBOutput { x_ba, gamma_b, mu_b })
}
