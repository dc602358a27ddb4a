//! Run configuration, read from TOML.

use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cg::InnerPolicy;
use crate::denoise::{Costed, Denoiser, DivergenceKind, DivergenceMode, SoftThreshold};
use crate::error::{Error, Result};
use crate::instance::{SignalSpec, SystemInstance};
use crate::operators::OperatorSpec;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Cold-started CG every outer iteration.
    Cgvamp,
    /// Warm-started CG with the single-term correction.
    WsPractical,
    /// Warm-started CG with the least-squares correction over the error history.
    /// Needs the ground truth.
    WsOracle,
}

impl Variant {
    pub fn warm(&self) -> bool {
        !matches!(self, Variant::Cgvamp)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cgvamp => "cgvamp",
            Variant::WsPractical => "ws_practical",
            Variant::WsOracle => "ws_oracle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    #[default]
    SoftThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    #[serde(default)]
    pub kind: DenoiserKind,
    #[serde(default = "default_lambda")]
    pub lambda_mult: f64,
    #[serde(default = "default_divergence")]
    pub divergence: DivergenceKind,
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Probe step; `None` selects `1e-3 √(mean r²)` per call.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Artificial per-call cost in milliseconds.
    #[serde(default)]
    pub delay_ms: u64,
}

fn default_lambda() -> f64 {
    SoftThreshold::default().lambda_mult
}

fn default_divergence() -> DivergenceKind {
    DivergenceKind::Analytic
}

fn default_probes() -> usize {
    1
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            kind: DenoiserKind::SoftThreshold,
            lambda_mult: default_lambda(),
            divergence: default_divergence(),
            probes: default_probes(),
            epsilon: None,
            delay_ms: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn build(&self) -> Box<dyn Denoiser> {
        let base = match self.kind {
            DenoiserKind::SoftThreshold => SoftThreshold { lambda_mult: self.lambda_mult },
        };
        if self.delay_ms > 0 {
            Box::new(Costed { inner: base, delay: Duration::from_millis(self.delay_ms) })
        } else {
            Box::new(base)
        }
    }

    /// Divergence mode for outer iteration `t`; probe streams are derived
    /// from `probe_seed` so each iteration draws fresh probes.
    pub fn mode(&self, probe_seed: u64, t: usize) -> DivergenceMode {
        match self.divergence {
            DivergenceKind::Analytic => DivergenceMode::Analytic,
            DivergenceKind::MonteCarlo => DivergenceMode::MonteCarlo {
                probes: self.probes,
                epsilon: self.epsilon,
                seed: rng::derive_seed(probe_seed, &format!("probe/{t}")),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_mult >= 0.0) || !self.lambda_mult.is_finite() {
            return Err(Error::Config(format!("denoiser.lambda_mult {} must be finite and >= 0", self.lambda_mult)));
        }
        if self.divergence == DivergenceKind::MonteCarlo && self.probes == 0 {
            return Err(Error::Config("denoiser.probes must be at least 1".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::Config(format!("denoiser.epsilon {e} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default)]
    pub seed: u64,
    /// Noise variance handed to the solver instead of the true one.
    #[serde(default)]
    pub v_w_override: Option<f64>,
}

fn default_snr() -> f64 {
    40.0
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { snr_db: default_snr(), seed: 0, v_w_override: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    #[serde(default)]
    pub inner: InnerPolicy,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    pub operator: OperatorSpec,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub t_max: usize,
    /// The outer loop stops once `ṽ_{B→A}` drops below this floor.
    #[serde(default = "default_floor")]
    pub v_ba_floor: f64,
    /// Attach ground-truth columns to the trace.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub probe_seed: u64,
}

fn default_floor() -> f64 {
    1e-12
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if !self.noise.snr_db.is_finite() {
            return Err(Error::Config(format!("noise.snr_db {} must be finite", self.noise.snr_db)));
        }
        if let Some(v) = self.noise.v_w_override {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("noise.v_w_override {v} must be positive")));
            }
        }
        if !(self.v_ba_floor >= 0.0) {
            return Err(Error::Config(format!("v_ba_floor {} must be >= 0", self.v_ba_floor)));
        }
        self.inner.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.denoiser.validate()
    }

    /// Builds the operator and draws signal and noise.
    pub fn instance(&self) -> Result<SystemInstance> {
        SystemInstance::generate(self.operator.build()?, &self.signal, self.noise.snr_db, self.noise.seed)
    }

    /// Same grid point with every seed derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> RunConfig {
        let mut c = self.clone();
        c.operator.seed = rng::derive_seed(seed, "operator");
        c.signal.seed = rng::derive_seed(seed, "signal");
        c.noise.seed = rng::derive_seed(seed, "noise");
        c.probe_seed = rng::derive_seed(seed, "probe");
        c
    }

    /// SHA-256 over the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let text = self.to_toml_string().unwrap_or_else(|_| format!("{self:?}"));
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
