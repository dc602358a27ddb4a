//! The VAMP outer loop: Block A (CG-approximated LMMSE) alternating with
//! Block B (denoiser), in cold-start and warm-start variants.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cg::{self, Flags, InnerOracle, InnerOutcome, InnerPolicy, InnerRow, WarmCarry};
use crate::config::{RunConfig, Variant};
use crate::denoise::{block_b_update, Denoiser};
use crate::error::{Error, Result};
use crate::instance::SystemInstance;
use crate::operators::LinearOperator;
use crate::oracle;
use crate::vecops::{all_finite, dot, norm_sq, sub, to_db};

/// `ṽ_{B→A} = (‖z‖²/N − δ ṽ_w) / ((1/N) Tr{A Aᵀ})`.
///
/// Negative values are replaced by a tiny positive floor; the `bool`
/// reports the clamp.
pub fn estimate_v_ba<A: LinearOperator + ?Sized>(z: &[f64], v_w_tilde: f64, op: &A) -> (f64, bool) {
    let n = op.n() as f64;
    let power = norm_sq(z) / n;
    let raw = (power - op.delta() * v_w_tilde) / op.normalized_trace();
    if raw >= 0.0 {
        (raw, false)
    } else {
        (f64::MIN_POSITIVE.max(1e-12 * power), true)
    }
}

/// Outer-loop state.
#[derive(Debug, Clone)]
pub struct OuterState {
    pub t: usize,
    pub x_ba: Vec<f64>,
    pub v_ba_tilde: f64,
    pub x_ab: Vec<f64>,
    pub v_ab_tilde: f64,
    pub carry: Option<WarmCarry>,
    /// Past `x_{B→A}` vectors, kept only by the oracle warm-start variant.
    pub history: Vec<Vec<f64>>,
}

impl OuterState {
    pub fn new(n: usize) -> Self {
        OuterState {
            t: 0,
            x_ba: vec![0.0; n],
            v_ba_tilde: f64::NAN,
            x_ab: vec![0.0; n],
            v_ab_tilde: f64::INFINITY,
            carry: None,
            history: Vec::new(),
        }
    }
}

/// Block A output.
#[derive(Debug, Clone)]
pub struct BlockAOutput {
    pub x_ab: Vec<f64>,
    pub v_ab_tilde: f64,
    pub gamma_tilde: f64,
    /// `Aᵀμ`.
    pub at_mu: Vec<f64>,
    pub inner: InnerOutcome,
}

/// Runs the inner solver on `W μ = z` and forms `x_{A→B} = x_{B→A} − Aᵀμ / γ̃`.
#[allow(clippy::too_many_arguments)]
pub fn block_a<A: LinearOperator + ?Sized>(
    x_ba: &[f64],
    z: &[f64],
    op: &A,
    v_w_tilde: f64,
    v_ba_tilde: f64,
    policy: &InnerPolicy,
    prev_v_ab: f64,
    warm: Option<&WarmCarry>,
    observer: Option<cg::Observer<'_>>,
) -> Result<BlockAOutput> {
    if x_ba.len() != op.n() || z.len() != op.m() {
        return Err(Error::InvalidShape(format!(
            "x_ba has {} entries and z {}, operator is {}x{}",
            x_ba.len(),
            z.len(),
            op.m(),
            op.n()
        )));
    }
    let inner = cg::run_inner(z, op, v_w_tilde, v_ba_tilde, policy, prev_v_ab, warm, observer)?;
    let gamma = inner.gamma_tilde;
    if gamma == 0.0 || !gamma.is_finite() {
        return Err(Error::BlockADegenerate);
    }
    let at_mu = op.adjoint(&inner.mu);
    let x_ab: Vec<f64> = x_ba.iter().zip(&at_mu).map(|(xb, a)| xb - a / gamma).collect();
    Ok(BlockAOutput { x_ab, v_ab_tilde: inner.v_ab_tilde, gamma_tilde: gamma, at_mu, inner })
}

/// Multi-term correction with least-squares weights `Γ` fitted to the true
/// error history `q_τ = x_ba^τ − x`:
/// `x_{A→B} = (Σ_τ γ_τ x_ba^τ − Aᵀμ) / Σ_τ γ_τ`.
///
/// This leaves `x_{A→B} − x` orthogonal to every `q_τ`. With a single
/// history entry it coincides with the single-term update. A vanishing
/// `Σ γ_τ` returns the latest `x_ba` with [`Flags::GAMMA_SUM_ZERO`].
pub fn ws_oracle_update_x_ab(
    x_ba_history: &[Vec<f64>],
    x: &[f64],
    at_mu: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Flags)> {
    let q: Vec<Vec<f64>> = x_ba_history.iter().map(|xb| sub(xb, x)).collect();
    let (weights, ridge) = oracle::history_weights(&q, at_mu)?;
    let mut flags = if ridge { Flags::GAMMA_RIDGE } else { Flags::empty() };
    let total: f64 = weights.iter().sum();
    if total == 0.0 || !total.is_finite() {
        flags |= Flags::GAMMA_SUM_ZERO;
        let last = x_ba_history.last().cloned().unwrap_or_default();
        return Ok((last, weights, flags));
    }
    let mut acc: Vec<f64> = at_mu.iter().map(|a| -a).collect();
    for (g, xb) in weights.iter().zip(x_ba_history) {
        for (o, v) in acc.iter_mut().zip(xb) {
            *o += g * v;
        }
    }
    acc.iter_mut().for_each(|v| *v /= total);
    Ok((acc, weights, flags))
}

/// One row per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub inner_iters: usize,
    pub gamma_a: f64,
    pub v_ba_tilde: f64,
    pub v_ab_tilde: f64,
    pub gamma_b: f64,
    pub nmse: f64,
    pub nmse_db: f64,
    /// `γ_B ṽ_{A→B} / (1 − γ_B)`, the next `v_{B→A}` predicted from the denoiser's divergence.
    pub se_v_ba: f64,
    /// Seconds since the start of the run.
    pub elapsed: f64,
    pub flags: String,
    pub oracle_gamma: Option<f64>,
    pub oracle_v_ab: Option<f64>,
    pub oracle_v_ba: Option<f64>,
    /// Normalized `⟨h_t, q_t⟩`.
    pub oracle_audit: Option<f64>,
    /// Largest normalized `|⟨h_t, q_τ⟩|` over `τ ≤ t`.
    pub oracle_audit_max: Option<f64>,
    pub oracle_kurtosis: Option<f64>,
}

/// Trace of one run. `error` holds the reason a run stopped early.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TraceRecord>,
    pub inner: Vec<InnerRow>,
    pub error: Option<Error>,
    /// Last denoiser output `g_B(x_{A→B})`.
    pub estimate: Vec<f64>,
}

impl RunOutput {
    pub fn final_nmse_db(&self) -> Option<f64> {
        self.records.last().map(|r| r.nmse_db)
    }
}

/// Per-iteration ground-truth hook for the inner solver.
fn inner_observer<'a, A: LinearOperator + ?Sized>(
    op: &'a A,
    instance: &'a SystemInstance,
    x_ba: &'a [f64],
    q: &'a [f64],
    v_ba_true: f64,
) -> impl FnMut(&cg::CgState) -> InnerOracle + 'a {
    let n = instance.n() as f64;
    move |state: &cg::CgState| {
        let at_mu = op.adjoint(&state.mu);
        let gamma = oracle::oracle_gamma_from(q, &at_mu, v_ba_true).ok();
        let psi = Some(dot(&instance.w, &state.mu) / n);
        let g = -state.nu_bar;
        let v_ab = (g != 0.0).then(|| {
            let x_ab: Vec<f64> = x_ba.iter().zip(&at_mu).map(|(xb, a)| xb - a / g).collect();
            oracle::true_v_ab(&x_ab, &instance.x)
        });
        InnerOracle { gamma, psi, v_ab }
    }
}

/// Executes the configured variant on `instance` for up to `t_max` outer
/// iterations. Errors end the run early and are returned inside the output
/// together with the partial trace.
pub fn run(config: &RunConfig, instance: &SystemInstance) -> RunOutput {
    let denoiser = config.denoiser.build();
    run_with(config, instance, denoiser.as_ref())
}

/// As [`run`] with a caller-supplied denoiser.
pub fn run_with(config: &RunConfig, instance: &SystemInstance, denoiser: &dyn Denoiser) -> RunOutput {
    let mut out = RunOutput { records: Vec::new(), inner: Vec::new(), error: None, estimate: Vec::new() };
    if let Err(e) = config.validate() {
        out.error = Some(e);
        return out;
    }
    if let Err(e) = drive(config, instance, denoiser, &mut out) {
        out.error = Some(e);
    }
    out
}

fn drive(config: &RunConfig, instance: &SystemInstance, denoiser: &dyn Denoiser, out: &mut RunOutput) -> Result<()> {
    let op = &instance.operator;
    let n = instance.n();
    let x = &instance.x;
    let x_norm_sq = norm_sq(x);
    if x_norm_sq == 0.0 {
        return Err(Error::InvalidParameter("ground-truth signal is zero; NMSE undefined".into()));
    }
    let v_w = config.noise.v_w_override.unwrap_or(instance.v_w);
    let oracle_cols = config.oracle;
    let start = Instant::now();
    let mut state = OuterState::new(n);
    let mut z = instance.y.clone();
    let mut q_history: Vec<Vec<f64>> = Vec::new();

    for t in 0..config.t_max {
        state.t = t;
        let (v_ba, ba_clamped) = estimate_v_ba(&z, v_w, op);
        state.v_ba_tilde = v_ba;
        if v_ba < config.v_ba_floor {
            break;
        }
        let mut flags = if ba_clamped { Flags::V_BA_CLAMPED } else { Flags::empty() };

        let q = if oracle_cols || config.variant == Variant::WsOracle { sub(&state.x_ba, x) } else { Vec::new() };
        let v_ba_true = if q.is_empty() { f64::NAN } else { norm_sq(&q) / n as f64 };

        let warm = if config.variant.warm() { state.carry.as_ref() } else { None };
        let prev_v_ab = state.v_ab_tilde;
        let a = if oracle_cols {
            let mut obs = inner_observer(op, instance, &state.x_ba, &q, v_ba_true);
            block_a(&state.x_ba, &z, op, v_w, v_ba, &config.inner, prev_v_ab, warm, Some(&mut obs))?
        } else {
            block_a(&state.x_ba, &z, op, v_w, v_ba, &config.inner, prev_v_ab, warm, None)?
        };
        flags |= a.inner.flags;

        let (x_ab, v_ab) = if config.variant == Variant::WsOracle {
            state.history.push(state.x_ba.clone());
            let (x_ab, _weights, f) = ws_oracle_update_x_ab(&state.history, x, &a.at_mu)?;
            flags |= f;
            let v = oracle::true_v_ab(&x_ab, x);
            (x_ab, v)
        } else {
            (a.x_ab.clone(), a.v_ab_tilde)
        };
        if !all_finite(&x_ab) {
            return Err(Error::NumericInput("x_ab"));
        }

        if config.variant.warm() {
            state.carry = Some(a.inner.carry.clone());
        }
        for mut row in a.inner.rows.iter().cloned() {
            row.t = t;
            out.inner.push(row);
        }

        let b = block_b_update(&x_ab, v_ab, denoiser, config.denoiser.mode(config.probe_seed, t))?;
        let nmse = norm_sq(&sub(&b.mu_b, x)) / x_norm_sq;

        let mut rec = TraceRecord {
            t,
            inner_iters: a.inner.iterations,
            gamma_a: a.gamma_tilde,
            v_ba_tilde: v_ba,
            v_ab_tilde: v_ab,
            gamma_b: b.gamma_b,
            nmse,
            nmse_db: to_db(nmse),
            se_v_ba: b.gamma_b * v_ab / (1.0 - b.gamma_b),
            elapsed: 0.0,
            flags: String::new(),
            oracle_gamma: None,
            oracle_v_ab: None,
            oracle_v_ba: None,
            oracle_audit: None,
            oracle_audit_max: None,
            oracle_kurtosis: None,
        };
        if oracle_cols {
            let h = sub(&x_ab, x);
            q_history.push(q.clone());
            let audit = oracle::correlation_audit(&h, &q_history);
            rec.oracle_gamma = oracle::oracle_gamma_from(&q, &a.at_mu, v_ba_true).ok();
            rec.oracle_v_ab = Some(norm_sq(&h) / n as f64);
            rec.oracle_v_ba = Some(v_ba_true);
            rec.oracle_audit = audit.last().copied();
            rec.oracle_audit_max = audit.iter().map(|v| v.abs()).reduce(f64::max);
            rec.oracle_kurtosis = Some(oracle::excess_kurtosis(&h));
        }
        rec.flags = flags.label();

        state.x_ab = x_ab;
        state.v_ab_tilde = v_ab;
        state.x_ba = b.x_ba;
        out.estimate = b.mu_b;
        // next iteration's Block A input
        z = sub(&instance.y, &op.forward(&state.x_ba));
        rec.elapsed = start.elapsed().as_secs_f64();
        out.records.push(rec);
    }
    Ok(())
}
