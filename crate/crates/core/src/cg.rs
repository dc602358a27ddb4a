//! Conjugate gradient on `W_t μ = z_t` with in-loop correction and variance
//! estimates.
//!
//! Alongside the usual CG vectors the state carries three scalar sequences
//! that track, without access to the noise `w`:
//!
//! * `psi_bar ≈ (1/N) wᵀ μ`
//! * `eta_bar ≈ (1/N) wᵀ p`
//! * `nu_bar`, whose negative is the Onsager correction scalar `γ̃_A`
//!
//! and `zeta = μᵀ W μ`, accumulated from the CG step sizes, which turns the
//! `A→B` variance estimate into an `O(M)` update per inner iteration.
//!
//! [`run_acg`] wraps the step with the adaptive stopping rule: iterate while
//! the last step improved the variance estimate by at least `Δ` (relative),
//! or the estimate is still above `c` times the previous outer iteration's.

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{apply_w_into, LinearOperator};
use crate::vecops::{all_finite, axpy, dot, norm_sq};

/// Relative residual below which CG stops regardless of the criteria.
pub const ZERO_RESIDUAL_TOL: f64 = 1e-13;

bitflags! {
    /// Per-iteration diagnostic flags written to the trace.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct Flags: u32 {
        const V_AB_CLAMPED = 1;
        const GAMMA_UNDEFINED = 1 << 1;
        const WARM_RESEEDED = 1 << 2;
        const ZERO_RESIDUAL = 1 << 3;
        const V_BA_CLAMPED = 1 << 4;
        const GAMMA_RIDGE = 1 << 5;
        const GAMMA_SUM_ZERO = 1 << 6;
        const ITERATION_CAP = 1 << 7;
    }
}

impl Flags {
    /// `|`-separated flag names, empty when no flag is set.
    pub fn label(&self) -> String {
        self.iter_names().map(|(name, _)| name.to_ascii_lowercase()).collect::<Vec<_>>().join("|")
    }
}

/// Adaptive stopping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcgConfig {
    /// Target per-outer-iteration reduction of the `A→B` variance.
    pub c: f64,
    /// Relative-improvement floor; `+∞` disables the criterion.
    pub delta_threshold: f64,
    pub i_max: usize,
}

impl Default for AcgConfig {
    fn default() -> Self {
        AcgConfig { c: 0.9, delta_threshold: 0.015, i_max: 100 }
    }
}

impl AcgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::InvalidParameter(format!("c = {} must lie in (0, 1)", self.c)));
        }
        if !(self.delta_threshold > 0.0) {
            return Err(Error::InvalidParameter(format!("Δ = {} must be positive", self.delta_threshold)));
        }
        if self.i_max == 0 {
            return Err(Error::InvalidParameter("i_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// How many inner iterations to spend per outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum InnerPolicy {
    Acg(AcgConfig),
    Fixed { iterations: usize },
}

impl Default for InnerPolicy {
    fn default() -> Self {
        InnerPolicy::Acg(AcgConfig::default())
    }
}

impl InnerPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            InnerPolicy::Acg(c) => c.validate(),
            InnerPolicy::Fixed { iterations: 0 } => {
                Err(Error::InvalidParameter("fixed inner iteration count must be at least 1".into()))
            }
            InnerPolicy::Fixed { .. } => Ok(()),
        }
    }
}

/// Inner-loop state.
#[derive(Debug, Clone)]
pub struct CgState {
    pub mu: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    /// Direction used by the most recent step (empty before the first step).
    pub last_direction: Vec<f64>,
    pub i: usize,
    pub a_last: f64,
    pub b_last: f64,
    pub psi_bar: f64,
    pub nu_bar: f64,
    pub eta_bar: f64,
    pub zeta: f64,
    /// `ṽ_{A→B}(i)` for `i = 0, 1, …`; entry 0 is `+∞` on a cold start.
    pub v_ab_history: Vec<f64>,
    pub flags: Flags,
    n: usize,
    delta: f64,
    z_norm_sq: f64,
    warm: bool,
}

impl CgState {
    pub fn signal_dim(&self) -> usize {
        self.n
    }

    pub fn is_warm(&self) -> bool {
        self.warm
    }

    /// `‖r‖ / ‖z‖`, zero for a zero right-hand side.
    pub fn relative_residual(&self) -> f64 {
        if self.z_norm_sq == 0.0 {
            0.0
        } else {
            (norm_sq(&self.r) / self.z_norm_sq).sqrt()
        }
    }

    pub fn residual_vanished(&self) -> bool {
        self.relative_residual() < ZERO_RESIDUAL_TOL
    }

    fn v_ab_floor(&self) -> f64 {
        (1e-12 * self.z_norm_sq / self.n as f64).max(f64::MIN_POSITIVE)
    }

    pub fn current_v_ab(&self) -> f64 {
        *self.v_ab_history.last().expect("history is seeded at init")
    }
}

fn check_rhs(z: &[f64], n: usize, delta: f64) -> Result<()> {
    if !all_finite(z) {
        return Err(Error::NumericInput("CG right-hand side"));
    }
    if n == 0 || !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("signal dim {n}, ratio {delta}")));
    }
    Ok(())
}

/// Zero initial guess: `μ = 0`, `r = p = z`, `ψ̄ = ν̄ = 0`, `η̄ = δ ṽ_w`, `ζ = 0`.
pub fn cg_cold_init(z: &[f64], n: usize, delta: f64, v_w_tilde: f64) -> Result<CgState> {
    check_rhs(z, n, delta)?;
    let m = z.len();
    Ok(CgState {
        mu: vec![0.0; m],
        r: z.to_vec(),
        p: z.to_vec(),
        last_direction: Vec::new(),
        i: 0,
        a_last: 0.0,
        b_last: 0.0,
        psi_bar: 0.0,
        nu_bar: 0.0,
        eta_bar: delta * v_w_tilde,
        zeta: 0.0,
        v_ab_history: vec![f64::INFINITY],
        flags: Flags::empty(),
        n,
        delta,
        z_norm_sq: norm_sq(z),
        warm: false,
    })
}

/// What a warm start inherits from the previous outer iteration's CG run.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmCarry {
    pub mu: Vec<f64>,
    /// Last direction actually stepped along, `p^{i-1}`.
    pub direction: Vec<f64>,
    /// Last momentum scalar `b^{i-1}`.
    pub b: f64,
    pub psi_bar: f64,
    pub eta_bar: f64,
}

impl WarmCarry {
    pub fn from_state(state: &CgState) -> Self {
        let direction =
            if state.last_direction.is_empty() { vec![0.0; state.mu.len()] } else { state.last_direction.clone() };
        WarmCarry { mu: state.mu.clone(), direction, b: state.b_last, psi_bar: state.psi_bar, eta_bar: state.eta_bar }
    }
}

/// Warm start from the previous solution: `μ⁰ = μ_prev`,
/// `r⁰ = z − W μ⁰`, `p⁰ = r⁰ + b_prev p_prev`.
///
/// The scalar recursion is re-seeded with `ψ̄` carried over, `ν̄` from its
/// defining ratio at `μ⁰`, and `η̄ = ṽ_w(δ − ψ̄ − ṽ_{B→A} ν̄) + b_prev η̄_prev`.
/// `ζ` starts at the exact `μ⁰ᵀ W μ⁰`.
#[allow(clippy::too_many_arguments)]
pub fn warm_start_init<A: LinearOperator + ?Sized>(
    z: &[f64],
    carry: &WarmCarry,
    op: &A,
    v_w_tilde: f64,
    v_ba_tilde: f64,
    n: usize,
    delta: f64,
) -> Result<CgState> {
    check_rhs(z, n, delta)?;
    let m = z.len();
    if carry.mu.len() != m || carry.direction.len() != m || op.m() != m {
        return Err(Error::InvalidShape(format!(
            "warm start: z has {m} entries, carried mu {} and direction {}",
            carry.mu.len(),
            carry.direction.len()
        )));
    }
    if !carry.b.is_finite() || !all_finite(&carry.mu) || !all_finite(&carry.direction) {
        return Err(Error::NumericInput("warm-start carryover"));
    }
    if v_ba_tilde == 0.0 {
        return Err(Error::DivisionDegenerate("v_ba_tilde in warm-start reseed"));
    }
    let mut w_mu = vec![0.0; m];
    apply_w_into(op, v_w_tilde, v_ba_tilde, &carry.mu, &mut w_mu);
    let r: Vec<f64> = z.iter().zip(&w_mu).map(|(zi, wi)| zi - wi).collect();
    let mut p = r.clone();
    axpy(carry.b, &carry.direction, &mut p);

    let inv_n = 1.0 / n as f64;
    let psi_bar = carry.psi_bar;
    let nu_bar = (inv_n * dot(z, &carry.mu) - psi_bar) / v_ba_tilde;
    let eta_bar = v_w_tilde * (delta - psi_bar - v_ba_tilde * nu_bar) + carry.b * carry.eta_bar;

    let mut state = CgState {
        zeta: dot(&carry.mu, &w_mu),
        mu: carry.mu.clone(),
        r,
        p,
        last_direction: Vec::new(),
        i: 0,
        a_last: 0.0,
        b_last: carry.b,
        psi_bar,
        nu_bar,
        eta_bar,
        v_ab_history: Vec::new(),
        flags: Flags::WARM_RESEEDED,
        n,
        delta,
        z_norm_sq: norm_sq(z),
        warm: true,
    };
    let v0 = if carry.mu.iter().all(|v| *v == 0.0) {
        f64::INFINITY
    } else {
        match estimate_v_ab(&state, v_ba_tilde, v_w_tilde) {
            Ok((v, clamped)) => {
                if clamped {
                    state.flags |= Flags::V_AB_CLAMPED;
                }
                v
            }
            Err(_) => f64::INFINITY,
        }
    };
    state.v_ab_history.push(v0);
    Ok(state)
}

/// One inner iteration: the CG update followed by the `ψ̄, ν̄, η̄` recursion,
/// the `ζ` accumulation and a new `ṽ_{A→B}` entry.
///
/// A vanished residual makes the call a no-op flagged with
/// [`Flags::ZERO_RESIDUAL`].
pub fn cg_step<A: LinearOperator + ?Sized>(
    state: &mut CgState,
    op: &A,
    z: &[f64],
    v_ba_tilde: f64,
    v_w_tilde: f64,
) -> Result<()> {
    if state.residual_vanished() {
        state.flags |= Flags::ZERO_RESIDUAL;
        return Ok(());
    }
    if v_ba_tilde == 0.0 {
        return Err(Error::DivisionDegenerate("v_ba_tilde in the correction recursion"));
    }
    let m = state.mu.len();
    let mut d = vec![0.0; m];
    apply_w_into(op, v_w_tilde, v_ba_tilde, &state.p, &mut d);
    let pd = dot(&state.p, &d);
    if !(pd > 0.0) {
        return Err(Error::NumericalBreakdown(pd));
    }
    let rr = norm_sq(&state.r);
    let a = rr / pd;

    // On a warm start μ⁰ is not in the span of the directions, so the cross
    // term 2a⟨p, Wμ⟩ no longer vanishes; Wμ = z − r.
    if state.warm {
        let cross: f64 = state.p.iter().zip(z.iter().zip(&state.r)).map(|(p, (z, r))| p * (z - r)).sum();
        state.zeta += 2.0 * a * cross;
    }
    state.zeta += a * a * pd;

    axpy(a, &state.p, &mut state.mu);
    axpy(-a, &d, &mut state.r);
    let b = norm_sq(&state.r) / rr;
    let next_p: Vec<f64> = state.r.iter().zip(&state.p).map(|(r, p)| r + b * p).collect();
    state.last_direction = std::mem::replace(&mut state.p, next_p);

    let inv_n = 1.0 / state.n as f64;
    state.psi_bar += a * state.eta_bar;
    state.nu_bar = (inv_n * dot(z, &state.mu) - state.psi_bar) / v_ba_tilde;
    state.eta_bar = v_w_tilde * (state.delta - state.psi_bar - v_ba_tilde * state.nu_bar) + b * state.eta_bar;

    state.a_last = a;
    state.b_last = b;
    state.i += 1;

    let (v, clamped) = estimate_v_ab(state, v_ba_tilde, v_w_tilde)?;
    if clamped {
        state.flags |= Flags::V_AB_CLAMPED;
    }
    state.v_ab_history.push(v);
    Ok(())
}

/// `γ̃_A = −ν̄`. Before any CG work the correction is undefined and `0` is
/// returned with [`Flags::GAMMA_UNDEFINED`] set in the second slot.
pub fn estimate_gamma(state: &CgState) -> (f64, Flags) {
    if state.i == 0 && !state.warm {
        (0.0, Flags::GAMMA_UNDEFINED)
    } else {
        (-state.nu_bar, Flags::empty())
    }
}

/// `ṽ_{A→B} = (1/N) γ̃⁻² (ζ − ṽ_w ‖μ‖²) / ṽ_{B→A} − ṽ_{B→A}`.
///
/// Non-positive values are replaced by a small positive floor and reported
/// through the returned `bool`.
pub fn estimate_v_ab(state: &CgState, v_ba_tilde: f64, v_w_tilde: f64) -> Result<(f64, bool)> {
    if v_ba_tilde == 0.0 {
        return Err(Error::DivisionDegenerate("v_ba_tilde in the variance estimate"));
    }
    let mu_sq = norm_sq(&state.mu);
    let raw = if mu_sq == 0.0 {
        -v_ba_tilde
    } else {
        let gamma = -state.nu_bar;
        if gamma == 0.0 {
            return Err(Error::UndefinedEstimate("correction scalar is zero"));
        }
        (state.zeta - v_w_tilde * mu_sq) / (state.n as f64 * gamma * gamma * v_ba_tilde) - v_ba_tilde
    };
    if raw > 0.0 && raw.is_finite() {
        Ok((raw, false))
    } else if raw.is_nan() {
        Err(Error::UndefinedEstimate("variance estimate is NaN"))
    } else {
        Ok((state.v_ab_floor(), true))
    }
}

/// Oracle values attached to an inner trace row by an observer.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InnerOracle {
    pub gamma: Option<f64>,
    pub psi: Option<f64>,
    pub v_ab: Option<f64>,
}

/// One row of the inner-loop trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerRow {
    pub t: usize,
    pub i: usize,
    pub a: f64,
    pub b: f64,
    pub psi_bar: f64,
    pub nu_bar: f64,
    pub eta_bar: f64,
    pub zeta: f64,
    pub v_ab_tilde: f64,
    pub gamma_tilde: f64,
    pub rel_residual: f64,
    pub flags: String,
    pub oracle_gamma: Option<f64>,
    pub oracle_psi: Option<f64>,
    pub oracle_v_ab: Option<f64>,
}

impl InnerRow {
    fn from_state(state: &CgState, oracle: InnerOracle) -> Self {
        InnerRow {
            t: 0,
            i: state.i,
            a: state.a_last,
            b: state.b_last,
            psi_bar: state.psi_bar,
            nu_bar: state.nu_bar,
            eta_bar: state.eta_bar,
            zeta: state.zeta,
            v_ab_tilde: state.current_v_ab(),
            gamma_tilde: -state.nu_bar,
            rel_residual: state.relative_residual(),
            flags: state.flags.label(),
            oracle_gamma: oracle.gamma,
            oracle_psi: oracle.psi,
            oracle_v_ab: oracle.v_ab,
        }
    }
}

/// Result of one inner solve.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub mu: Vec<f64>,
    pub gamma_tilde: f64,
    pub v_ab_tilde: f64,
    pub iterations: usize,
    pub rows: Vec<InnerRow>,
    pub flags: Flags,
    pub carry: WarmCarry,
}

/// Per-iteration hook; sees the state after each step. Used to attach
/// simulation-only quantities and never influences control flow.
pub type Observer<'a> = &'a mut dyn FnMut(&CgState) -> InnerOracle;

fn relative_improvement(prev: f64, cur: f64) -> f64 {
    if prev.is_infinite() {
        f64::INFINITY
    } else {
        (prev - cur) / cur
    }
}

/// Adaptive-stopping guard: `true` while another iteration is requested.
fn acg_continues(config: &AcgConfig, state: &CgState, prev_v_ab: f64) -> bool {
    if state.i >= config.i_max {
        return false;
    }
    let hist = &state.v_ab_history;
    let cur = hist[hist.len() - 1];
    let efficient = config.delta_threshold.is_finite()
        && hist.len() >= 2
        && relative_improvement(hist[hist.len() - 2], cur) >= config.delta_threshold;
    let above_target = cur >= config.c * prev_v_ab;
    efficient || above_target
}

/// Adaptive CG. Always performs at least one iteration.
#[allow(clippy::too_many_arguments)]
pub fn run_acg<A: LinearOperator + ?Sized>(
    z: &[f64],
    op: &A,
    v_w_tilde: f64,
    v_ba_tilde: f64,
    config: &AcgConfig,
    prev_v_ab: f64,
    warm: Option<&WarmCarry>,
    observer: Option<Observer<'_>>,
) -> Result<InnerOutcome> {
    config.validate()?;
    run_inner(z, op, v_w_tilde, v_ba_tilde, &InnerPolicy::Acg(*config), prev_v_ab, warm, observer)
}

/// Inner solve under either policy.
#[allow(clippy::too_many_arguments)]
pub fn run_inner<A: LinearOperator + ?Sized>(
    z: &[f64],
    op: &A,
    v_w_tilde: f64,
    v_ba_tilde: f64,
    policy: &InnerPolicy,
    prev_v_ab: f64,
    warm: Option<&WarmCarry>,
    mut observer: Option<Observer<'_>>,
) -> Result<InnerOutcome> {
    policy.validate()?;
    if !(prev_v_ab > 0.0) {
        return Err(Error::InvalidParameter(format!("previous v_ab {prev_v_ab} must be positive")));
    }
    let n = op.n();
    let delta = op.delta();
    let mut state = match warm {
        Some(carry) => warm_start_init(z, carry, op, v_w_tilde, v_ba_tilde, n, delta)?,
        None => cg_cold_init(z, n, delta, v_w_tilde)?,
    };
    let mut rows = Vec::new();
    loop {
        cg_step(&mut state, op, z, v_ba_tilde, v_w_tilde)?;
        if state.flags.contains(Flags::ZERO_RESIDUAL) && state.i == 0 {
            // z = 0: nothing to do, and no correction can be formed
            break;
        }
        let oracle = observer.as_mut().map(|f| f(&state)).unwrap_or_default();
        rows.push(InnerRow::from_state(&state, oracle));
        if state.residual_vanished() {
            state.flags |= Flags::ZERO_RESIDUAL;
            break;
        }
        let more = match policy {
            InnerPolicy::Acg(cfg) => acg_continues(cfg, &state, prev_v_ab),
            InnerPolicy::Fixed { iterations } => state.i < *iterations,
        };
        if !more {
            let cap = match policy {
                InnerPolicy::Acg(cfg) => cfg.i_max,
                InnerPolicy::Fixed { iterations } => *iterations,
            };
            if state.i >= cap {
                state.flags |= Flags::ITERATION_CAP;
            }
            break;
        }
    }
    let (gamma_tilde, gflags) = estimate_gamma(&state);
    state.flags |= gflags;
    Ok(InnerOutcome {
        gamma_tilde,
        v_ab_tilde: state.current_v_ab(),
        iterations: state.i,
        rows,
        flags: state.flags,
        carry: WarmCarry::from_state(&state),
        mu: state.mu,
    })
}
