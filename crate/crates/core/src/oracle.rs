//! Ground-truth reference computations, available only in simulation.
//!
//! Each in-loop estimator has a counterpart here computed from the true
//! signal, noise or an explicit matrix. None of these feed back into the
//! solver's control flow except through the oracle warm-start variant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operators::LinearOperator;
use crate::vecops::{dot, mean_sq, norm_sq, sub};

/// Largest measurement dimension for which a dense direct solve is allowed.
pub const MAX_DIRECT_M: usize = 512;

/// Correction scalar that exactly decorrelates `x_ba − Aᵀμ/γ` from `q`:
/// `(1/(N v)) ⟨q, Aᵀ μ⟩`.
pub fn oracle_gamma<A: LinearOperator + ?Sized>(q: &[f64], op: &A, mu: &[f64], v_ba_true: f64) -> Result<f64> {
    oracle_gamma_from(q, &op.adjoint(mu), v_ba_true)
}

/// As [`oracle_gamma`] with `Aᵀμ` already computed.
pub fn oracle_gamma_from(q: &[f64], at_mu: &[f64], v_ba_true: f64) -> Result<f64> {
    if v_ba_true == 0.0 {
        return Err(Error::DivisionDegenerate("true v_ba in oracle gamma"));
    }
    Ok(dot(q, at_mu) / (q.len() as f64 * v_ba_true))
}

/// Per-coordinate MSE `(1/N)‖estimate − x‖²`.
pub fn true_variance(estimate: &[f64], x: &[f64]) -> f64 {
    mean_sq(&sub(estimate, x))
}

pub fn true_v_ab(x_ab: &[f64], x: &[f64]) -> f64 {
    true_variance(x_ab, x)
}

pub fn true_v_ba(x_ba: &[f64], x: &[f64]) -> f64 {
    true_variance(x_ba, x)
}

fn explicit_w<A: LinearOperator + ?Sized>(op: &A, v_w: f64, v_ba: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if op.m() > MAX_DIRECT_M {
        return Err(Error::InvalidShape(format!("direct solve limited to m <= {MAX_DIRECT_M}, got {}", op.m())));
    }
    let (m, n) = (op.m(), op.n());
    let mut a = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.forward_into(&e, &mut col);
        a.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    let w = DMatrix::identity(m, m) * v_w + (&a * a.transpose()) * v_ba;
    Ok((a, w))
}

/// Direct solve of `(v_w I + v_ba A Aᵀ) μ = z`.
pub fn exact_lmmse<A: LinearOperator + ?Sized>(z: &[f64], op: &A, v_w: f64, v_ba: f64) -> Result<Vec<f64>> {
    if z.len() != op.m() {
        return Err(Error::InvalidShape(format!("z has {} entries, expected {}", z.len(), op.m())));
    }
    let (_, w) = explicit_w(op, v_w, v_ba)?;
    let chol = w.cholesky().ok_or_else(|| Error::Solver("W is not numerically positive definite".into()))?;
    Ok(chol.solve(&DVector::from_column_slice(z)).iter().cloned().collect())
}

/// `(1/N) Tr{Aᵀ W⁻¹ A}`, the divergence of the exact LMMSE map.
pub fn exact_lmmse_divergence<A: LinearOperator + ?Sized>(op: &A, v_w: f64, v_ba: f64) -> Result<f64> {
    let (a, w) = explicit_w(op, v_w, v_ba)?;
    let chol = w.cholesky().ok_or_else(|| Error::Solver("W is not numerically positive definite".into()))?;
    let winv_a = chol.solve(&a);
    Ok(a.component_mul(&winv_a).sum() / op.n() as f64)
}

/// `(1/N) γ⁻² ‖Aᵀμ‖² − v_ba`: the variance estimate evaluated directly with
/// one extra adjoint instead of the `ζ` accumulation.
pub fn v_ab_prior_free<A: LinearOperator + ?Sized>(op: &A, mu: &[f64], gamma: f64, v_ba: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Err(Error::UndefinedEstimate("correction scalar is zero"));
    }
    let at_mu = op.adjoint(mu);
    Ok(norm_sq(&at_mu) / (op.n() as f64 * gamma * gamma) - v_ba)
}

/// Normalized correlations `⟨h, q_τ⟩ / (N √(v_h v_τ))` with the empirical
/// variances of `h` and each `q_τ`.
pub fn correlation_audit(h: &[f64], q_history: &[Vec<f64>]) -> Vec<f64> {
    let n = h.len() as f64;
    let vh = mean_sq(h);
    q_history
        .iter()
        .map(|q| {
            let vq = mean_sq(q);
            let denom = n * (vh * vq).sqrt();
            if denom > 0.0 {
                dot(h, q) / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// Sample excess kurtosis `m4 / m2² − 3` about the sample mean.
pub fn excess_kurtosis(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (m2, m4) = v.iter().fold((0.0, 0.0), |(a, b), x| {
        let d = (x - mean).powi(2);
        (a + d, b + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    m4 / (m2 * m2) - 3.0
}

/// Least-squares weights `Γ = (QᵀQ)⁻¹ Qᵀ Aᵀμ` over the error history
/// `Q = [q_0, …, q_t]`. The `bool` reports whether a ridge of
/// `1e-12 · Tr{QᵀQ}` was needed to factor the Gram matrix.
pub fn history_weights(q_history: &[Vec<f64>], at_mu: &[f64]) -> Result<(Vec<f64>, bool)> {
    let k = q_history.len();
    if k == 0 {
        return Err(Error::OracleUnavailable("empty error history"));
    }
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for i in 0..k {
        if q_history[i].len() != at_mu.len() {
            return Err(Error::InvalidShape("history vector length".into()));
        }
        rhs[i] = dot(&q_history[i], at_mu);
        for j in 0..=i {
            let g = dot(&q_history[i], &q_history[j]);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let ridge = 1e-12 * gram.trace();
    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l();
        let well_posed = (0..k).all(|i| l[(i, i)] * l[(i, i)] > ridge);
        let sol = chol.solve(&rhs);
        if well_posed && sol.iter().all(|v| v.is_finite()) {
            return Ok((sol.iter().cloned().collect(), false));
        }
    }
    for i in 0..k {
        gram[(i, i)] += ridge;
    }
    let chol = gram.cholesky().ok_or_else(|| Error::Solver("ridge-regularized Gram matrix not PD".into()))?;
    Ok((chol.solve(&rhs).iter().cloned().collect(), true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::build_dense;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed);
        (0..n).map(|_| r.sample(StandardNormal)).collect()
    }

    #[test]
    fn gamma_trivial_cases() {
        let op = build_dense(32, 8, 3.0, 1).unwrap();
        let q = gaussian(32, 2);
        assert_eq!(oracle_gamma(&q, &op, &[0.0; 8], 1.0).unwrap(), 0.0);
        assert!(oracle_gamma(&q, &op, &gaussian(8, 3), 0.0).is_err());
        // q orthogonal to Aᵀμ
        let mu = gaussian(8, 4);
        let at_mu = op.adjoint(&mu);
        let proj = dot(&q, &at_mu) / norm_sq(&at_mu);
        let q_perp: Vec<f64> = q.iter().zip(&at_mu).map(|(a, b)| a - proj * b).collect();
        assert!(oracle_gamma(&q_perp, &op, &mu, 1.0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn lmmse_diagonal_case() {
        let op = build_dense(32, 8, 3.0, 1).unwrap();
        let z = gaussian(8, 5);
        let mu = exact_lmmse(&z, &op, 2.0, 0.0).unwrap();
        for (m, zz) in mu.iter().zip(&z) {
            assert!((m - zz / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn lmmse_divergence_of_orthogonal_rows() {
        // κ = 1: A Aᵀ = (N/M) I, so (1/N) Tr{Aᵀ W⁻¹ A} = M (N/M) / (N (v_w + v_ba N/M))
        let op = build_dense(64, 16, 1.0, 3).unwrap();
        let got = exact_lmmse_divergence(&op, 0.5, 2.0).unwrap();
        let expected = 1.0 / (0.5 + 2.0 * 4.0);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn variances_by_definition() {
        let x = gaussian(1000, 1);
        assert_eq!(true_v_ab(&x, &x), 0.0);
        let e: Vec<f64> = (0..1000).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let shifted: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + b / 2f64.sqrt()).collect();
        assert!((true_v_ba(&shifted, &x) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn audit_detects_identical_errors() {
        let q = gaussian(4096, 1);
        assert!((correlation_audit(&q, std::slice::from_ref(&q))[0] - 1.0).abs() < 1e-12);
        let h = gaussian(4096, 2);
        assert!(correlation_audit(&h, &[q])[0].abs() < 0.06);
    }

    #[test]
    fn kurtosis_of_gaussian_and_uniform() {
        let g = gaussian(200_000, 3);
        assert!(excess_kurtosis(&g).abs() < 0.05);
        let u: Vec<f64> = (0..200_000).map(|k| (k as f64 + 0.5) / 200_000.0).collect();
        assert!((excess_kurtosis(&u) + 1.2).abs() < 1e-3);
    }

    #[test]
    fn history_weights_recover_a_combination() {
        let q0 = gaussian(256, 1);
        let q1 = gaussian(256, 2);
        let target: Vec<f64> = q0.iter().zip(&q1).map(|(a, b)| 0.3 * a - 1.7 * b).collect();
        let (w, ridge) = history_weights(&[q0.clone(), q1], &target).unwrap();
        assert!(!ridge);
        assert!((w[0] - 0.3).abs() < 1e-10 && (w[1] + 1.7).abs() < 1e-10);
        let (w, ridge) = history_weights(&[q0.clone(), q0.clone()], &target).unwrap();
        assert!(ridge);
        assert!(w.iter().all(|v| v.is_finite()));
        assert!(history_weights(&[], &target).is_err());
    }
}
