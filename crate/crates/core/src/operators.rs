//! Matrix-free measurement operators.
//!
//! Two concrete operators are provided, both trace-normalized so that
//! `(1/N) Tr{A Aᵀ} = 1`:
//!
//! * [`OperatorKind::Dense`]: `A = U diag(s) Vᵀ` with Haar-like `U`, `V`
//!   drawn by QR of Gaussian matrices. Stores its SVD factors, intended for
//!   small oracle instances.
//! * [`OperatorKind::Fijl`]: the fast ill-conditioned Johnson-Lindenstrauss
//!   transform `A = J S P H D` (random signs, orthonormal DCT-II, random
//!   permutation, geometric singular values, first-`M`-rows subsampler),
//!   applied in `O(N log N)`.
//!
//! The singular values follow the geometric progression
//! `s_k = s_0 ρ^k`, `ρ = κ^(-1/(M-1))`, so `s_max / s_min = κ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rustdct::{Dct2, Dct3, DctPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::vecops::all_finite;

/// A real linear map `A: R^n -> R^m` with its adjoint.
pub trait LinearOperator: Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn forward_into(&self, x: &[f64], out: &mut [f64]);
    fn adjoint_into(&self, u: &[f64], out: &mut [f64]);

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m()];
        self.forward_into(x, &mut out);
        out
    }

    fn adjoint(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.adjoint_into(u, &mut out);
        out
    }

    /// `(1/N) Tr{A Aᵀ}`.
    fn normalized_trace(&self) -> f64;

    fn delta(&self) -> f64 {
        self.m() as f64 / self.n() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Dense,
    Fijl,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatorKind::Dense => "dense",
            OperatorKind::Fijl => "fijl",
        })
    }
}

/// Serializable description of an operator; `build` is deterministic in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub n: usize,
    pub m: usize,
    pub kappa: f64,
    pub seed: u64,
}

impl OperatorSpec {
    pub fn build(&self) -> Result<MeasurementOperator> {
        match self.kind {
            OperatorKind::Dense => build_dense(self.n, self.m, self.kappa, self.seed),
            OperatorKind::Fijl => build_fijl(&FijlSpec::new(self.n, self.m, self.kappa, self.seed)?),
        }
    }
}

fn check_shape(n: usize, m: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidShape(format!("empty operator (n={n}, m={m})")));
    }
    if m > n {
        return Err(Error::InvalidShape(format!("m={m} exceeds n={n}")));
    }
    Ok(())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!("condition number {kappa} must be finite and >= 1")));
    }
    Ok(())
}

/// Geometric spectrum with `s_max / s_min = kappa`, scaled so `(1/n) Σ s² = 1`.
pub fn geometric_spectrum(n: usize, m: usize, kappa: f64) -> Result<Vec<f64>> {
    check_shape(n, m)?;
    check_kappa(kappa)?;
    let raw: Vec<f64> = if m == 1 {
        vec![1.0]
    } else {
        let ratio = kappa.powf(-1.0 / (m as f64 - 1.0));
        (0..m).map(|k| ratio.powi(k as i32)).collect()
    };
    let energy: f64 = raw.iter().map(|s| s * s).sum();
    let c = (n as f64 / energy).sqrt();
    Ok(raw.into_iter().map(|s| c * s).collect())
}

/// Parameters of a FIJL operator, including its derived spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FijlSpec {
    pub n: usize,
    pub m: usize,
    pub kappa: f64,
    pub seed: u64,
    pub spectrum: Vec<f64>,
}

impl FijlSpec {
    pub fn new(n: usize, m: usize, kappa: f64, seed: u64) -> Result<Self> {
        let spectrum = geometric_spectrum(n, m, kappa)?;
        Ok(FijlSpec { n, m, kappa, seed, spectrum })
    }
}

/// SVD factors of a dense operator, `A = U diag(s) Vᵀ` with `V` of size `n × m`.
#[derive(Clone)]
pub struct DenseFactors {
    pub matrix: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

#[derive(Clone)]
struct FijlParts {
    signs: Vec<f64>,
    perm: Vec<usize>,
    dct2: Arc<dyn Dct2<f64>>,
    dct3: Arc<dyn Dct3<f64>>,
}

#[derive(Clone)]
enum Repr {
    Dense(DenseFactors),
    Fijl(FijlParts),
}

/// A trace-normalized measurement operator. Immutable after construction.
#[derive(Clone)]
pub struct MeasurementOperator {
    spec: OperatorSpec,
    spectrum: Vec<f64>,
    repr: Repr,
}

impl fmt::Debug for MeasurementOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeasurementOperator").field("spec", &self.spec).finish_non_exhaustive()
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut rng::Rng) -> DMatrix<f64> {
    // column-major fill keeps the draw order independent of nalgebra internals
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_vec(rows, cols, data)
}

/// Orthonormal columns from the QR of a Gaussian matrix, with the sign fix
/// that makes the distribution Haar.
fn haar_columns(rows: usize, cols: usize, rng: &mut rng::Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(rows, cols, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Dense operator with Haar-like singular vectors and a geometric spectrum.
pub fn build_dense(n: usize, m: usize, kappa: f64, seed: u64) -> Result<MeasurementOperator> {
    let spectrum = geometric_spectrum(n, m, kappa)?;
    let mut rng = rng::stream(seed);
    let v = haar_columns(n, m, &mut rng);
    let u = haar_columns(m, m, &mut rng);
    let mut us = u.clone();
    for (j, s) in spectrum.iter().enumerate() {
        us.column_mut(j).scale_mut(*s);
    }
    let matrix = &us * v.transpose();
    Ok(MeasurementOperator {
        spec: OperatorSpec { kind: OperatorKind::Dense, n, m, kappa, seed },
        spectrum,
        repr: Repr::Dense(DenseFactors { matrix, u, v }),
    })
}

/// FIJL operator `x ↦ J S P H D x`.
pub fn build_fijl(spec: &FijlSpec) -> Result<MeasurementOperator> {
    check_shape(spec.n, spec.m)?;
    check_kappa(spec.kappa)?;
    if spec.spectrum.len() != spec.m {
        return Err(Error::InvalidShape(format!(
            "spectrum has {} entries, expected m={}",
            spec.spectrum.len(),
            spec.m
        )));
    }
    let mut rng = rng::stream(spec.seed);
    let signs: Vec<f64> = (0..spec.n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
    let mut perm: Vec<usize> = (0..spec.n).collect();
    perm.shuffle(&mut rng);
    let mut planner = DctPlanner::new();
    let parts = FijlParts { signs, perm, dct2: planner.plan_dct2(spec.n), dct3: planner.plan_dct3(spec.n) };
    Ok(MeasurementOperator {
        spec: OperatorSpec { kind: OperatorKind::Fijl, n: spec.n, m: spec.m, kappa: spec.kappa, seed: spec.seed },
        spectrum: spec.spectrum.clone(),
        repr: Repr::Fijl(parts),
    })
}

/// Orthonormal DCT-II, in place.
pub fn dct2_orthonormal(plan: &dyn Dct2<f64>, buf: &mut [f64]) {
    let n = buf.len() as f64;
    plan.process_dct2(buf);
    let s0 = (1.0 / n).sqrt();
    let sk = (2.0 / n).sqrt();
    buf[0] *= s0;
    for v in &mut buf[1..] {
        *v *= sk;
    }
}

/// Inverse of [`dct2_orthonormal`] (orthonormal DCT-III), in place.
pub fn dct3_orthonormal(plan: &dyn Dct3<f64>, buf: &mut [f64]) {
    let n = buf.len() as f64;
    buf[0] *= 2.0 / n.sqrt();
    let sk = (2.0 / n).sqrt();
    for v in &mut buf[1..] {
        *v *= sk;
    }
    plan.process_dct3(buf);
}

impl MeasurementOperator {
    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn kind(&self) -> OperatorKind {
        self.spec.kind
    }

    /// Singular values, in construction order (descending).
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.spectrum.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.spectrum.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    pub fn dense_factors(&self) -> Option<&DenseFactors> {
        match &self.repr {
            Repr::Dense(f) => Some(f),
            Repr::Fijl(_) => None,
        }
    }

    /// Explicit `m × n` matrix. Cheap for dense operators, `O(n)` applications
    /// for FIJL; only meant for small oracle instances.
    pub fn materialize(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(f) => f.matrix.clone(),
            Repr::Fijl(_) => {
                let (m, n) = (self.spec.m, self.spec.n);
                let mut out = DMatrix::zeros(m, n);
                let mut e = vec![0.0; n];
                let mut col = vec![0.0; m];
                for j in 0..n {
                    e[j] = 1.0;
                    self.forward_into(&e, &mut col);
                    out.column_mut(j).copy_from_slice(&col);
                    e[j] = 0.0;
                }
                out
            }
        }
    }
}

impl LinearOperator for MeasurementOperator {
    fn n(&self) -> usize {
        self.spec.n
    }

    fn m(&self) -> usize {
        self.spec.m
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.spec.n, "forward: input length");
        assert_eq!(out.len(), self.spec.m, "forward: output length");
        match &self.repr {
            Repr::Dense(f) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = f.matrix.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            Repr::Fijl(p) => {
                let mut buf: Vec<f64> = x.iter().zip(&p.signs).map(|(v, s)| v * s).collect();
                dct2_orthonormal(p.dct2.as_ref(), &mut buf);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.spectrum[k] * buf[p.perm[k]];
                }
            }
        }
    }

    fn adjoint_into(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.spec.m, "adjoint: input length");
        assert_eq!(out.len(), self.spec.n, "adjoint: output length");
        match &self.repr {
            Repr::Dense(f) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, ui) in u.iter().enumerate() {
                    for (o, a) in out.iter_mut().zip(f.matrix.row(i).iter()) {
                        *o += a * ui;
                    }
                }
            }
            Repr::Fijl(p) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (k, uk) in u.iter().enumerate() {
                    out[p.perm[k]] = self.spectrum[k] * uk;
                }
                dct3_orthonormal(p.dct3.as_ref(), out);
                for (o, s) in out.iter_mut().zip(&p.signs) {
                    *o *= s;
                }
            }
        }
    }

    fn normalized_trace(&self) -> f64 {
        self.spectrum.iter().map(|s| s * s).sum::<f64>() / self.spec.n as f64
    }
}

/// `W u = v_w u + v_ba A Aᵀ u`, with one adjoint and one forward application.
pub fn apply_w<A: LinearOperator + ?Sized>(op: &A, v_w_tilde: f64, v_ba_tilde: f64, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != op.m() {
        return Err(Error::InvalidShape(format!("W input has length {}, expected {}", u.len(), op.m())));
    }
    if !all_finite(u) {
        return Err(Error::NumericInput("W input"));
    }
    let mut out = vec![0.0; op.m()];
    apply_w_into(op, v_w_tilde, v_ba_tilde, u, &mut out);
    Ok(out)
}

pub(crate) fn apply_w_into<A: LinearOperator + ?Sized>(op: &A, v_w: f64, v_ba: f64, u: &[f64], out: &mut [f64]) {
    let at_u = op.adjoint(u);
    op.forward_into(&at_u, out);
    for (o, ui) in out.iter_mut().zip(u) {
        *o = v_w * ui + v_ba * *o;
    }
}
