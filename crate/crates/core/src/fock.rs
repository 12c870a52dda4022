//! Truncated Fock-space linear algebra: dense complex operators on the span of
//! the first `dim` number states, Hermiticity/positivity validation, spectral
//! decompositions, and generating-operator factories.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{PsqError, Result};

/// Tolerances used across the crate. All are absolute unless noted.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Hermiticity defect allowed on validated inputs.
    pub tol_herm: f64,
    /// Most-negative eigenvalue allowed on positive operators.
    pub tol_pos: f64,
    /// Trace-one drift allowed on generating operators (before renormalizing).
    pub tol_trace: f64,
    /// Relative eigendecomposition reconstruction defect.
    pub tol_eig: f64,
    /// Unit-norm drift allowed on state vectors.
    pub tol_norm: f64,
    /// Interior-block unitarity defect allowed on Weyl matrices.
    pub unitarity_bound: f64,
    /// Truncation loss allowed when building coherent / squeezed vectors.
    pub truncation_bound: f64,
    /// Tail mass bound for tail-policy checks.
    pub tail_bound: f64,
    /// Fraction of the cutoff treated as the truncation-safe interior block.
    pub interior_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_herm: 1e-10,
            tol_pos: 1e-10,
            tol_trace: 1e-8,
            tol_eig: 1e-10,
            tol_norm: 1e-10,
            unitarity_bound: 1e-6,
            truncation_bound: 1e-8,
            tail_bound: 1e-6,
            interior_fraction: 0.5,
        }
    }
}

impl Tolerances {
    /// Indices below this bound form the interior block at cutoff `dim`.
    pub fn interior_dim(&self, dim: usize) -> usize {
        ((dim as f64 * self.interior_fraction).floor() as usize).clamp(1, dim)
    }
}

/// A dense operator on the span of the number states `|0>, ..., |dim-1>`.
///
/// Entry `(m, n)` is `<m|A|n>`; index 0 is the vacuum.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedOperator {
    mat: DMatrix<C64>,
}

impl TruncatedOperator {
    pub fn from_matrix(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(PsqError::DimMismatch {
                expected: mat.nrows(),
                got: mat.ncols(),
            });
        }
        Ok(Self { mat })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut mat = DMatrix::zeros(dim, dim);
        for (n, &d) in diag.iter().enumerate() {
            mat[(n, n)] = C64::new(d, 0.0);
        }
        Self { mat }
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        Self {
            mat: DMatrix::from_fn(dim, dim, f),
        }
    }

    /// Rank-one projector `|v><v|` (the vector is not normalized here).
    pub fn outer(v: &DVector<C64>) -> Self {
        let dim = v.len();
        let mat = DMatrix::from_fn(dim, dim, |m, n| v[m] * v[n].conj());
        Self { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn entry(&self, m: usize, n: usize) -> C64 {
        self.mat[(m, n)]
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<C64> {
        &mut self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
        }
    }

    /// Projection onto the Hermitian matrices: `(A + A*)/2`.
    ///
    /// The output equals its own conjugate transpose bitwise, and the map is
    /// idempotent.
    pub fn hermitize(&self) -> Self {
        let dim = self.dim();
        let mut out = DMatrix::zeros(dim, dim);
        for n in 0..dim {
            for m in 0..=n {
                let v = (self.mat[(m, n)] + self.mat[(n, m)].conj()) * 0.5;
                let v = if m == n { C64::new(v.re, 0.0) } else { v };
                out[(m, n)] = v;
                out[(n, m)] = v.conj();
            }
        }
        Self { mat: out }
    }

    /// Max-entry distance from Hermiticity.
    pub fn herm_defect(&self) -> f64 {
        let dim = self.dim();
        let mut worst = 0.0f64;
        for n in 0..dim {
            for m in 0..=n {
                let d = (self.mat[(m, n)] - self.mat[(n, m)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.mat.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    /// Frobenius (Hilbert-Schmidt) norm.
    pub fn hs_norm(&self) -> f64 {
        self.mat.norm()
    }

    /// Copy of the leading `k x k` block.
    pub fn interior_block(&self, k: usize) -> DMatrix<C64> {
        let k = k.min(self.dim());
        self.mat.view((0, 0), (k, k)).into_owned()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            mat: &self.mat * C64::new(s, 0.0),
        }
    }

    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        &self.mat * v
    }
}

impl std::ops::Add for &TruncatedOperator {
    type Output = TruncatedOperator;
    fn add(self, rhs: Self) -> TruncatedOperator {
        TruncatedOperator {
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl std::ops::Sub for &TruncatedOperator {
    type Output = TruncatedOperator;
    fn sub(self, rhs: Self) -> TruncatedOperator {
        TruncatedOperator {
            mat: &self.mat - &rhs.mat,
        }
    }
}

impl std::ops::Mul for &TruncatedOperator {
    type Output = TruncatedOperator;
    fn mul(self, rhs: Self) -> TruncatedOperator {
        TruncatedOperator {
            mat: &self.mat * &rhs.mat,
        }
    }
}

/// A unit vector in the truncated number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: DVector<C64>,
    norm: f64,
}

impl StateVector {
    pub fn from_amplitudes(amps: Vec<C64>) -> Self {
        let amps = DVector::from_vec(amps);
        let norm = amps.norm();
        Self { amps, norm }
    }

    /// Number state `|n>`.
    pub fn basis(dim: usize, n: usize) -> Self {
        let mut amps = DVector::zeros(dim);
        amps[n] = C64::new(1.0, 0.0);
        Self { amps, norm: 1.0 }
    }

    /// Truncated coherent vector `e^{-|a|^2/2} sum a^n/sqrt(n!) |n>`, renormalized.
    pub fn coherent(alpha: C64, dim: usize) -> Self {
        let mut amps = DVector::zeros(dim);
        let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
        for n in 0..dim {
            if n > 0 {
                c *= alpha / C64::new((n as f64).sqrt(), 0.0);
            }
            amps[n] = c;
        }
        let norm = amps.norm();
        Self {
            amps: amps / C64::new(norm, 0.0),
            norm: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn normalized(&self) -> Self {
        let norm = self.amps.norm();
        Self {
            amps: &self.amps / C64::new(norm, 0.0),
            norm: 1.0,
        }
    }

    pub fn check_unit(&self, tol: &Tolerances) -> Result<()> {
        let n = self.amps.norm();
        if (n - 1.0).abs() > tol.tol_norm {
            return Err(PsqError::DomainDiagnosticFailed(format!(
                "state norm {n} is not 1 within {:.1e}",
                tol.tol_norm
            )));
        }
        Ok(())
    }

    /// `<self|A|self>`.
    pub fn expectation(&self, a: &TruncatedOperator) -> C64 {
        let av = a.apply(&self.amps);
        self.amps.dotc(&av)
    }
}

/// Eigendecomposition of a Hermitian operator, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: DMatrix<C64>,
}

/// Hermitian eigendecomposition with an ascending sort and a reconstruction
/// check `||A - V L V*|| <= tol_eig * ||A||` (Frobenius).
pub fn spectral_data(a: &TruncatedOperator, tol: &Tolerances) -> Result<SpectralData> {
    let defect = a.herm_defect();
    if defect > tol.tol_herm {
        return Err(PsqError::NotHermitian {
            defect,
            tol: tol.tol_herm,
        });
    }
    let h = a.hermitize();
    let dim = h.dim();
    let se = nalgebra::SymmetricEigen::new(h.mat.clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(dim, dim);
    for (k, &i) in order.iter().enumerate() {
        eigenvectors.set_column(k, &se.eigenvectors.column(i));
    }

    // reconstruction check
    let mut rec = DMatrix::<C64>::zeros(dim, dim);
    for k in 0..dim {
        let lam = C64::new(eigenvalues[k], 0.0);
        let v = eigenvectors.column(k);
        for j in 0..dim {
            let w = v[j].conj() * lam;
            for i in 0..dim {
                rec[(i, j)] += v[i] * w;
            }
        }
    }
    let scale = h.mat.norm().max(1.0);
    let rec_defect = (&h.mat - &rec).norm();
    if rec_defect > tol.tol_eig * scale {
        return Err(PsqError::EigenDefect {
            defect: rec_defect / scale,
            tol: tol.tol_eig,
        });
    }
    Ok(SpectralData {
        eigenvalues,
        eigenvectors,
    })
}

impl SpectralData {
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

/// Spectral norm of a Hermitian matrix (largest |eigenvalue|).
pub fn spectral_norm_hermitian(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let se = nalgebra::SymmetricEigen::new(m.clone());
    se.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()))
}

/// Spectral norm of a general matrix via the Gram matrix.
pub fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let gram = m.adjoint() * m;
    let se = nalgebra::SymmetricEigen::new(gram);
    se.eigenvalues
        .iter()
        .fold(0.0f64, |a, &l| a.max(l.max(0.0)))
        .sqrt()
}

/// Principal square root of a positive semidefinite Hermitian matrix.
///
/// Eigenvalues in `[-clip_tol, 0)` are floored to zero; the largest clipped
/// magnitude is returned. More negative eigenvalues are an error.
pub fn psd_sqrt(
    a: &TruncatedOperator,
    clip_tol: f64,
    tol: &Tolerances,
) -> Result<(TruncatedOperator, f64)> {
    let sd = spectral_data(a, tol)?;
    let dim = a.dim();
    let mut clipped = 0.0f64;
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for k in 0..dim {
        let lam = sd.eigenvalues[k];
        if lam < -clip_tol {
            return Err(PsqError::NotPositive {
                min_eigenvalue: lam,
                tol: clip_tol,
            });
        }
        if lam < 0.0 {
            clipped = clipped.max(-lam);
            continue;
        }
        let s = C64::new(lam.sqrt(), 0.0);
        let v = sd.eigenvectors.column(k);
        for j in 0..dim {
            let w = v[j].conj() * s;
            for i in 0..dim {
                out[(i, j)] += v[i] * w;
            }
        }
    }
    Ok((TruncatedOperator { mat: out }.hermitize(), clipped))
}

/// Diagnostics recorded when a generating operator is built.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeneratingDiagnostics {
    pub herm_defect: f64,
    pub min_eigenvalue: f64,
    pub trace_defect: f64,
    /// Truncation loss for coherent / squeezed constructions.
    pub truncation_loss: Option<f64>,
}

/// A positive trace-one operator: the generating operator of a covariant
/// phase-space observable.
#[derive(Debug, Clone)]
pub struct GeneratingOperator {
    op: TruncatedOperator,
    /// Number-basis weights when the operator is diagonal by construction.
    weights: Option<Vec<f64>>,
    diagnostics: GeneratingDiagnostics,
}

impl GeneratingOperator {
    pub fn op(&self) -> &TruncatedOperator {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn diagnostics(&self) -> &GeneratingDiagnostics {
        &self.diagnostics
    }

    /// True when the operator is diagonal in the number basis within `tol`.
    pub fn is_number_diagonal(&self, tol: f64) -> bool {
        if self.weights.is_some() {
            return true;
        }
        let dim = self.dim();
        let mut worst = 0.0f64;
        for m in 0..dim {
            for n in 0..dim {
                if m != n {
                    worst = worst.max(self.op.entry(m, n).norm());
                }
            }
        }
        worst <= tol
    }
}

/// Validate an arbitrary matrix as a generating operator: Hermitize, check
/// positivity, and normalize a small trace drift.
pub fn validate_generating(op: &TruncatedOperator, tol: &Tolerances) -> Result<GeneratingOperator> {
    if op.dim() < 2 {
        return Err(PsqError::DimTooSmall {
            dim: op.dim(),
            min: 2,
        });
    }
    let herm_defect = op.herm_defect();
    let h = op.hermitize();
    let tr = h.trace().re;
    let trace_defect = (tr - 1.0).abs();
    if trace_defect > tol.tol_trace {
        return Err(PsqError::TraceDrift {
            trace: tr,
            tol: tol.tol_trace,
        });
    }
    let normalized = h.scale(1.0 / tr);
    let sd = spectral_data(&normalized, tol)?;
    let min_eigenvalue = sd.min_eigenvalue();
    if min_eigenvalue < -tol.tol_pos {
        return Err(PsqError::NotPositive {
            min_eigenvalue,
            tol: tol.tol_pos,
        });
    }
    Ok(GeneratingOperator {
        op: normalized,
        weights: None,
        diagnostics: GeneratingDiagnostics {
            herm_defect,
            min_eigenvalue,
            trace_defect,
            truncation_loss: None,
        },
    })
}

/// Diagonal generating operator `sum_n w_n |n><n|`.
///
/// A weight-sum deficit within `tol_trace` is renormalized away; larger
/// deficits are an error.
pub fn make_number_mixture(weights: &[f64], dim: usize, tol: &Tolerances) -> Result<GeneratingOperator> {
    if dim < 2 {
        return Err(PsqError::DimTooSmall { dim, min: 2 });
    }
    if weights.len() > dim {
        return Err(PsqError::DimMismatch {
            expected: dim,
            got: weights.len(),
        });
    }
    for (index, &value) in weights.iter().enumerate() {
        if value < 0.0 {
            return Err(PsqError::NegativeWeight { index, value });
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > tol.tol_trace {
        return Err(PsqError::WeightSumDrift {
            sum,
            tol: tol.tol_trace,
        });
    }
    let mut w = vec![0.0f64; dim];
    for (n, &v) in weights.iter().enumerate() {
        w[n] = v / sum;
    }
    let op = TruncatedOperator::from_diagonal(&w);
    let min_eigenvalue = w.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    Ok(GeneratingOperator {
        op,
        weights: Some(w),
        diagnostics: GeneratingDiagnostics {
            herm_defect: 0.0,
            min_eigenvalue,
            trace_defect: (sum - 1.0).abs(),
            truncation_loss: None,
        },
    })
}

/// `|n><n|` as a generating operator.
pub fn number_state(n: usize, dim: usize, tol: &Tolerances) -> Result<GeneratingOperator> {
    if n >= dim {
        return Err(PsqError::DimMismatch {
            expected: dim,
            got: n + 1,
        });
    }
    let mut w = vec![0.0; n + 1];
    w[n] = 1.0;
    make_number_mixture(&w, dim, tol)
}

/// The vacuum projector `|0><0|`.
pub fn vacuum(dim: usize, tol: &Tolerances) -> Result<GeneratingOperator> {
    number_state(0, dim, tol)
}

/// Truncated geometric (thermal) weights `(1-s) s^n`, `n < dim`.
pub fn thermal_weights(s: f64, dim: usize) -> Vec<f64> {
    (0..dim).map(|n| (1.0 - s) * s.powi(n as i32)).collect()
}

/// Thermal generating operator with parameter `s in [0, 1)`; the geometric
/// tail beyond the cutoff is folded in by renormalization.
pub fn thermal(s: f64, dim: usize, tol: &Tolerances) -> Result<GeneratingOperator> {
    if !(0.0..1.0).contains(&s) {
        return Err(PsqError::DomainDiagnosticFailed(format!(
            "thermal parameter s = {s} outside [0, 1)"
        )));
    }
    let w = thermal_weights(s, dim);
    let tail = s.powi(dim as i32);
    if tail > tol.tol_trace {
        return Err(PsqError::WeightSumDrift {
            sum: 1.0 - tail,
            tol: tol.tol_trace,
        });
    }
    make_number_mixture(&w, dim, tol)
}

/// Poisson tail mass `sum_{n >= dim} e^{-x} x^n / n!` with `x = |alpha|^2`,
/// summed directly so that tiny losses are not destroyed by cancellation.
pub fn coherent_truncation_loss(alpha: C64, dim: usize) -> f64 {
    let x = alpha.norm_sqr();
    if x == 0.0 {
        return 0.0;
    }
    // term at n = dim, computed in log space to avoid overflow
    let mut log_term = -x + (dim as f64) * x.ln() - ln_factorial(dim);
    let mut total = 0.0f64;
    let mut n = dim;
    loop {
        let term = log_term.exp();
        total += term;
        n += 1;
        log_term += x.ln() - (n as f64).ln();
        if n > dim + 2000 || (term < total * 1e-18 && n as f64 > x) {
            break;
        }
    }
    total
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Rank-one projector onto the truncated coherent vector.
///
/// Errors with `TruncationLoss` when the Poisson mass beyond the cutoff
/// exceeds the configured bound.
pub fn make_coherent_projector(alpha: C64, dim: usize, tol: &Tolerances) -> Result<GeneratingOperator> {
    if dim < 2 {
        return Err(PsqError::DimTooSmall { dim, min: 2 });
    }
    let loss = coherent_truncation_loss(alpha, dim);
    if loss > tol.truncation_bound {
        return Err(PsqError::TruncationLoss {
            loss,
            bound: tol.truncation_bound,
        });
    }
    let v = StateVector::coherent(alpha, dim);
    let op = TruncatedOperator::outer(v.amplitudes()).hermitize();
    Ok(GeneratingOperator {
        op,
        weights: None,
        diagnostics: GeneratingDiagnostics {
            herm_defect: 0.0,
            min_eigenvalue: 0.0,
            trace_defect: 0.0,
            truncation_loss: Some(loss),
        },
    })
}

/// Squeezed vacuum with position variance `var_q`, built by projecting the
/// normalized Gaussian `psi(t) = (2 pi v)^{-1/4} e^{-t^2/(4v)}` onto the
/// Hermite functions.
pub fn make_squeezed_vacuum(var_q: f64, dim: usize, tol: &Tolerances) -> Result<GeneratingOperator> {
    if dim < 2 {
        return Err(PsqError::DimTooSmall { dim, min: 2 });
    }
    if var_q <= 0.0 {
        return Err(PsqError::DomainDiagnosticFailed(format!(
            "squeezed variance {var_q} must be positive"
        )));
    }
    let amps = gaussian_fock_amplitudes(var_q, dim);
    let captured: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
    let loss = (1.0 - captured).max(0.0);
    if loss > tol.truncation_bound {
        return Err(PsqError::TruncationLoss {
            loss,
            bound: tol.truncation_bound,
        });
    }
    let v = StateVector::from_amplitudes(amps).normalized();
    let op = TruncatedOperator::outer(v.amplitudes()).hermitize();
    Ok(GeneratingOperator {
        op,
        weights: None,
        diagnostics: GeneratingDiagnostics {
            herm_defect: 0.0,
            min_eigenvalue: 0.0,
            trace_defect: 0.0,
            truncation_loss: Some(loss),
        },
    })
}

/// Fock amplitudes `c_n = int psi(t) h_n(t) dt` of the centered Gaussian with
/// variance `v`, via Gauss-Legendre quadrature and the stable orthonormal
/// Hermite-function recurrence.
fn gaussian_fock_amplitudes(v: f64, dim: usize) -> Vec<C64> {
    let half = 10.0f64.max(8.0 * v.sqrt());
    let (nodes, weights) = crate::quad::gauss_legendre(256);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * v).powf(0.25);
    let mut c = vec![0.0f64; dim];
    for (&x, &w) in nodes.iter().zip(&weights) {
        let t = half * x;
        let wt = half * w;
        let psi = norm * (-t * t / (4.0 * v)).exp();
        // h_0 = pi^{-1/4} e^{-t^2/2}; h_{n+1} = sqrt(2/(n+1)) t h_n - sqrt(n/(n+1)) h_{n-1}
        let mut hn = std::f64::consts::PI.powf(-0.25) * (-0.5 * t * t).exp();
        let mut hn_prev = 0.0f64;
        for n in 0..dim {
            c[n] += wt * psi * hn;
            let np1 = (n + 1) as f64;
            let next = (2.0 / np1).sqrt() * t * hn - (n as f64 / np1).sqrt() * hn_prev;
            hn_prev = hn;
            hn = next;
        }
    }
    c.into_iter().map(|x| C64::new(x, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn hermitize_output_is_exactly_selfadjoint_and_idempotent() {
        let a = TruncatedOperator::from_fn(5, |m, n| C64::new(m as f64 - 0.3, n as f64 * 0.7));
        let h = a.hermitize();
        assert_eq!(h.matrix(), &h.matrix().adjoint());
        let hh = h.hermitize();
        assert_eq!(h.matrix(), hh.matrix());
        assert_eq!(h.herm_defect(), 0.0);
    }

    #[test]
    fn validate_accepts_maximally_mixed() {
        let d = 6;
        let op = TruncatedOperator::identity(d).scale(1.0 / d as f64);
        let t = validate_generating(&op, &tols()).unwrap();
        assert!(t.diagnostics().min_eigenvalue > 0.0);
        assert_abs_diff_eq!(t.op().trace().re, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn validate_accepts_vacuum_projector() {
        let mut op = TruncatedOperator::zeros(4);
        op.matrix_mut()[(0, 0)] = C64::new(1.0, 0.0);
        let t = validate_generating(&op, &tols()).unwrap();
        assert_abs_diff_eq!(t.op().entry(0, 0).re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn validate_rejects_negative_eigenvalue() {
        // diag(1.01, -0.01): trace one, but not positive
        let op = TruncatedOperator::from_diagonal(&[1.01, -0.01]);
        match validate_generating(&op, &tols()) {
            Err(PsqError::NotPositive { min_eigenvalue, .. }) => {
                assert_abs_diff_eq!(min_eigenvalue, -0.01, epsilon = 1e-12)
            }
            other => panic!("expected NotPositive, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_trace_drift() {
        let op = TruncatedOperator::from_diagonal(&[0.6, 0.3]);
        assert!(matches!(
            validate_generating(&op, &tols()),
            Err(PsqError::TraceDrift { .. })
        ));
    }

    #[test]
    fn number_mixture_basics() {
        let t = make_number_mixture(&[1.0], 4, &tols()).unwrap();
        assert_abs_diff_eq!(t.op().entry(0, 0).re, 1.0, epsilon = 1e-15);
        let t = make_number_mixture(&[0.5, 0.5], 4, &tols()).unwrap();
        assert_abs_diff_eq!(t.op().entry(1, 1).re, 0.5, epsilon = 1e-15);
        assert!(t.is_number_diagonal(0.0));
        assert!(matches!(
            make_number_mixture(&[0.5, -0.1, 0.6], 4, &tols()),
            Err(PsqError::NegativeWeight { index: 1, .. })
        ));
        assert!(matches!(
            make_number_mixture(&[0.5, 0.4], 4, &tols()),
            Err(PsqError::WeightSumDrift { .. })
        ));
    }

    #[test]
    fn thermal_tail_is_folded() {
        // s = 0.5, D = 40: geometric tail mass 0.5^40 < 1e-11 is renormalized in
        let d = 40;
        let t = thermal(0.5, d, &tols()).unwrap();
        let tail = 0.5f64.powi(40);
        assert!(tail < 1e-11);
        let sum: f64 = t.weights().unwrap().iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.diagnostics().trace_defect, tail, epsilon = 1e-13);
        // w_0 is (1-s) scaled by 1/(1-tail)
        assert_abs_diff_eq!(t.weights().unwrap()[0], 0.5 / (1.0 - tail), epsilon = 1e-15);
    }

    #[test]
    fn number_mixture_commutes_with_number_matrix() {
        let d = 40;
        let t = thermal(0.3, d, &tols()).unwrap();
        let n = TruncatedOperator::from_diagonal(&(0..d).map(|k| k as f64).collect::<Vec<_>>());
        let comm = &(t.op() * &n) - &(&n * t.op());
        assert!(comm.max_abs_entry() < 1e-14);
    }

    #[test]
    fn coherent_projector_examples() {
        // alpha = 0 is the vacuum projector
        let t = make_coherent_projector(C64::new(0.0, 0.0), 8, &tols()).unwrap();
        assert_abs_diff_eq!(t.op().entry(0, 0).re, 1.0, epsilon = 1e-15);
        // alpha = 1, D = 40: Poisson tail beyond the cutoff is far below 1e-30
        let loss = coherent_truncation_loss(C64::new(1.0, 0.0), 40);
        assert!(loss < 1e-30, "loss = {loss:.3e}");
        assert!(make_coherent_projector(C64::new(1.0, 0.0), 40, &tols()).is_ok());
        // alpha = 8, D = 40: Poisson(64) mass beyond 40 is order one
        let loss = coherent_truncation_loss(C64::new(8.0, 0.0), 40);
        assert!(loss > 0.1, "loss = {loss:.3e}");
        assert!(matches!(
            make_coherent_projector(C64::new(8.0, 0.0), 40, &tols()),
            Err(PsqError::TruncationLoss { .. })
        ));
    }

    #[test]
    fn coherent_loss_against_direct_poisson_sum() {
        // independent oracle: sum the head, subtract from one at high precision
        let alpha = C64::new(2.0, -1.0);
        let d = 12;
        let x = alpha.norm_sqr();
        let mut head = 0.0f64;
        let mut term = (-x).exp();
        for n in 0..d {
            if n > 0 {
                term *= x / n as f64;
            }
            head += term;
        }
        let want = 1.0 - head;
        let got = coherent_truncation_loss(alpha, d);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn spectral_data_simple_cases() {
        let sd = spectral_data(&TruncatedOperator::identity(5), &tols()).unwrap();
        for l in &sd.eigenvalues {
            assert_abs_diff_eq!(*l, 1.0, epsilon = 1e-13);
        }
        let sd = spectral_data(&TruncatedOperator::from_diagonal(&[0.7, 0.3]), &tols()).unwrap();
        assert_abs_diff_eq!(sd.eigenvalues[0], 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(sd.eigenvalues[1], 0.7, epsilon = 1e-14);
        let skew = TruncatedOperator::from_fn(3, |m, n| C64::new(m as f64 + 0.2 * n as f64, 0.0));
        assert!(matches!(
            spectral_data(&skew, &tols()),
            Err(PsqError::NotHermitian { .. })
        ));
    }

    /// Roots of the physicists' Hermite polynomial H_n by bisection on the
    /// orthonormal recurrence; independent of the eigensolver path.
    fn hermite_roots(n: usize) -> Vec<f64> {
        let eval = |x: f64| -> f64 {
            // orthonormal Hermite-polynomial values keep magnitudes moderate
            let mut p_prev = 0.0f64;
            let mut p = std::f64::consts::PI.powf(-0.25);
            for k in 0..n {
                let kf = k as f64;
                let next = ((2.0 / (kf + 1.0)).sqrt() * x * p) - ((kf / (kf + 1.0)).sqrt() * p_prev);
                p_prev = p;
                p = next;
            }
            p
        };
        let bound = (2.0 * n as f64 + 1.0).sqrt() + 1.0;
        let steps = 20_000usize;
        let h = 2.0 * bound / steps as f64;
        let mut roots = Vec::with_capacity(n);
        let mut x0 = -bound;
        let mut f0 = eval(x0);
        for i in 1..=steps {
            let x1 = -bound + i as f64 * h;
            let f1 = eval(x1);
            if f0 == 0.0 {
                roots.push(x0);
            } else if f0 * f1 < 0.0 {
                let (mut a, mut b) = (x0, x1);
                let (mut fa, _) = (f0, f1);
                for _ in 0..100 {
                    let mid = 0.5 * (a + b);
                    let fm = eval(mid);
                    if fa * fm <= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                        fa = fm;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            x0 = x1;
            f0 = f1;
        }
        roots
    }

    #[test]
    fn truncated_q_eigenvalues_are_hermite_roots() {
        // truncated Q at D = 60 is the Jacobi matrix of the Hermite recurrence
        let d = 60;
        let q = crate::canonical::canonical_set(d).unwrap().q_op;
        let sd = spectral_data(&q, &tols()).unwrap();
        let roots = hermite_roots(d);
        assert_eq!(roots.len(), d);
        for (got, want) in sd.eigenvalues.iter().zip(&roots) {
            assert_abs_diff_eq!(*got, *want, epsilon = 1e-9);
        }
    }

    #[test]
    fn psd_sqrt_roundtrip_and_clipping() {
        let t = make_number_mixture(&[0.5, 0.3, 0.15, 0.05], 8, &tols()).unwrap();
        let (root, clipped) = psd_sqrt(t.op(), 1e-10, &tols()).unwrap();
        assert_eq!(clipped, 0.0);
        let back = &root * &root;
        assert!((&back - t.op()).max_abs_entry() < 1e-13);
        // a genuinely negative operator is rejected
        let bad = TruncatedOperator::from_diagonal(&[1.0, -1e-6]);
        assert!(matches!(
            psd_sqrt(&bad, 1e-10, &tols()),
            Err(PsqError::NotPositive { .. })
        ));
    }

    #[test]
    fn coherent_state_vector_is_normalized_poisson() {
        let alpha = C64::new(0.8, 0.5);
        let v = StateVector::coherent(alpha, 30);
        assert_abs_diff_eq!(v.amplitudes().norm(), 1.0, epsilon = 1e-14);
        // amplitude ratios follow alpha/sqrt(n)
        let r = v.amplitudes()[3] / v.amplitudes()[2];
        assert_abs_diff_eq!(r.re, (alpha / C64::new(3.0f64.sqrt(), 0.0)).re, epsilon = 1e-12);
        assert_abs_diff_eq!(r.im, (alpha / C64::new(3.0f64.sqrt(), 0.0)).im, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn hermitize_is_projection_onto_hermitian(entries in proptest::collection::vec(-10.0f64..10.0, 32)) {
            let a = TruncatedOperator::from_fn(4, |m, n| {
                C64::new(entries[m * 4 + n], entries[16 + m * 4 + n])
            });
            let h = a.hermitize();
            prop_assert_eq!(h.matrix(), &h.matrix().adjoint());
            let twice = h.hermitize();
            prop_assert_eq!(twice.matrix(), h.matrix());
        }
    }
}
