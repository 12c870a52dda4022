//! Canonical operators on the truncated Fock space: ladder operators, the
//! quadratures Q and P, the number operator, Weyl displacement operators, and
//! phase shifts.
//!
//! Conventions: `W(q, p) = exp(i (p Q + q P))`, which equals the displacement
//! operator `D(alpha)` with `alpha = (-q + i p)/sqrt(2)`. The automorphism
//! `beta(q, p)(T) = W(-q, p) T W(-q, p)*` is conjugation by
//! `D((q + i p)/sqrt(2))`, so `beta(q, p)(|0><0|)` is the projector onto the
//! coherent state with amplitude `(q + i p)/sqrt(2)`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{PsqError, Result};
use crate::fock::{GeneratingOperator, Tolerances, TruncatedOperator};

/// A point `(q, p)` of the phase plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylPoint {
    pub q: f64,
    pub p: f64,
}

impl WeylPoint {
    pub fn new(q: f64, p: f64) -> Self {
        Self { q, p }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.p.is_finite()
    }

    /// Displacement amplitude of `W(q, p)`: `(-q + i p)/sqrt(2)`.
    pub fn weyl_alpha(&self) -> C64 {
        C64::new(-self.q, self.p) * std::f64::consts::FRAC_1_SQRT_2
    }

    /// Displacement amplitude of the beta-action unitary `W(-q, p)`:
    /// `(q + i p)/sqrt(2)`.
    pub fn beta_alpha(&self) -> C64 {
        C64::new(self.q, self.p) * std::f64::consts::FRAC_1_SQRT_2
    }
}

/// The ladder operators and the canonical matrices built from them.
#[derive(Debug, Clone)]
pub struct CanonicalSet {
    dim: usize,
    pub a_plus: TruncatedOperator,
    pub a_minus: TruncatedOperator,
    pub q_op: TruncatedOperator,
    pub p_op: TruncatedOperator,
    pub n_op: TruncatedOperator,
}

impl CanonicalSet {
    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Build the canonical set at cutoff `dim`:
/// `a_minus |n> = sqrt(n) |n-1>`, `a_plus = a_minus*`,
/// `Q = (a_+ + a_-)/sqrt(2)`, `P = i (a_+ - a_-)/sqrt(2)`,
/// `N = diag(0..dim-1)`.
pub fn canonical_set(dim: usize) -> Result<CanonicalSet> {
    if dim < 2 {
        return Err(PsqError::DimTooSmall { dim, min: 2 });
    }
    let mut lower = DMatrix::<C64>::zeros(dim, dim);
    for n in 1..dim {
        lower[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let a_minus = TruncatedOperator::from_matrix(lower)?;
    let a_plus = a_minus.adjoint();
    let inv_sqrt2 = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let q_mat = (a_plus.matrix() + a_minus.matrix()) * inv_sqrt2;
    let p_mat = (a_plus.matrix() - a_minus.matrix()) * (C64::i() * inv_sqrt2);
    let q_op = TruncatedOperator::from_matrix(q_mat)?.hermitize();
    let p_op = TruncatedOperator::from_matrix(p_mat)?.hermitize();
    let n_op = TruncatedOperator::from_diagonal(&(0..dim).map(|n| n as f64).collect::<Vec<_>>());
    Ok(CanonicalSet {
        dim,
        a_plus,
        a_minus,
        q_op,
        p_op,
        n_op,
    })
}

/// Closed-form displacement matrix `<m|D(alpha)|n>` at cutoff `dim`.
///
/// For `m >= n`: `sqrt(n!/m!) alpha^{m-n} e^{-|alpha|^2/2} L_n^{(m-n)}(|alpha|^2)`,
/// and the conjugate-symmetric rule above the diagonal. The Laguerre values
/// come from the three-term recurrence in the degree along each diagonal, and
/// the factorial ratios from cumulative square-root products, so there is no
/// overflow up to cutoffs of a few hundred.
pub fn displacement(alpha: C64, dim: usize) -> TruncatedOperator {
    let x = alpha.norm_sqr();
    let emag = (-0.5 * x).exp();
    let mut m = DMatrix::<C64>::zeros(dim, dim);
    let mut alpha_pow = C64::new(1.0, 0.0); // alpha^k
    let mut neg_conj_pow = C64::new(1.0, 0.0); // (-conj(alpha))^k
    let mut inv_sqrt_kfact = 1.0f64; // 1/sqrt(k!)
    for k in 0..dim {
        if k > 0 {
            alpha_pow *= alpha;
            neg_conj_pow *= -alpha.conj();
            inv_sqrt_kfact /= (k as f64).sqrt();
        }
        let kf = k as f64;
        let mut lag_prev = 0.0f64;
        let mut lag = 1.0f64; // L_0^{(k)}(x)
        let mut t = inv_sqrt_kfact; // t_n = sqrt(n!/(n+k)!)
        for n in 0..dim - k {
            let c = t * emag * lag;
            m[(n + k, n)] = alpha_pow * c;
            if k > 0 {
                m[(n, n + k)] = neg_conj_pow * c;
            }
            let nf = n as f64;
            let lag_next = ((2.0 * nf + 1.0 + kf - x) * lag - (nf + kf) * lag_prev) / (nf + 1.0);
            lag_prev = lag;
            lag = lag_next;
            t *= ((nf + 1.0) / (nf + 1.0 + kf)).sqrt();
        }
    }
    TruncatedOperator::from_matrix(m).expect("square by construction")
}

/// Interior-block unitarity defect of a truncated displacement-type matrix:
/// the max entry of `W* W - I` over indices below `interior`.
pub fn unitarity_defect(w: &TruncatedOperator, interior: usize) -> f64 {
    let dim = w.dim();
    let interior = interior.min(dim);
    let mut worst = 0.0f64;
    for a in 0..interior {
        for b in a..interior {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..dim {
                s += w.entry(j, a).conj() * w.entry(j, b);
            }
            if a == b {
                s -= 1.0;
            }
            worst = worst.max(s.norm());
        }
    }
    worst
}

/// The truncated Weyl operator `W(q, p) = exp(i (p Q + q P))`.
///
/// Errors with `UnitarityLoss` when the interior block of `W* W - I` exceeds
/// the configured bound, which signals a cutoff too small for the requested
/// displacement.
pub fn weyl(point: WeylPoint, dim: usize, tol: &Tolerances) -> Result<TruncatedOperator> {
    if !point.is_finite() {
        return Err(PsqError::DomainDiagnosticFailed(
            "Weyl point must be finite".into(),
        ));
    }
    let w = displacement(point.weyl_alpha(), dim);
    let defect = unitarity_defect(&w, tol.interior_dim(dim));
    if defect > tol.unitarity_bound {
        return Err(PsqError::UnitarityLoss {
            defect,
            bound: tol.unitarity_bound,
        });
    }
    Ok(w)
}

/// The unitary implementing `beta(q, p)`: `W(-q, p) = D((q + i p)/sqrt(2))`.
pub fn beta_unitary(point: WeylPoint, dim: usize) -> TruncatedOperator {
    displacement(point.beta_alpha(), dim)
}

/// `beta(q, p)(T) = W(-q, p) T W(-q, p)*`, Hermitized.
pub fn beta_action(point: WeylPoint, t: &GeneratingOperator) -> TruncatedOperator {
    let u = beta_unitary(point, t.dim());
    beta_conjugate(&u, t.op())
}

/// `U A U*` for arbitrary operators, Hermitized when `A` is Hermitian.
pub fn beta_conjugate(u: &TruncatedOperator, a: &TruncatedOperator) -> TruncatedOperator {
    let prod = u.matrix() * a.matrix() * u.matrix().adjoint();
    let out = TruncatedOperator::from_matrix(prod).expect("square");
    if a.herm_defect() < 1e-12 {
        out.hermitize()
    } else {
        out
    }
}

/// Exact diagonal phase shift `e^{i theta N}`.
///
/// The angle is reduced modulo 2 pi first, so full turns give the identity
/// exactly.
pub fn phase_shift(theta: f64, dim: usize) -> TruncatedOperator {
    let reduced = theta.rem_euclid(std::f64::consts::TAU);
    let reduced = if reduced == std::f64::consts::TAU {
        0.0
    } else {
        reduced
    };
    TruncatedOperator::from_fn(dim, |m, n| {
        if m == n {
            let ph = reduced * m as f64;
            C64::new(ph.cos(), ph.sin())
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Phase `c` with `W(g) W(h) = c W(g + h)`: `exp(i (q_g p_h - p_g q_h)/2)`.
pub fn weyl_composition_phase(g: WeylPoint, h: WeylPoint) -> C64 {
    let s = 0.5 * (g.q * h.p - g.p * h.q);
    C64::new(s.cos(), s.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ladder_and_quadrature_conventions() {
        let c = canonical_set(3).unwrap();
        // a_-|1> = |0>, a_-|2> = sqrt(2)|1>
        assert_abs_diff_eq!(c.a_minus.entry(0, 1).re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.a_minus.entry(1, 2).re, 2.0f64.sqrt(), epsilon = 1e-15);
        // <0|Q|1> = 1/sqrt(2)
        assert_abs_diff_eq!(
            c.q_op.entry(0, 1).re,
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        assert_eq!(c.q_op.herm_defect(), 0.0);
        assert_eq!(c.p_op.herm_defect(), 0.0);
        // N = diag(0, 1, 2), and equals a_+ a_- up to rounding
        assert_abs_diff_eq!(c.n_op.entry(2, 2).re, 2.0, epsilon = 0.0);
        let prod = &c.a_plus * &c.a_minus;
        assert!((&prod - &c.n_op).max_abs_entry() < 1e-14);
    }

    #[test]
    fn commutator_is_i_with_truncation_corner() {
        let d = 3;
        let c = canonical_set(d).unwrap();
        let comm = &(&c.q_op * &c.p_op) - &(&c.p_op * &c.q_op);
        for m in 0..d - 1 {
            for n in 0..d - 1 {
                let want = if m == n { C64::i() } else { C64::new(0.0, 0.0) };
                assert_abs_diff_eq!(comm.entry(m, n).re, want.re, epsilon = 1e-14);
                assert_abs_diff_eq!(comm.entry(m, n).im, want.im, epsilon = 1e-14);
            }
        }
        // the (D-1, D-1) entry is i(1 - D), a pure truncation artifact
        assert_abs_diff_eq!(comm.entry(d - 1, d - 1).im, 1.0 - d as f64, epsilon = 1e-14);
    }

    #[test]
    fn dim_too_small_rejected() {
        assert!(matches!(
            canonical_set(1),
            Err(PsqError::DimTooSmall { .. })
        ));
    }

    #[test]
    fn phase_shift_values_and_unitarity() {
        let d = 3;
        assert!((&phase_shift(0.0, d) - &TruncatedOperator::identity(d)).max_abs_entry() == 0.0);
        // full turn is the identity exactly
        assert!(
            (&phase_shift(std::f64::consts::TAU, d) - &TruncatedOperator::identity(d))
                .max_abs_entry()
                == 0.0
        );
        let half = phase_shift(std::f64::consts::PI, d);
        assert_abs_diff_eq!(half.entry(0, 0).re, 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(half.entry(1, 1).re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(half.entry(2, 2).re, 1.0, epsilon = 1e-14);
        // P*P = I to machine precision for arbitrary angles
        let p = phase_shift(1.234567, 40);
        let gram = &p.adjoint() * &p;
        assert!((&gram - &TruncatedOperator::identity(40)).max_abs_entry() < 1e-15);
    }

    #[test]
    fn displacement_at_zero_is_identity() {
        let w = displacement(C64::new(0.0, 0.0), 10);
        assert!((&w - &TruncatedOperator::identity(10)).max_abs_entry() == 0.0);
    }

    #[test]
    fn weyl_vacuum_matrix_element() {
        // <0|W(q,p)|0> = e^{-(q^2+p^2)/4}; entries of the closed form are exact,
        // so this needs no cutoff headroom
        for (q, p) in [(0.7, -0.4), (1.5, 2.0), (-2.0, 0.3)] {
            let w = displacement(WeylPoint::new(q, p).weyl_alpha(), 40);
            let want = (-(q * q + p * p) / 4.0).exp();
            assert_abs_diff_eq!(w.entry(0, 0).re, want, epsilon = 1e-13);
            assert_abs_diff_eq!(w.entry(0, 0).im, 0.0, epsilon = 1e-13);
        }
        // weyl() itself passes its unitarity gate for small displacements
        let w = weyl(WeylPoint::new(0.5, -0.3), 40, &Tolerances::default()).unwrap();
        assert_abs_diff_eq!(w.entry(0, 0).re, (-0.34f64 / 4.0).exp(), epsilon = 1e-13);
    }

    #[test]
    fn weyl_unitarity_loss_fires_for_large_displacement() {
        let res = weyl(WeylPoint::new(9.0, 0.0), 12, &Tolerances::default());
        assert!(matches!(res, Err(PsqError::UnitarityLoss { .. })));
    }

    #[test]
    fn beta_action_fixes_t_at_origin() {
        let t = crate::fock::thermal(0.5, 40, &Tolerances::default()).unwrap();
        let moved = beta_action(WeylPoint::new(0.0, 0.0), &t);
        assert!((&moved - t.op()).max_abs_entry() < 1e-15);
    }

    #[test]
    fn beta_moves_vacuum_to_coherent_projector() {
        // beta(q,p)(|0><0|) projects onto the coherent state alpha = (q+ip)/sqrt(2)
        let d = 40;
        let tol = Tolerances::default();
        let t = crate::fock::vacuum(d, &tol).unwrap();
        let (q, p) = (1.2, -0.8);
        let moved = beta_action(WeylPoint::new(q, p), &t);
        let alpha = C64::new(q, p) * std::f64::consts::FRAC_1_SQRT_2;
        let proj = crate::fock::make_coherent_projector(alpha, d, &tol).unwrap();
        assert!((&moved - proj.op()).max_abs_entry() < 1e-12);
    }

    #[test]
    fn beta_preserves_trace_on_interior_supported_t() {
        let d = 60;
        let tol = Tolerances::default();
        let t = crate::fock::vacuum(d, &tol).unwrap();
        for (q, p) in [(3.0, 0.0), (-2.0, 3.0), (1.0, 1.0)] {
            let moved = beta_action(WeylPoint::new(q, p), &t);
            assert_abs_diff_eq!(moved.trace().re, 1.0, epsilon = 1e-8);
        }
    }
}
