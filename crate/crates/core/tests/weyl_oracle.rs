//! Validates the closed-form displacement matrices against an independent
//! dense matrix-exponential oracle, and the projective-representation
//! properties on truncation-safe blocks.
//!
//! Truncation-safe block sizes: products of truncated Weyl matrices corrupt
//! entries whose displaced states spill past the cutoff, so group-law checks
//! assert on blocks well inside D/2 (measured margins are two or more orders).

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use psq_core::canonical::{
    beta_unitary, displacement, weyl, weyl_composition_phase, WeylPoint,
};
use psq_core::fock::{spectral_data, Tolerances, TruncatedOperator};

/// Oracle: exp(i (p Q + q P)) by eigendecomposition of the dense Hermitian
/// generator. Independent of the Laguerre-recurrence path.
fn weyl_by_expm(q: f64, p: f64, dim: usize) -> DMatrix<C64> {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for n in 1..dim {
        let s = (n as f64).sqrt();
        let v = C64::new(p * s * inv_sqrt2, q * s * inv_sqrt2);
        h[(n, n - 1)] = v;
        h[(n - 1, n)] = v.conj();
    }
    let sd = spectral_data(
        &TruncatedOperator::from_matrix(h).unwrap(),
        &Tolerances::default(),
    )
    .unwrap();
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    for k in 0..dim {
        let ph = C64::new(0.0, sd.eigenvalues[k]).exp();
        let v = sd.eigenvectors.column(k);
        for j in 0..dim {
            let w = v[j].conj() * ph;
            for i in 0..dim {
                out[(i, j)] += v[i] * w;
            }
        }
    }
    out
}

fn max_block(m: &DMatrix<C64>, n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max(m[(i, j)].norm());
        }
    }
    worst
}

#[test]
fn closed_form_matches_matrix_exponential() {
    // interior-block agreement at D = 80 across the |q|,|p| <= 3 budget
    let d = 80;
    for (q, p) in [(0.5, 0.0), (1.0, -1.0), (3.0, 3.0), (-3.0, 2.0), (0.0, 3.0)] {
        let closed = weyl_by_closed_form(q, p, d);
        let oracle = weyl_by_expm(q, p, d);
        let diff = closed.matrix() - &oracle;
        let defect = max_block(&diff, d / 2);
        assert!(
            defect <= 1e-8,
            "closed vs expm defect {defect:.3e} at ({q}, {p})"
        );
    }
}

fn weyl_by_closed_form(q: f64, p: f64, dim: usize) -> TruncatedOperator {
    displacement(WeylPoint::new(q, p).weyl_alpha(), dim)
}

#[test]
fn group_inverse_on_safe_block() {
    let d = 60;
    for (q, p) in [(0.5, 0.5), (2.0, -1.0), (3.0, 3.0)] {
        let w = weyl_by_closed_form(q, p, d);
        let winv = weyl_by_closed_form(-q, -p, d);
        let prod = w.matrix() * winv.matrix() - DMatrix::<C64>::identity(d, d);
        let defect = max_block(&prod, d / 5);
        assert!(
            defect <= 1e-8,
            "inverse defect {defect:.3e} at ({q}, {p})"
        );
    }
}

#[test]
fn projective_composition_law() {
    // W(g) W(h) = c W(g+h) with c = exp(i (q_g p_h - p_g q_h)/2)
    let d = 60;
    let points = [
        (WeylPoint::new(1.5, -2.0), WeylPoint::new(0.7, 2.5)),
        (WeylPoint::new(3.0, 3.0), WeylPoint::new(-3.0, 2.0)),
        (WeylPoint::new(0.3, 0.1), WeylPoint::new(-0.2, 0.4)),
    ];
    for (g, h) in points {
        let wg = displacement(g.weyl_alpha(), d);
        let wh = displacement(h.weyl_alpha(), d);
        let sum = WeylPoint::new(g.q + h.q, g.p + h.p);
        let wgh = displacement(sum.weyl_alpha(), d);
        let c = weyl_composition_phase(g, h);
        let diff = wg.matrix() * wh.matrix() - wgh.matrix() * c;
        let defect = max_block(&diff, d / 4);
        assert!(
            defect <= 1e-6,
            "composition defect {defect:.3e} at {g:?}, {h:?}"
        );
    }
}

#[test]
fn weyl_accepts_adequate_cutoffs() {
    // with a generous cutoff the D/2-block unitarity gate passes
    let tol = Tolerances::default();
    let w = weyl(WeylPoint::new(1.0, 1.0), 120, &tol).unwrap();
    assert_eq!(w.dim(), 120);
}

#[test]
fn beta_unitary_is_conjugate_displacement() {
    // W(-q, p) = D((q + ip)/sqrt(2)): check against the exponential oracle of
    // exp(i(p Q - q P))
    let d = 60;
    let (q, p) = (1.2, 0.7);
    let u = beta_unitary(WeylPoint::new(q, p), d);
    let oracle = weyl_by_expm(-q, p, d);
    let diff = u.matrix() - &oracle;
    assert!(max_block(&diff, d / 2) <= 1e-10);
}

#[test]
fn displaced_vacuum_overlap_with_one() {
    // |<1|D(alpha)|0>|^2 = |alpha|^2 e^{-|alpha|^2}
    for (re, im) in [(0.6, -0.3), (1.1, 0.9)] {
        let alpha = C64::new(re, im);
        let u = displacement(alpha, 40);
        let x = alpha.norm_sqr();
        let got = u.entry(1, 0).norm_sqr();
        let want = x * (-x).exp();
        assert!((got - want).abs() < 1e-13);
    }
}
