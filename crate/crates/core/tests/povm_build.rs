//! Discretized covariant observables: normalization, per-cell Gaussian
//! masses, outcome densities, margins, and covariance checks at small scale.

use std::sync::OnceLock;

use num_complex::Complex64 as C64;
use psq_core::canonical::WeylPoint;
use psq_core::fock::{
    make_coherent_projector, number_state, spectral_data, thermal, vacuum, StateVector,
    Tolerances, TruncatedOperator,
};
use psq_core::opint::{op_integral, SampledFunction};
use psq_core::povm::{
    build_povm, cartesian_margin, check_phase_covariance, check_translation_covariance, effect,
    effect_on_cell, outcome_density, Cell, DiscretePOVM, GridKind, MarginAxis, PhaseSpaceGrid,
    QuadratureSpec, TailMode, TailPolicy,
};
use statrs::function::erf::erf;

fn tols() -> Tolerances {
    Tolerances::default()
}

/// Shared small-scale vacuum POVM: D = 40, window [-8, 8]^2, 16x16 cells.
fn vacuum_povm_16(// cached across tests
) -> &'static DiscretePOVM {
    static POVM: OnceLock<DiscretePOVM> = OnceLock::new();
    POVM.get_or_init(|| {
        let grid = PhaseSpaceGrid::cartesian(
            -8.0,
            8.0,
            -8.0,
            8.0,
            16,
            16,
            QuadratureSpec { nodes_per_axis: 10 },
        )
        .unwrap();
        let t = vacuum(40, &tols()).unwrap();
        build_povm(&grid, &t, &tols()).unwrap()
    })
}

/// Exact mass of the standard 2-d Gaussian outcome density of the vacuum pair
/// over a rectangle: the density is (2 pi)^{-1} e^{-(q^2+p^2)/2}.
fn gaussian_cell_mass(q0: f64, q1: f64, p0: f64, p1: f64) -> f64 {
    let g = |a: f64, b: f64| 0.5 * (erf(b / 2.0f64.sqrt()) - erf(a / 2.0f64.sqrt()));
    g(q0, q1) * g(p0, p1)
}

#[test]
fn single_window_cell_is_identity_on_interior() {
    // one cell covering [-8, 8]^2 integrates beta to the identity
    let grid = PhaseSpaceGrid::cartesian(
        -8.0,
        8.0,
        -8.0,
        8.0,
        1,
        1,
        QuadratureSpec { nodes_per_axis: 160 },
    )
    .unwrap();
    let t = vacuum(40, &tols()).unwrap();
    let e = effect(&grid, 0, &t, &tols()).unwrap();
    let diff = &e - &TruncatedOperator::identity(40);
    let interior = tols().interior_dim(40);
    let block = diff.interior_block(interior);
    let worst = block.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    assert!(worst < 1e-6, "normalization defect {worst:.3e}");
    // and the POVM of that grid has a near-zero tail on the interior
    let povm = build_povm(&grid, &t, &tols()).unwrap();
    assert!(povm.tail_interior_max(&tols()) < 1e-6);
    assert_eq!(povm.completeness_defect(), 0.0);
}

#[test]
fn vacuum_effect_masses_match_gaussian_integrals() {
    let povm = vacuum_povm_16();
    let phi = StateVector::basis(40, 0);
    let grid = povm.grid().unwrap();
    // check a band of cells including the center and mid-range ones
    for (i, j) in [(8, 8), (7, 8), (10, 9), (5, 5), (12, 8)] {
        let idx = grid.index_of(i, j);
        let c = grid.cells()[idx];
        let got = phi.expectation(povm.effect(idx)).re;
        let want = gaussian_cell_mass(c.lo.0, c.hi.0, c.lo.1, c.hi.1);
        assert!(
            (got - want).abs() < 1e-9,
            "cell ({i},{j}): got {got:.12e} want {want:.12e}"
        );
    }
}

#[test]
fn effect_trace_is_cell_area_over_two_pi() {
    // beta preserves trace, so tr E(cell) = area / 2pi up to truncation that
    // only matters near the cutoff; a central cell at D = 40 is clean
    let povm = vacuum_povm_16();
    let grid = povm.grid().unwrap();
    let idx = grid.index_of(8, 8);
    let area = 1.0; // 16x16 cells over [-8,8]^2
    let got = povm.effect(idx).trace().re;
    assert!((got - area / std::f64::consts::TAU).abs() < 1e-10);
}

#[test]
fn degenerate_cell_gives_zero_effect() {
    let t = vacuum(12, &tols()).unwrap();
    let cell = Cell {
        lo: (1.0, -1.0),
        hi: (1.0, 2.0),
        center: (1.0, 0.5),
    };
    let e = effect_on_cell(&cell, GridKind::Cartesian, &t, QuadratureSpec::default(), &tols()).unwrap();
    assert_eq!(e.max_abs_entry(), 0.0);
}

#[test]
fn effect_positivity_and_tail_report() {
    let povm = vacuum_povm_16();
    // spot-check positivity of a few effects via eigenvalues
    let grid = povm.grid().unwrap();
    for (i, j) in [(8, 8), (0, 0), (15, 15), (4, 11)] {
        let sd = spectral_data(povm.effect(grid.index_of(i, j)), &tols()).unwrap();
        assert!(sd.min_eigenvalue() >= -1e-12);
    }
    // the tail of a D=40 build over [-8,8]^2 is an honest positive operator
    assert!(povm.tail_min_eigenvalue() >= -1e-10);
    // excluded interior mass is small; vacuum outcome mass outside the window
    // is below 1e-10
    assert!(povm.tail_interior_max(&tols()) < 1e-6);
}

#[test]
fn outcome_density_examples() {
    let d = 40;
    let t = vacuum(d, &tols()).unwrap();
    let phi0 = StateVector::basis(d, 0);
    let phi1 = StateVector::basis(d, 1);
    for (q, p) in [(0.0, 0.0), (1.0, -0.5), (2.0, 2.0)] {
        let r2 = q * q + p * p;
        let got0 = outcome_density(&phi0, &t, WeylPoint::new(q, p), &tols()).unwrap();
        let want0 = (-0.5 * r2).exp() / std::f64::consts::TAU;
        assert!((got0 - want0).abs() < 1e-12);
        let got1 = outcome_density(&phi1, &t, WeylPoint::new(q, p), &tols()).unwrap();
        let want1 = (r2 / 2.0) * (-0.5 * r2).exp() / std::f64::consts::TAU;
        assert!((got1 - want1).abs() < 1e-12);
        assert!(got0 >= -1e-12 && got1 >= -1e-12);
    }
    // density integrates to one over an adequate window
    let (xs, ws) = psq_core::quad::gauss_legendre_on(64, -8.0, 8.0);
    let mut total = 0.0;
    for (&q, &wq) in xs.iter().zip(&ws) {
        for (&p, &wp) in xs.iter().zip(&ws) {
            total += wq * wp * outcome_density(&phi1, &t, WeylPoint::new(q, p), &tols()).unwrap();
        }
    }
    assert!((total - 1.0).abs() < 1e-6, "density mass {total:.9}");
}

#[test]
fn margins_are_normalized_and_gaussian_in_vacuum() {
    let povm = vacuum_povm_16();
    let margin = cartesian_margin(povm, MarginAxis::X, &tols()).unwrap();
    assert_eq!(margin.n_effects(), 16);
    assert_eq!(margin.completeness_defect(), 0.0);
    // margin effects are Hermitian positive
    for i in 0..margin.n_effects() {
        assert!(margin.effect(i).herm_defect() < 1e-14);
        let sd = spectral_data(margin.effect(i), &tols()).unwrap();
        assert!(sd.min_eigenvalue() >= -1e-12);
    }
    // outcome distribution of the x margin in |0> has variance 1 (convolution
    // of two variance-1/2 Gaussians), up to midpoint sampling of cell centers
    let phi = StateVector::basis(40, 0);
    let mut mean = 0.0;
    let mut second = 0.0;
    let mut oracle = 0.0;
    for i in 0..margin.n_effects() {
        let x = margin.outcome_1d(i).unwrap();
        let m = phi.expectation(margin.effect(i)).re;
        mean += x * m;
        second += x * x * m;
        // 1-d oracle: exact Gaussian bin masses of the N(0,1) margin density
        let g = |a: f64, b: f64| 0.5 * (erf(b / 2.0f64.sqrt()) - erf(a / 2.0f64.sqrt()));
        let c = povm.grid().unwrap().cells()[povm.grid().unwrap().index_of(i, 0)];
        oracle += x * x * g(c.lo.0, c.hi.0);
    }
    assert!(mean.abs() < 1e-10);
    assert!((second - oracle).abs() < 1e-9, "margin second moment {second:.9} vs oracle {oracle:.9}");
    // the continuum variance is 1; center-value quantization adds w^2/12
    let w = 1.0f64;
    assert!((second - 1.0 - w * w / 12.0).abs() < 1e-6);
    // y margin of the same POVM behaves identically by symmetry
    let margin_y = cartesian_margin(povm, MarginAxis::Y, &tols()).unwrap();
    assert_eq!(margin_y.n_effects(), 16);
}

#[test]
fn translation_covariance_small_scale() {
    let povm = vacuum_povm_16();
    // zero shift: exact zero defect
    let report = check_translation_covariance(povm, (0, 0), 6, &tols()).unwrap();
    assert_eq!(report.max_defect, 0.0);
    // one-cell shift: quadrature + truncation budget at D = 40
    let report = check_translation_covariance(povm, (1, 0), 6, &tols()).unwrap();
    assert!(report.max_defect < 1e-4, "defect {:.3e}", report.max_defect);
    assert!(!report.per_cell_defects.is_empty());
    // diagonal shifts work too
    let report = check_translation_covariance(povm, (1, -1), 4, &tols()).unwrap();
    assert!(report.max_defect < 1e-4);
}

#[test]
fn phase_covariance_small_scale() {
    let d = 40;
    let grid = PhaseSpaceGrid::polar(7.0, 8, 16, QuadratureSpec::default()).unwrap();
    let t = vacuum(d, &tols()).unwrap();
    let povm = build_povm(&grid, &t, &tols()).unwrap();
    // zero steps: exact
    let report = check_phase_covariance(&povm, 0, &tols()).unwrap();
    assert_eq!(report.max_defect, 0.0);
    // full turn: phase_shift(2 pi) is the identity, so the defect is exactly 0
    let report = check_phase_covariance(&povm, 16, &tols()).unwrap();
    assert_eq!(report.max_defect, 0.0);
    // one sector
    let report = check_phase_covariance(&povm, 1, &tols()).unwrap();
    assert!(report.max_defect < 1e-5, "defect {:.3e}", report.max_defect);
    // thermal generator is number-diagonal and must also pass
    let povm_t = build_povm(&grid, &thermal(0.5, d, &tols()).unwrap(), &tols()).unwrap();
    let report = check_phase_covariance(&povm_t, 3, &tols()).unwrap();
    assert!(report.max_defect < 1e-5);
    // a displaced (non-diagonal) generator is rejected
    let coh = make_coherent_projector(C64::new(1.0, 0.0), d, &tols()).unwrap();
    let povm_c = build_povm(&grid, &coh, &tols()).unwrap();
    assert!(check_phase_covariance(&povm_c, 1, &tols()).is_err());
}

#[test]
fn polar_sector_effects_commute_with_number_operator() {
    // full-annulus rotational symmetry: for number-diagonal T every ring sum
    // commutes with N
    let d = 30;
    let grid = PhaseSpaceGrid::polar(6.0, 12, 12, QuadratureSpec { nodes_per_axis: 8 }).unwrap();
    let t = number_state(1, d, &tols()).unwrap();
    let povm = build_povm(&grid, &t, &tols()).unwrap();
    let n_op = TruncatedOperator::from_diagonal(&(0..d).map(|k| k as f64).collect::<Vec<_>>());
    for ring in 0..12 {
        let mut acc = TruncatedOperator::zeros(d);
        for sector in 0..12 {
            acc = &acc + povm.effect(ring * 12 + sector);
        }
        let comm = &(&acc * &n_op) - &(&n_op * &acc);
        assert!(comm.max_abs_entry() < 1e-8, "ring {ring}");
    }
}

#[test]
fn wrong_grid_kind_errors() {
    let d = 12;
    let grid = PhaseSpaceGrid::polar(5.0, 4, 8, QuadratureSpec::default()).unwrap();
    let povm = build_povm(&grid, &vacuum(d, &tols()).unwrap(), &tols()).unwrap();
    assert!(cartesian_margin(&povm, MarginAxis::X, &tols()).is_err());
    assert!(check_translation_covariance(&povm, (1, 0), 2, &tols()).is_err());
    let grid = PhaseSpaceGrid::cartesian(-4.0, 4.0, -4.0, 4.0, 4, 4, QuadratureSpec::default()).unwrap();
    let povm = build_povm(&grid, &vacuum(d, &tols()).unwrap(), &tols()).unwrap();
    assert!(check_phase_covariance(&povm, 1, &tols()).is_err());
}

#[test]
fn tail_policy_fail_mode_guards_op_integrals() {
    // a tiny window leaves real interior tail mass; policy (b) must fail
    let d = 16;
    let grid = PhaseSpaceGrid::cartesian(-1.0, 1.0, -1.0, 1.0, 2, 2, QuadratureSpec::default()).unwrap();
    let mut povm = build_povm(&grid, &vacuum(d, &tols()).unwrap(), &tols()).unwrap();
    povm.set_tail_policy(TailPolicy {
        mode: TailMode::Fail,
        bound: 1e-6,
    });
    let f = SampledFunction::from_fn(&povm, "q", |q, _| q);
    assert!(op_integral(&f, &povm, &tols()).is_err());
    // default exclude mode reports instead of failing
    povm.set_tail_policy(TailPolicy::default());
    assert!(op_integral(&f, &povm, &tols()).is_ok());
    let phi = StateVector::basis(d, 0);
    assert!(povm.tail_mass_in(&phi) > 0.1);
}
