//! Deciding and quantifying whether a discrete positive operator measure is
//! projection valued: multiplicativity defects, the variance criterion, power
//! identities, and exact finite Naimark dilation.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PsqError, Result};
use crate::fock::{
    psd_sqrt, spectral_data, spectral_norm, spectral_norm_hermitian, StateVector, Tolerances,
    TruncatedOperator,
};
use crate::opint::{op_integral, SampledFunction};
use crate::povm::{DiscretePOVM, OutcomeSet, TailPolicy};

/// Representative outcome value assigned to a spectral bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinRep {
    /// Geometric bin center.
    Center,
    /// Trace-weighted mean of the eigenvalues inside the bin (falls back to
    /// the center for empty bins).
    EigenvalueMean,
}

/// Bin the spectral measure of a Hermitian operator into a 1-d POVM whose
/// effects are the exact eigenprojection sums per bin. Eigenvalues outside the
/// edges end up in the tail.
pub fn binned_spectral_povm(
    op: &TruncatedOperator,
    edges: &[f64],
    rep: BinRep,
    tol: &Tolerances,
) -> Result<DiscretePOVM> {
    if edges.len() < 2 || !edges.windows(2).all(|w| w[0] < w[1]) {
        return Err(PsqError::DomainDiagnosticFailed(
            "bin edges must be strictly increasing with at least two entries".into(),
        ));
    }
    let sd = spectral_data(op, tol)?;
    let dim = op.dim();
    let nbins = edges.len() - 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nbins];
    for (i, &lam) in sd.eigenvalues.iter().enumerate() {
        if lam < edges[0] || lam >= edges[nbins] {
            continue;
        }
        // edges are sorted; linear scan is fine at these sizes
        let b = edges[..nbins]
            .iter()
            .rposition(|&e| lam >= e)
            .unwrap_or(0);
        members[b].push(i);
    }
    let mut effects = Vec::with_capacity(nbins);
    let mut centers = Vec::with_capacity(nbins);
    for (b, idxs) in members.iter().enumerate() {
        let mut acc = DMatrix::<C64>::zeros(dim, dim);
        for &i in idxs {
            let v = sd.eigenvectors.column(i);
            for j in 0..dim {
                let w = v[j].conj();
                for m in 0..dim {
                    acc[(m, j)] += v[m] * w;
                }
            }
        }
        effects.push(TruncatedOperator::from_matrix(acc)?.hermitize());
        let center = match rep {
            BinRep::Center => 0.5 * (edges[b] + edges[b + 1]),
            BinRep::EigenvalueMean => {
                if idxs.is_empty() {
                    0.5 * (edges[b] + edges[b + 1])
                } else {
                    idxs.iter().map(|&i| sd.eigenvalues[i]).sum::<f64>() / idxs.len() as f64
                }
            }
        };
        centers.push(center);
    }
    DiscretePOVM::from_effects(
        dim,
        effects,
        OutcomeSet::Bins1d {
            centers,
            edges: edges.to_vec(),
        },
        TailPolicy::default(),
        None,
        tol,
    )
}

/// Test-family configuration for multiplicativity scans.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiplicativityConfig {
    pub seed: u64,
    /// Number of random cell-union pairs tried on top of all singleton pairs.
    pub union_pairs: usize,
}

impl Default for MultiplicativityConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            union_pairs: 64,
        }
    }
}

/// Worst multiplicativity violation found, with its witness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiplicativityReport {
    pub max_defect: f64,
    /// Largest `||E_i E_j - delta_ij E_i||` over singleton pairs.
    pub singleton_max: f64,
    /// Largest defect over sampled union pairs.
    pub union_max: f64,
    pub witness: String,
}

/// Max over the test family of `||E(A and B) - E(A) E(B)||` (spectral norm).
///
/// The family is every singleton pair plus `union_pairs` seeded random
/// cell-union pairs.
pub fn multiplicativity_defect(
    povm: &DiscretePOVM,
    cfg: &MultiplicativityConfig,
) -> MultiplicativityReport {
    let n = povm.n_effects();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let singleton: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let prod = povm.effect(i).matrix() * povm.effect(j).matrix();
            let diff = if i == j {
                &prod - povm.effect(i).matrix()
            } else {
                prod
            };
            ((i, j), spectral_norm(&diff))
        })
        .collect();
    let (mut witness_pair, mut singleton_max) = ((0usize, 0usize), 0.0f64);
    for ((i, j), d) in &singleton {
        if *d > singleton_max {
            singleton_max = *d;
            witness_pair = (*i, *j);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut union_sets = Vec::with_capacity(cfg.union_pairs);
    for _ in 0..cfg.union_pairs {
        let a: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        let b: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        union_sets.push((a, b));
    }
    let union_defects: Vec<f64> = union_sets
        .par_iter()
        .map(|(a, b)| {
            let ea = sum_effects(povm, a);
            let eb = sum_effects(povm, b);
            let inter: Vec<usize> = a.iter().copied().filter(|i| b.contains(i)).collect();
            let eab = sum_effects(povm, &inter);
            let diff = &eab - &(&ea * &eb);
            spectral_norm(&diff)
        })
        .collect();
    let mut union_max = 0.0f64;
    let mut union_witness = usize::MAX;
    for (k, &d) in union_defects.iter().enumerate() {
        if d > union_max {
            union_max = d;
            union_witness = k;
        }
    }
    let (max_defect, witness) = if singleton_max >= union_max {
        (
            singleton_max,
            format!("singleton pair ({}, {})", witness_pair.0, witness_pair.1),
        )
    } else {
        (union_max, format!("union pair #{union_witness}"))
    };
    MultiplicativityReport {
        max_defect,
        singleton_max,
        union_max,
        witness,
    }
}

fn sum_effects(povm: &DiscretePOVM, idxs: &[usize]) -> DMatrix<C64> {
    let dim = povm.dim();
    let mut acc = DMatrix::<C64>::zeros(dim, dim);
    for &i in idxs {
        acc += povm.effect(i).matrix();
    }
    acc
}

/// The variance defect
/// `Delta(phi) = sum_i x_i^2 <phi|E_i phi> - ||sum_i x_i E_i phi||^2`.
///
/// Nonnegative for every POVM by Cauchy-Schwarz; zero within tolerance for
/// spectral measures.
pub fn variance_defect(povm: &DiscretePOVM, state: &StateVector) -> Result<f64> {
    if state.dim() != povm.dim() {
        return Err(PsqError::DimMismatch {
            expected: povm.dim(),
            got: state.dim(),
        });
    }
    let mass = povm.tail_mass_in(state);
    if mass > povm.tail_policy().bound {
        return Err(PsqError::TailMassExceeded {
            mass,
            bound: povm.tail_policy().bound,
        });
    }
    let mut second = 0.0f64;
    let mut image = nalgebra::DVector::<C64>::zeros(povm.dim());
    for i in 0..povm.n_effects() {
        let x = povm.outcome_1d(i)?;
        let ev = povm.effect(i).apply(state.amplitudes());
        second += x * x * state.amplitudes().dotc(&ev).re;
        image.axpy(C64::new(x, 0.0), &ev, C64::new(1.0, 0.0));
    }
    Ok(second - image.norm_squared())
}

/// An exact finite Naimark dilation: `V` stacks the principal square roots of
/// the effects (tail included), and the projections are coordinate blocks.
#[derive(Debug, Clone)]
pub struct NaimarkDilation {
    dim: usize,
    /// Number of blocks: effects plus tail.
    m: usize,
    isometry: DMatrix<C64>,
    /// Largest negative eigenvalue magnitude floored to zero while taking
    /// square roots.
    clipped: f64,
}

impl NaimarkDilation {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn big_dim(&self) -> usize {
        self.m * self.dim
    }

    pub fn blocks(&self) -> usize {
        self.m
    }

    pub fn isometry(&self) -> &DMatrix<C64> {
        &self.isometry
    }

    pub fn clipped(&self) -> f64 {
        self.clipped
    }

    /// `V*`, mapping the dilation space back down.
    pub fn back_map(&self) -> DMatrix<C64> {
        self.isometry.adjoint()
    }

    /// Max entry of `V* V - I`.
    pub fn isometry_defect(&self) -> f64 {
        let gram = self.isometry.adjoint() * &self.isometry;
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - want).norm());
            }
        }
        worst
    }

    /// The block-diagonal projection `P_i` as a dense matrix on the dilation
    /// space.
    pub fn block_projection(&self, i: usize) -> DMatrix<C64> {
        let big = self.big_dim();
        let mut p = DMatrix::<C64>::zeros(big, big);
        for r in i * self.dim..(i + 1) * self.dim {
            p[(r, r)] = C64::new(1.0, 0.0);
        }
        p
    }

    /// `V* P_i V`, which reproduces the i-th effect.
    pub fn compress(&self, i: usize) -> DMatrix<C64> {
        let block = self.isometry.view((i * self.dim, 0), (self.dim, self.dim));
        block.adjoint() * block
    }
}

/// Dilate a discrete POVM exactly: `E_i = V* P_i V` with `V* V = I`.
///
/// Effects must be positive within `clip_tol`; small negative eigenvalues are
/// floored to zero and the clipped magnitude recorded.
pub fn naimark_dilate(povm: &DiscretePOVM, clip_tol: f64, tol: &Tolerances) -> Result<NaimarkDilation> {
    let dim = povm.dim();
    let m = povm.n_effects() + 1;
    let mut isometry = DMatrix::<C64>::zeros(m * dim, dim);
    let mut clipped = 0.0f64;
    let roots: Vec<Result<(TruncatedOperator, f64)>> = povm
        .effects()
        .par_iter()
        .chain(rayon::iter::once(povm.tail()))
        .map(|e| psd_sqrt(e, clip_tol, tol))
        .collect();
    for (i, r) in roots.into_iter().enumerate() {
        let (root, c) = r?;
        clipped = clipped.max(c);
        isometry
            .view_mut((i * dim, 0), (dim, dim))
            .copy_from(root.matrix());
    }
    Ok(NaimarkDilation {
        dim,
        m,
        isometry,
        clipped,
    })
}

/// Power-identity defects `||L(x^n, E) - L(x, E)^n||` for `n <= n_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerIdentityReport {
    /// Per order n: interior-block spectral-norm defect.
    pub op_defects: Vec<(usize, f64)>,
    /// Per order n, per state: `||(L(x^n) - L(x)^n) phi||`.
    pub state_defects: Vec<(usize, Vec<f64>)>,
}

pub fn power_identity_check(
    povm: &DiscretePOVM,
    n_max: usize,
    states: &[StateVector],
    tol: &Tolerances,
) -> Result<PowerIdentityReport> {
    if n_max < 1 {
        return Err(PsqError::DomainDiagnosticFailed(
            "n_max must be at least 1".into(),
        ));
    }
    let interior = tol.interior_dim(povm.dim());
    let l1 = {
        let f = SampledFunction::from_fn_1d(povm, "x", |x| x)?;
        op_integral(&f, povm, tol)?
    };
    let mut op_defects = Vec::with_capacity(n_max);
    let mut state_defects = Vec::with_capacity(n_max);
    let mut l1_pow = DMatrix::<C64>::identity(povm.dim(), povm.dim());
    for n in 1..=n_max {
        l1_pow = &l1_pow * l1.matrix();
        let f = SampledFunction::from_fn_1d(povm, format!("x^{n}"), |x| x.powi(n as i32))?;
        let ln = op_integral(&f, povm, tol)?;
        let diff = ln.matrix() - &l1_pow;
        let block = diff.view((0, 0), (interior, interior)).into_owned();
        let block = TruncatedOperator::from_matrix(block)?.hermitize();
        op_defects.push((n, spectral_norm_hermitian(block.matrix())));
        let per_state: Vec<f64> = states
            .iter()
            .map(|phi| (&diff * phi.amplitudes()).norm())
            .collect();
        state_defects.push((n, per_state));
    }
    Ok(PowerIdentityReport {
        op_defects,
        state_defects,
    })
}

/// Verdict from the spectrality checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralityVerdict {
    pub mult_defect: f64,
    pub variance_defects: Vec<f64>,
    pub spectral: bool,
    pub witness: String,
}

/// Thresholds for classifying a POVM as spectral.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralityConfig {
    pub mult_tol: f64,
    pub variance_tol: f64,
    pub mult: MultiplicativityConfig,
}

impl Default for SpectralityConfig {
    fn default() -> Self {
        Self {
            mult_tol: 1e-8,
            variance_tol: 1e-8,
            mult: MultiplicativityConfig::default(),
        }
    }
}

/// Combine multiplicativity and variance checks into a spectral / non-spectral
/// verdict with witnesses.
pub fn spectrality_verdict(
    povm: &DiscretePOVM,
    states: &[StateVector],
    cfg: &SpectralityConfig,
) -> Result<SpectralityVerdict> {
    let mult = multiplicativity_defect(povm, &cfg.mult);
    let variance_defects: Vec<f64> = states
        .iter()
        .map(|phi| variance_defect(povm, phi))
        .collect::<Result<_>>()?;
    let var_max = variance_defects.iter().fold(0.0f64, |a, &b| a.max(b));
    let spectral = mult.max_defect <= cfg.mult_tol && var_max <= cfg.variance_tol;
    let witness = if spectral {
        "all checks within tolerance".to_string()
    } else {
        format!(
            "multiplicativity {:.3e} at {}; max variance defect {:.3e}",
            mult.max_defect, mult.witness, var_max
        )
    };
    Ok(SpectralityVerdict {
        mult_defect: mult.max_defect,
        variance_defects,
        spectral,
        witness,
    })
}

/// Per-level statistics of the binning refinement scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinningLevelStats {
    pub n_bins: usize,
    pub bin_width: f64,
    pub mult_defect: f64,
    pub variance_defect: f64,
    pub power2_defect: f64,
    /// Second-moment binning error against the generator:
    /// `|sum_i x_i^2 <phi|E_i phi> - <phi|A^2 phi>|`.
    pub second_moment_defect: f64,
}

/// Refinement scan of binned spectral measures of a Hermitian operator.
///
/// The multiplicativity / variance / power-identity defects stay at the
/// rounding floor at every level (effects are exact orthogonal projections);
/// the second-moment defect against the generator shrinks quadratically when
/// bins carry trace-weighted representative values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinningRefinementReport {
    pub levels: Vec<BinningLevelStats>,
    /// Fitted log2 rate of the second-moment defect per halving of the width.
    pub refinement_rate: f64,
}

pub fn binning_refinement_scan(
    op: &TruncatedOperator,
    a_sq_expect: f64,
    bin_counts: &[usize],
    window: (f64, f64),
    state: &StateVector,
    rep: BinRep,
    tol: &Tolerances,
) -> Result<BinningRefinementReport> {
    let mut levels = Vec::with_capacity(bin_counts.len());
    for &nb in bin_counts {
        let edges: Vec<f64> = (0..=nb)
            .map(|i| window.0 + (window.1 - window.0) * i as f64 / nb as f64)
            .collect();
        let povm = binned_spectral_povm(op, &edges, rep, tol)?;
        let mult = multiplicativity_defect(&povm, &MultiplicativityConfig::default());
        let var = variance_defect(&povm, state)?;
        let power = power_identity_check(&povm, 2, std::slice::from_ref(state), tol)?;
        let power2 = power.op_defects[1].1;
        let mut second = 0.0f64;
        for i in 0..povm.n_effects() {
            let x = povm.outcome_1d(i)?;
            second += x * x * state.expectation(povm.effect(i)).re;
        }
        levels.push(BinningLevelStats {
            n_bins: nb,
            bin_width: (window.1 - window.0) / nb as f64,
            mult_defect: mult.max_defect,
            variance_defect: var,
            power2_defect: power2,
            second_moment_defect: (second - a_sq_expect).abs(),
        });
    }
    // least-squares slope of log2(defect) against level index
    let k = levels.len();
    let ys: Vec<f64> = levels
        .iter()
        .map(|l| l.second_moment_defect.max(1e-300).log2())
        .collect();
    let xm = (k as f64 - 1.0) / 2.0;
    let ym = ys.iter().sum::<f64>() / k as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        num += (i as f64 - xm) * (y - ym);
        den += (i as f64 - xm) * (i as f64 - xm);
    }
    let refinement_rate = if den > 0.0 { -num / den } else { 0.0 };
    Ok(BinningRefinementReport {
        levels,
        refinement_rate,
    })
}
