//! Operator integrals of sampled functions against discrete POVMs,
//! truncated-function approximation sequences, the quantization-map axioms,
//! and the heavy-tailed counterexample where the truncated sequence converges
//! while the integral does not exist.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PsqError, Result};
use crate::fock::{spectral_data, StateVector, Tolerances, TruncatedOperator};
use crate::povm::{DiscretePOVM, OutcomeSet, TailPolicy};

/// How capped approximants are formed from a sampled function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CapPolicy {
    /// `f_n(x) = f(x)` where `|f(x)| <= n`, zero otherwise.
    #[default]
    ZeroBeyondBound,
}

/// A function known by its value at each non-tail cell representative point.
#[derive(Debug, Clone)]
pub struct SampledFunction {
    pub values: Vec<C64>,
    pub name: String,
    pub cap_policy: CapPolicy,
}

impl SampledFunction {
    pub fn from_values(values: Vec<C64>, name: impl Into<String>) -> Self {
        Self {
            values,
            name: name.into(),
            cap_policy: CapPolicy::default(),
        }
    }

    pub fn from_real(values: Vec<f64>, name: impl Into<String>) -> Self {
        Self::from_values(values.into_iter().map(|x| C64::new(x, 0.0)).collect(), name)
    }

    /// Sample `f(q, p)` at the representative point of every cell.
    pub fn from_fn(povm: &DiscretePOVM, name: impl Into<String>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..povm.n_effects())
            .map(|i| {
                let (q, p) = povm.rep_point(i);
                C64::new(f(q, p), 0.0)
            })
            .collect();
        Self::from_values(values, name)
    }

    /// Sample `f(x)` over a 1-d POVM's bin values.
    pub fn from_fn_1d(povm: &DiscretePOVM, name: impl Into<String>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..povm.n_effects())
            .map(|i| Ok(C64::new(f(povm.outcome_1d(i)?), 0.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_values(values, name))
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.norm()))
    }

    /// The capped approximant with bound `n`.
    pub fn capped(&self, n: f64) -> Self {
        let values = self
            .values
            .iter()
            .map(|&v| if v.norm() <= n { v } else { C64::new(0.0, 0.0) })
            .collect();
        Self {
            values,
            name: format!("{}~{n}", self.name),
            cap_policy: self.cap_policy,
        }
    }
}

/// `L(f, E) = sum_i f(omega_i) E_i`, tail excluded per the POVM's tail policy.
/// Hermitized when `f` is real.
pub fn op_integral(f: &SampledFunction, povm: &DiscretePOVM, tol: &Tolerances) -> Result<TruncatedOperator> {
    if f.values.len() != povm.n_effects() {
        return Err(PsqError::DimMismatch {
            expected: povm.n_effects(),
            got: f.values.len(),
        });
    }
    povm.enforce_tail_policy(None, tol)?;
    let dim = povm.dim();
    let mut acc = nalgebra::DMatrix::<C64>::zeros(dim, dim);
    for (v, e) in f.values.iter().zip(povm.effects()) {
        if v.norm() != 0.0 {
            acc += e.matrix() * *v;
        }
    }
    let out = TruncatedOperator::from_matrix(acc)?;
    Ok(if f.is_real() { out.hermitize() } else { out })
}

/// Convergence verdict of a truncated-approximant sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Converged,
    Diverged,
    Oscillating,
}

/// Detection thresholds for `ConvergenceReport` verdicts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    /// Number of trailing cutoffs inspected.
    pub window: usize,
    /// Increments below this count as settled.
    pub increment_tol: f64,
    /// Fitted slope in log cutoff above this counts as divergence.
    pub slope_tol: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            window: 4,
            increment_tol: 1e-10,
            slope_tol: 1e-3,
        }
    }
}

/// Partial results of `L(chi_B f_n, E) phi` along increasing cutoffs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub cutoffs: Vec<f64>,
    /// Norms of the partial vectors.
    pub norms: Vec<f64>,
    /// `||v_{k+1} - v_k||`; first entry pairs cutoffs 0 and 1.
    pub increments: Vec<f64>,
    /// Scalar partial values `Re <e_0 | v_k>` (meaningful for scalar POVMs).
    pub scalar_values: Vec<f64>,
    pub verdict: Verdict,
    /// Norm of the final partial vector.
    pub reference_norm: f64,
    /// Fitted slope of the norms against the log cutoff over the window.
    pub fitted_slope: f64,
}

/// Evaluate `L(chi_B f_n, E) phi` along `cutoffs` and classify the trend.
///
/// `region` restricts to a union of cells (`chi_B`); `None` means all cells.
pub fn truncated_sequence(
    f: &SampledFunction,
    povm: &DiscretePOVM,
    cutoffs: &[f64],
    state: &StateVector,
    region: Option<&[usize]>,
    cfg: &ConvergenceConfig,
) -> Result<ConvergenceReport> {
    if f.values.len() != povm.n_effects() {
        return Err(PsqError::DimMismatch {
            expected: povm.n_effects(),
            got: f.values.len(),
        });
    }
    if state.dim() != povm.dim() {
        return Err(PsqError::DimMismatch {
            expected: povm.dim(),
            got: state.dim(),
        });
    }
    if !cutoffs.windows(2).all(|w| w[0] < w[1]) {
        return Err(PsqError::DomainDiagnosticFailed(
            "cutoffs must be strictly increasing".into(),
        ));
    }
    let in_region: Box<dyn Fn(usize) -> bool> = match region {
        Some(cells) => {
            let set: std::collections::BTreeSet<usize> = cells.iter().copied().collect();
            Box::new(move |i| set.contains(&i))
        }
        None => Box::new(|_| true),
    };
    // per-cell images E_i phi, computed once
    let images: Vec<DVector<C64>> = povm
        .effects()
        .iter()
        .map(|e| e.apply(state.amplitudes()))
        .collect();

    let mut norms = Vec::with_capacity(cutoffs.len());
    let mut increments = Vec::new();
    let mut scalar_values = Vec::with_capacity(cutoffs.len());
    let mut prev: Option<DVector<C64>> = None;
    for &n in cutoffs {
        let mut v = DVector::<C64>::zeros(povm.dim());
        for (i, (fi, img)) in f.values.iter().zip(&images).enumerate() {
            if in_region(i) && fi.norm() <= n {
                v.axpy(*fi, img, C64::new(1.0, 0.0));
            }
        }
        norms.push(v.norm());
        scalar_values.push(v[0].re);
        if let Some(p) = &prev {
            increments.push((&v - p).norm());
        }
        prev = Some(v);
    }
    let (verdict, fitted_slope) = classify(cutoffs, &norms, &increments, cfg);
    Ok(ConvergenceReport {
        cutoffs: cutoffs.to_vec(),
        norms: norms.clone(),
        increments,
        scalar_values,
        verdict,
        reference_norm: norms.last().copied().unwrap_or(0.0),
        fitted_slope,
    })
}

fn classify(
    cutoffs: &[f64],
    norms: &[f64],
    increments: &[f64],
    cfg: &ConvergenceConfig,
) -> (Verdict, f64) {
    let w = cfg.window.min(increments.len()).max(1);
    let tail_incs = &increments[increments.len().saturating_sub(w)..];
    let scale = norms.last().copied().unwrap_or(1.0).max(1.0);
    if tail_incs.is_empty() || tail_incs.iter().all(|&d| d <= cfg.increment_tol * scale) {
        return (Verdict::Converged, 0.0);
    }
    // fit norms against ln(cutoff) over the trailing window
    let k = (w + 1).min(norms.len());
    let xs: Vec<f64> = cutoffs[cutoffs.len() - k..].iter().map(|&c| c.ln()).collect();
    let ys = &norms[norms.len() - k..];
    let xm = xs.iter().sum::<f64>() / k as f64;
    let ym = ys.iter().sum::<f64>() / k as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - xm) * (y - ym);
        den += (x - xm) * (x - xm);
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    if slope > cfg.slope_tol {
        (Verdict::Diverged, slope)
    } else {
        (Verdict::Oscillating, slope)
    }
}

/// Violations found while checking that `f -> L(f, E)` behaves like an
/// operator integral on the discrete structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaAxiomsReport {
    pub trials: usize,
    pub seed: u64,
    /// Most negative eigenvalue seen on integrals of nonnegative functions.
    pub worst_positivity: f64,
    /// Max entry of `L(2f + g) - 2 L(f) - L(g)`.
    pub max_linearity_defect: f64,
    /// Max decrease along monotone sequences of `<phi|L(f_m)|phi>`.
    pub max_monotone_violation: f64,
    /// Max gap `|sup_m <phi|L(f_m)|phi> - <phi|L(f)|phi>|`.
    pub max_limit_defect: f64,
}

/// Exercise positivity, linearity, and the monotone-limit property on seeded
/// random bounded sampled functions. Report-only.
pub fn gamma_axioms_check(
    povm: &DiscretePOVM,
    trials: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<GammaAxiomsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = povm.n_effects();
    let dim = povm.dim();
    let bound = 8.0;
    let mut worst_positivity = 0.0f64;
    let mut max_linearity_defect = 0.0f64;
    let mut max_monotone_violation = 0.0f64;
    let mut max_limit_defect = 0.0f64;

    for _ in 0..trials {
        let f = SampledFunction::from_real(
            (0..n).map(|_| rng.gen_range(0.0..bound)).collect(),
            "rand_nonneg",
        );
        let g = SampledFunction::from_real(
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
            "rand",
        );
        let phi = random_state(dim, &mut rng);

        // (i) positivity on nonnegative functions
        let lf = op_integral(&f, povm, tol)?;
        let min_eig = spectral_data(&lf, tol)?.min_eigenvalue();
        worst_positivity = worst_positivity.min(min_eig);

        // (i) linearity: L(2f + g) = 2 L(f) + L(g)
        let comb = SampledFunction::from_values(
            f.values
                .iter()
                .zip(&g.values)
                .map(|(a, b)| a * 2.0 + b)
                .collect(),
            "2f+g",
        );
        let lhs = op_integral(&comb, povm, tol)?;
        let lg = op_integral(&g, povm, tol)?;
        let mut rhs = lf.matrix() * C64::new(2.0, 0.0);
        rhs += lg.matrix();
        let defect = (lhs.matrix() - &rhs)
            .iter()
            .fold(0.0f64, |a, z| a.max(z.norm()));
        max_linearity_defect = max_linearity_defect.max(defect);

        // (ii) monotone limit along the capped approximants f_m, which
        // increase pointwise to f (f >= 0) and reach it at the final cap
        let probs: Vec<f64> = povm
            .effects()
            .iter()
            .map(|e| phi.expectation(e).re)
            .collect();
        let form = |func: &SampledFunction| -> f64 {
            func.values.iter().zip(&probs).map(|(v, p)| v.re * p).sum()
        };
        let full = form(&f);
        let mut prev_val = f64::NEG_INFINITY;
        let mut sup = f64::NEG_INFINITY;
        for m in 1..=6u32 {
            let cap = bound * m as f64 / 6.0;
            let val = form(&f.capped(cap));
            if val < prev_val {
                max_monotone_violation = max_monotone_violation.max(prev_val - val);
            }
            prev_val = val;
            sup = sup.max(val);
        }
        max_limit_defect = max_limit_defect.max((sup - full).abs());
    }
    Ok(GammaAxiomsReport {
        trials,
        seed,
        worst_positivity,
        max_linearity_defect,
        max_monotone_violation,
        max_limit_defect,
    })
}

fn random_state(dim: usize, rng: &mut ChaCha8Rng) -> StateVector {
    let amps: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    StateVector::from_amplitudes(amps).normalized()
}

/// Outputs of the heavy-tailed counterexample run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterexampleReport {
    /// Symmetric truncated integrals `sum_{|x| <= n} x mu_i`: converge to 0.
    pub symmetric: ConvergenceReport,
    /// One-sided sums `sum_{0 < x <= n} x mu_i`: grow like `log n / pi`.
    pub one_sided: ConvergenceReport,
    pub half_width: f64,
    pub cells_per_unit: usize,
}

/// Scalar POVM `B -> mu(B) I` for the standard Cauchy measure on a symmetric
/// 1-d grid, realized with 2x2 identity blocks so it runs through the same
/// code paths as every other POVM. Per-cell masses are exact arctan
/// differences.
pub fn cauchy_povm(half_width: f64, cells_per_unit: usize, tol: &Tolerances) -> Result<DiscretePOVM> {
    if half_width < 10.0 {
        return Err(PsqError::DomainDiagnosticFailed(
            "half width must be at least 10".into(),
        ));
    }
    let n = (2.0 * half_width * cells_per_unit as f64).round() as usize;
    let w = 2.0 * half_width / n as f64;
    let mut effects = Vec::with_capacity(n);
    let mut centers = Vec::with_capacity(n);
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(-half_width);
    for i in 0..n {
        let a = -half_width + i as f64 * w;
        let b = if i + 1 == n { half_width } else { -half_width + (i + 1) as f64 * w };
        let mass = (b.atan() - a.atan()) / std::f64::consts::PI;
        effects.push(TruncatedOperator::identity(2).scale(mass));
        centers.push(0.5 * (a + b));
        edges.push(b);
    }
    DiscretePOVM::from_effects(
        2,
        effects,
        OutcomeSet::Bins1d { centers, edges },
        TailPolicy::default(),
        None,
        tol,
    )
}

/// Run the counterexample: an even density with divergent first absolute
/// moment, where symmetric truncations vanish identically while one-sided
/// sums grow without bound.
pub fn cauchy_counterexample(
    half_width: f64,
    cells_per_unit: usize,
    cutoffs: Option<&[f64]>,
    cfg: &ConvergenceConfig,
    tol: &Tolerances,
) -> Result<CounterexampleReport> {
    let povm = cauchy_povm(half_width, cells_per_unit, tol)?;
    let f = SampledFunction::from_fn_1d(&povm, "x", |x| x)?;
    let default_cutoffs: Vec<f64> = [5.0, 10.0, 20.0, 40.0, 80.0, 100.0]
        .iter()
        .copied()
        .filter(|&c| c <= half_width)
        .collect();
    let cutoffs = cutoffs.map(|c| c.to_vec()).unwrap_or(default_cutoffs);
    let state = StateVector::basis(2, 0);
    let symmetric = truncated_sequence(&f, &povm, &cutoffs, &state, None, cfg)?;
    let positive_cells: Vec<usize> = (0..povm.n_effects())
        .filter(|&i| povm.outcome_1d(i).unwrap() > 0.0)
        .collect();
    let one_sided = truncated_sequence(&f, &povm, &cutoffs, &state, Some(&positive_cells), cfg)?;
    Ok(CounterexampleReport {
        symmetric,
        one_sided,
        half_width,
        cells_per_unit,
    })
}
