//! Discretized covariant phase-space observables: grids, per-cell effects by
//! tensor Gauss-Legendre quadrature of the beta action, outcome densities,
//! Cartesian margins, and covariance checks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::{beta_unitary, phase_shift, WeylPoint};
use crate::error::{PsqError, Result};
use crate::fock::{
    spectral_data, spectral_norm_hermitian, GeneratingOperator, SpectralData, StateVector,
    Tolerances, TruncatedOperator,
};
use crate::quad::gauss_legendre;

/// Grid family: axis-aligned rectangles in `(q, p)` or annular sectors in
/// `(r, theta)` with `q = r cos theta`, `p = r sin theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Cartesian,
    Polar,
}

/// One grid cell. Coordinates are `(q, p)` for Cartesian grids and
/// `(r, theta)` for polar grids.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Cell {
    pub lo: (f64, f64),
    pub hi: (f64, f64),
    pub center: (f64, f64),
}

impl Cell {
    fn area(&self, kind: GridKind) -> f64 {
        match kind {
            GridKind::Cartesian => (self.hi.0 - self.lo.0) * (self.hi.1 - self.lo.1),
            GridKind::Polar => {
                0.5 * (self.hi.0 * self.hi.0 - self.lo.0 * self.lo.0) * (self.hi.1 - self.lo.1)
            }
        }
    }

    /// Representative point in `(q, p)` coordinates.
    pub fn rep_point(&self, kind: GridKind) -> (f64, f64) {
        match kind {
            GridKind::Cartesian => self.center,
            GridKind::Polar => {
                let (r, th) = self.center;
                (r * th.cos(), r * th.sin())
            }
        }
    }
}

/// Per-cell quadrature specification.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    /// Gauss-Legendre nodes per cell per axis.
    pub nodes_per_axis: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { nodes_per_axis: 6 }
    }
}

/// Window bounds of a grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum Window {
    Cartesian {
        q_min: f64,
        q_max: f64,
        p_min: f64,
        p_max: f64,
    },
    Polar {
        r_max: f64,
    },
}

impl Window {
    fn area(&self) -> f64 {
        match *self {
            Window::Cartesian {
                q_min,
                q_max,
                p_min,
                p_max,
            } => (q_max - q_min) * (p_max - p_min),
            Window::Polar { r_max } => std::f64::consts::PI * r_max * r_max,
        }
    }
}

/// A finite partition of a bounded window of the phase plane.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSpaceGrid {
    kind: GridKind,
    window: Window,
    shape: (usize, usize),
    cells: Vec<Cell>,
    quad: QuadratureSpec,
}

impl PhaseSpaceGrid {
    /// Rectangular grid of `nx * ny` cells over the window.
    pub fn cartesian(
        q_min: f64,
        q_max: f64,
        p_min: f64,
        p_max: f64,
        nx: usize,
        ny: usize,
        quad: QuadratureSpec,
    ) -> Result<Self> {
        if !(q_min < q_max && p_min < p_max) || nx == 0 || ny == 0 {
            return Err(PsqError::DomainDiagnosticFailed(
                "degenerate cartesian window".into(),
            ));
        }
        let dq = (q_max - q_min) / nx as f64;
        let dp = (p_max - p_min) / ny as f64;
        let mut cells = Vec::with_capacity(nx * ny);
        for ix in 0..nx {
            let q0 = q_min + ix as f64 * dq;
            let q1 = if ix + 1 == nx { q_max } else { q_min + (ix + 1) as f64 * dq };
            for iy in 0..ny {
                let p0 = p_min + iy as f64 * dp;
                let p1 = if iy + 1 == ny { p_max } else { p_min + (iy + 1) as f64 * dp };
                cells.push(Cell {
                    lo: (q0, p0),
                    hi: (q1, p1),
                    center: (0.5 * (q0 + q1), 0.5 * (p0 + p1)),
                });
            }
        }
        let grid = Self {
            kind: GridKind::Cartesian,
            window: Window::Cartesian {
                q_min,
                q_max,
                p_min,
                p_max,
            },
            shape: (nx, ny),
            cells,
            quad,
        };
        grid.check_partition()?;
        Ok(grid)
    }

    /// Polar grid of `n_r` rings by `n_theta` sectors over the disc of radius
    /// `r_max`.
    pub fn polar(r_max: f64, n_r: usize, n_theta: usize, quad: QuadratureSpec) -> Result<Self> {
        if r_max <= 0.0 || n_r == 0 || n_theta == 0 {
            return Err(PsqError::DomainDiagnosticFailed(
                "degenerate polar window".into(),
            ));
        }
        let dr = r_max / n_r as f64;
        let dth = std::f64::consts::TAU / n_theta as f64;
        let mut cells = Vec::with_capacity(n_r * n_theta);
        for ir in 0..n_r {
            let r0 = ir as f64 * dr;
            let r1 = if ir + 1 == n_r { r_max } else { (ir + 1) as f64 * dr };
            for it in 0..n_theta {
                let t0 = it as f64 * dth;
                let t1 = if it + 1 == n_theta {
                    std::f64::consts::TAU
                } else {
                    (it + 1) as f64 * dth
                };
                cells.push(Cell {
                    lo: (r0, t0),
                    hi: (r1, t1),
                    center: (0.5 * (r0 + r1), 0.5 * (t0 + t1)),
                });
            }
        }
        let grid = Self {
            kind: GridKind::Polar,
            window: Window::Polar { r_max },
            shape: (n_r, n_theta),
            cells,
            quad,
        };
        grid.check_partition()?;
        Ok(grid)
    }

    fn check_partition(&self) -> Result<()> {
        let total: f64 = self.cells.iter().map(|c| c.area(self.kind)).sum();
        let window = self.window.area();
        let rel = (total - window).abs() / window;
        if rel > 1e-12 {
            return Err(PsqError::DomainDiagnosticFailed(format!(
                "cells do not partition the window: relative area defect {rel:.3e}"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn quad(&self) -> QuadratureSpec {
        self.quad
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Flat index of cell `(i, j)`; `i` runs over q (or r), `j` over p (or
    /// theta).
    pub fn index_of(&self, i: usize, j: usize) -> usize {
        i * self.shape.1 + j
    }

    pub fn cell_widths(&self) -> (f64, f64) {
        match self.window {
            Window::Cartesian {
                q_min,
                q_max,
                p_min,
                p_max,
            } => (
                (q_max - q_min) / self.shape.0 as f64,
                (p_max - p_min) / self.shape.1 as f64,
            ),
            Window::Polar { r_max } => (
                r_max / self.shape.0 as f64,
                std::f64::consts::TAU / self.shape.1 as f64,
            ),
        }
    }
}

/// Quadrature evaluation of `beta(q, p)(T)` sums against a fixed generating
/// operator decomposed as `sum_r w_r |v_r><v_r|`.
pub struct BetaEngine {
    dim: usize,
    /// Number-basis column indices and weights when T is diagonal.
    basis_terms: Option<Vec<(f64, usize)>>,
    /// General rank decomposition otherwise.
    vector_terms: Vec<(f64, DVector<C64>)>,
}

/// Weights or eigenvalues below this are dropped from beta sums; they
/// contribute less than cutoff * 1e-15 to any effect entry.
const TERM_DROP: f64 = 1e-15;

impl BetaEngine {
    pub fn new(t: &GeneratingOperator, tol: &Tolerances) -> Result<Self> {
        let dim = t.dim();
        if let Some(w) = t.weights() {
            let basis_terms: Vec<(f64, usize)> = w
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > TERM_DROP)
                .map(|(n, &w)| (w, n))
                .collect();
            return Ok(Self {
                dim,
                basis_terms: Some(basis_terms),
                vector_terms: Vec::new(),
            });
        }
        let sd: SpectralData = spectral_data(t.op(), tol)?;
        let mut vector_terms = Vec::new();
        for (k, &lam) in sd.eigenvalues.iter().enumerate() {
            if lam > TERM_DROP {
                vector_terms.push((lam, sd.eigenvectors.column(k).into_owned()));
            }
        }
        Ok(Self {
            dim,
            basis_terms: None,
            vector_terms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Accumulate `weight * beta(point)(T)` into the lower triangle of `acc`.
    fn accumulate(&self, point: WeylPoint, weight: f64, acc: &mut DMatrix<C64>) {
        let alpha = point.beta_alpha();
        match &self.basis_terms {
            Some(terms) => {
                let n_max = terms.iter().map(|&(_, n)| n).max().unwrap_or(0);
                let cols = displaced_number_columns(alpha, self.dim, n_max);
                for &(w, n) in terms {
                    let col = &cols[n * self.dim..(n + 1) * self.dim];
                    accumulate_outer_lower(col, w * weight, acc);
                }
            }
            None => {
                let u = crate::canonical::displacement(alpha, self.dim);
                for (w, v) in &self.vector_terms {
                    let uv = u.matrix() * v;
                    accumulate_outer_lower(uv.as_slice(), w * weight, acc);
                }
            }
        }
    }

    /// `beta(point)(T)` as a full Hermitian matrix.
    pub fn beta(&self, point: WeylPoint) -> TruncatedOperator {
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        self.accumulate(point, 1.0, &mut acc);
        finalize_hermitian(acc)
    }
}

/// Columns `D(alpha)|n>` for `n <= n_max`, dim entries each, concatenated.
///
/// Column 0 is the truncated coherent vector; the rest follow from
/// `D|n> = (a_+ - conj(alpha)) D|n-1> / sqrt(n)`, which is exact entrywise on
/// the truncated space because raising only looks downward.
fn displaced_number_columns(alpha: C64, dim: usize, n_max: usize) -> Vec<C64> {
    let mut cols = vec![C64::new(0.0, 0.0); dim * (n_max + 1)];
    let mut c = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for m in 0..dim {
        if m > 0 {
            c *= alpha / C64::new((m as f64).sqrt(), 0.0);
        }
        cols[m] = c;
    }
    let neg_conj = -alpha.conj();
    for n in 1..=n_max {
        let inv_sqrt_n = 1.0 / (n as f64).sqrt();
        let (prev, cur) = cols.split_at_mut(n * dim);
        let prev = &prev[(n - 1) * dim..];
        let cur = &mut cur[..dim];
        cur[0] = neg_conj * prev[0] * inv_sqrt_n;
        for m in 1..dim {
            cur[m] = ((m as f64).sqrt() * prev[m - 1] + neg_conj * prev[m]) * inv_sqrt_n;
        }
    }
    cols
}

/// `acc += w |u><u|`, lower triangle only.
fn accumulate_outer_lower(u: &[C64], w: f64, acc: &mut DMatrix<C64>) {
    let dim = u.len();
    let data = acc.as_mut_slice(); // column-major
    for j in 0..dim {
        let uj = u[j].conj() * w;
        let col = &mut data[j * dim..(j + 1) * dim];
        for i in j..dim {
            col[i] += u[i] * uj;
        }
    }
}

/// Mirror the lower triangle up and zero diagonal imaginaries.
fn finalize_hermitian(mut acc: DMatrix<C64>) -> TruncatedOperator {
    let dim = acc.nrows();
    for j in 0..dim {
        acc[(j, j)] = C64::new(acc[(j, j)].re, 0.0);
        for i in j + 1..dim {
            acc[(j, i)] = acc[(i, j)].conj();
        }
    }
    TruncatedOperator::from_matrix(acc).expect("square")
}

fn cell_effect(engine: &BetaEngine, cell: &Cell, kind: GridKind, nodes_per_axis: usize) -> TruncatedOperator {
    let dim = engine.dim();
    let mut acc = DMatrix::zeros(dim, dim);
    let (xs, ws) = gauss_legendre(nodes_per_axis);
    let inv_2pi = 1.0 / std::f64::consts::TAU;
    match kind {
        GridKind::Cartesian => {
            let (q0, p0) = cell.lo;
            let (q1, p1) = cell.hi;
            let (qc, qh) = (0.5 * (q0 + q1), 0.5 * (q1 - q0));
            let (pc, ph) = (0.5 * (p0 + p1), 0.5 * (p1 - p0));
            for (i, &xq) in xs.iter().enumerate() {
                let q = qc + qh * xq;
                for (j, &xp) in xs.iter().enumerate() {
                    let p = pc + ph * xp;
                    let w = ws[i] * qh * ws[j] * ph * inv_2pi;
                    engine.accumulate(WeylPoint::new(q, p), w, &mut acc);
                }
            }
        }
        GridKind::Polar => {
            let (r0, t0) = cell.lo;
            let (r1, t1) = cell.hi;
            let (rc, rh) = (0.5 * (r0 + r1), 0.5 * (r1 - r0));
            let (tc, th) = (0.5 * (t0 + t1), 0.5 * (t1 - t0));
            for (i, &xr) in xs.iter().enumerate() {
                let r = rc + rh * xr;
                for (j, &xt) in xs.iter().enumerate() {
                    let theta = tc + th * xt;
                    let w = ws[i] * rh * ws[j] * th * r * inv_2pi;
                    engine.accumulate(WeylPoint::new(r * theta.cos(), r * theta.sin()), w, &mut acc);
                }
            }
        }
    }
    finalize_hermitian(acc)
}

/// The value of the discretized observable on one cell:
/// `(2 pi)^{-1} integral over the cell of beta(q, p)(T)`.
pub fn effect(
    grid: &PhaseSpaceGrid,
    cell_index: usize,
    t: &GeneratingOperator,
    tol: &Tolerances,
) -> Result<TruncatedOperator> {
    let engine = BetaEngine::new(t, tol)?;
    let cell = grid
        .cells
        .get(cell_index)
        .ok_or(PsqError::DimMismatch {
            expected: grid.n_cells(),
            got: cell_index,
        })?;
    Ok(cell_effect(&engine, cell, grid.kind, grid.quad.nodes_per_axis))
}

/// Effect of a standalone cell (degenerate cells allowed).
pub fn effect_on_cell(
    cell: &Cell,
    kind: GridKind,
    t: &GeneratingOperator,
    quad: QuadratureSpec,
    tol: &Tolerances,
) -> Result<TruncatedOperator> {
    let engine = BetaEngine::new(t, tol)?;
    Ok(cell_effect(&engine, cell, kind, quad.nodes_per_axis))
}

/// Effect with a node-doubling error estimate (max entry difference).
///
/// Errors with `QuadratureUnderflow` when the estimate exceeds `bound`.
pub fn effect_with_error(
    grid: &PhaseSpaceGrid,
    cell_index: usize,
    t: &GeneratingOperator,
    bound: f64,
    tol: &Tolerances,
) -> Result<(TruncatedOperator, f64)> {
    let engine = BetaEngine::new(t, tol)?;
    let cell = grid
        .cells
        .get(cell_index)
        .ok_or(PsqError::DimMismatch {
            expected: grid.n_cells(),
            got: cell_index,
        })?;
    let coarse = cell_effect(&engine, cell, grid.kind, grid.quad.nodes_per_axis);
    let fine = cell_effect(&engine, cell, grid.kind, 2 * grid.quad.nodes_per_axis);
    let estimate = (&fine - &coarse).max_abs_entry();
    if estimate > bound {
        return Err(PsqError::QuadratureUnderflow { estimate, bound });
    }
    Ok((fine, estimate))
}

/// How moment computations treat the tail effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailMode {
    /// Exclude the tail and report the excluded mass.
    Exclude,
    /// Fail when the tail mass exceeds the bound.
    Fail,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailPolicy {
    pub mode: TailMode,
    pub bound: f64,
}

impl Default for TailPolicy {
    fn default() -> Self {
        Self {
            mode: TailMode::Exclude,
            bound: 1e-6,
        }
    }
}

/// Outcome labels of a discrete POVM.
#[derive(Debug, Clone)]
pub enum OutcomeSet {
    /// Cells of a 2-d phase-space grid.
    Cells2d(PhaseSpaceGrid),
    /// Real line bins with representative values.
    Bins1d { centers: Vec<f64>, edges: Vec<f64> },
}

/// Provenance of the generating operator, carried for covariance checks and
/// manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorMeta {
    pub description: String,
    pub number_diagonal: bool,
}

/// A finite family of effects plus the tail restoring normalization exactly.
#[derive(Debug, Clone)]
pub struct DiscretePOVM {
    dim: usize,
    effects: Vec<TruncatedOperator>,
    tail: TruncatedOperator,
    outcomes: OutcomeSet,
    tail_policy: TailPolicy,
    tail_min_eigenvalue: f64,
    generator: Option<GeneratorMeta>,
}

impl DiscretePOVM {
    /// Assemble a POVM from parts; the tail is recomputed as `I - sum` so
    /// completeness holds by construction.
    pub fn from_effects(
        dim: usize,
        effects: Vec<TruncatedOperator>,
        outcomes: OutcomeSet,
        tail_policy: TailPolicy,
        generator: Option<GeneratorMeta>,
        tol: &Tolerances,
    ) -> Result<Self> {
        for e in &effects {
            if e.dim() != dim {
                return Err(PsqError::DimMismatch {
                    expected: dim,
                    got: e.dim(),
                });
            }
        }
        let tail = compute_tail(dim, &effects);
        let tail_min_eigenvalue = spectral_data(&tail, tol)?.min_eigenvalue();
        Ok(Self {
            dim,
            effects,
            tail,
            outcomes,
            tail_policy,
            tail_min_eigenvalue,
            generator,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_effects(&self) -> usize {
        self.effects.len()
    }

    pub fn effects(&self) -> &[TruncatedOperator] {
        &self.effects
    }

    pub fn effect(&self, i: usize) -> &TruncatedOperator {
        &self.effects[i]
    }

    pub fn tail(&self) -> &TruncatedOperator {
        &self.tail
    }

    pub fn outcomes(&self) -> &OutcomeSet {
        &self.outcomes
    }

    pub fn tail_policy(&self) -> TailPolicy {
        self.tail_policy
    }

    pub fn set_tail_policy(&mut self, policy: TailPolicy) {
        self.tail_policy = policy;
    }

    pub fn tail_min_eigenvalue(&self) -> f64 {
        self.tail_min_eigenvalue
    }

    pub fn generator(&self) -> Option<&GeneratorMeta> {
        self.generator.as_ref()
    }

    pub fn grid(&self) -> Option<&PhaseSpaceGrid> {
        match &self.outcomes {
            OutcomeSet::Cells2d(g) => Some(g),
            OutcomeSet::Bins1d { .. } => None,
        }
    }

    /// Representative outcome point of cell `i` in `(q, p)` coordinates; 1-d
    /// bins sit on the q axis.
    pub fn rep_point(&self, i: usize) -> (f64, f64) {
        match &self.outcomes {
            OutcomeSet::Cells2d(g) => g.cells()[i].rep_point(g.kind()),
            OutcomeSet::Bins1d { centers, .. } => (centers[i], 0.0),
        }
    }

    /// Real outcome value of bin `i` for 1-d POVMs.
    pub fn outcome_1d(&self, i: usize) -> Result<f64> {
        match &self.outcomes {
            OutcomeSet::Bins1d { centers, .. } => Ok(centers[i]),
            OutcomeSet::Cells2d(_) => Err(PsqError::WrongGridKind { expected: "1-d" }),
        }
    }

    pub fn label(&self, i: usize) -> String {
        match &self.outcomes {
            OutcomeSet::Cells2d(g) => {
                let (_, nj) = g.shape();
                let c = &g.cells()[i];
                match g.kind() {
                    GridKind::Cartesian => format!(
                        "cell[{},{}] q in [{:.4}, {:.4}] p in [{:.4}, {:.4}]",
                        i / nj,
                        i % nj,
                        c.lo.0,
                        c.hi.0,
                        c.lo.1,
                        c.hi.1
                    ),
                    GridKind::Polar => format!(
                        "sector[{},{}] r in [{:.4}, {:.4}] theta in [{:.4}, {:.4}]",
                        i / nj,
                        i % nj,
                        c.lo.0,
                        c.hi.0,
                        c.lo.1,
                        c.hi.1
                    ),
                }
            }
            OutcomeSet::Bins1d { edges, .. } => {
                format!("bin[{}] x in [{:.4}, {:.4}]", i, edges[i], edges[i + 1])
            }
        }
    }

    /// Max entry of `sum effects + tail - I`, summing in cell order exactly as
    /// the tail was built. Zero by construction up to the float identity
    /// `s + (1 - s) = 1`.
    pub fn completeness_defect(&self) -> f64 {
        let mut sum = DMatrix::<C64>::zeros(self.dim, self.dim);
        for e in &self.effects {
            sum += e.matrix();
        }
        sum += self.tail.matrix();
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((sum[(i, j)] - want).norm());
            }
        }
        worst
    }

    /// Max entry of the tail over the interior block.
    pub fn tail_interior_max(&self, tol: &Tolerances) -> f64 {
        let k = tol.interior_dim(self.dim);
        let block = self.tail.interior_block(k);
        block.iter().fold(0.0f64, |a, z| a.max(z.norm()))
    }

    /// `<phi| tail |phi>`.
    pub fn tail_mass_in(&self, state: &StateVector) -> f64 {
        state.expectation(&self.tail).re
    }

    /// Enforce the tail policy before a moment computation. Returns the
    /// excluded mass (state mass when a state is given, interior max entry
    /// otherwise).
    pub fn enforce_tail_policy(&self, state: Option<&StateVector>, tol: &Tolerances) -> Result<f64> {
        let mass = match state {
            Some(phi) => self.tail_mass_in(phi),
            None => self.tail_interior_max(tol),
        };
        if self.tail_policy.mode == TailMode::Fail && mass > self.tail_policy.bound {
            return Err(PsqError::TailMassExceeded {
                mass,
                bound: self.tail_policy.bound,
            });
        }
        Ok(mass)
    }
}

fn compute_tail(dim: usize, effects: &[TruncatedOperator]) -> TruncatedOperator {
    let mut sum = DMatrix::<C64>::zeros(dim, dim);
    for e in effects {
        sum += e.matrix();
    }
    let tail = DMatrix::identity(dim, dim) - sum;
    TruncatedOperator::from_matrix(tail)
        .expect("square")
        .hermitize()
}

/// Build the discretized covariant observable `E^T` over a grid.
///
/// Cell effects are computed in parallel and summed in cell order; the tail is
/// `I - sum` so normalization is exact. Tail positivity is reported through
/// `tail_min_eigenvalue`, not enforced.
pub fn build_povm(
    grid: &PhaseSpaceGrid,
    t: &GeneratingOperator,
    tol: &Tolerances,
) -> Result<DiscretePOVM> {
    let engine = BetaEngine::new(t, tol)?;
    let nodes = grid.quad.nodes_per_axis;
    let effects: Vec<TruncatedOperator> = grid
        .cells
        .par_iter()
        .map(|cell| cell_effect(&engine, cell, grid.kind, nodes))
        .collect();
    let meta = GeneratorMeta {
        description: match t.weights() {
            Some(_) => "number_mixture".to_string(),
            None => "matrix".to_string(),
        },
        number_diagonal: t.is_number_diagonal(1e-12),
    };
    DiscretePOVM::from_effects(
        t.dim(),
        effects,
        OutcomeSet::Cells2d(grid.clone()),
        TailPolicy::default(),
        Some(meta),
        tol,
    )
}

/// The outcome density `(2 pi)^{-1} <phi| beta(q, p)(T) |phi>` of `E^T` in the
/// vector state `phi`.
pub fn outcome_density(
    state: &StateVector,
    t: &GeneratingOperator,
    point: WeylPoint,
    tol: &Tolerances,
) -> Result<f64> {
    if state.dim() != t.dim() {
        return Err(PsqError::DimMismatch {
            expected: t.dim(),
            got: state.dim(),
        });
    }
    let engine = BetaEngine::new(t, tol)?;
    let b = engine.beta(point);
    Ok(state.expectation(&b).re / std::f64::consts::TAU)
}

/// Outcome density in a mixed state `rho`: `(2 pi)^{-1} Tr[rho beta(q, p)(T)]`.
pub fn outcome_density_mixed(
    rho: &GeneratingOperator,
    t: &GeneratingOperator,
    point: WeylPoint,
    tol: &Tolerances,
) -> Result<f64> {
    if rho.dim() != t.dim() {
        return Err(PsqError::DimMismatch {
            expected: t.dim(),
            got: rho.dim(),
        });
    }
    let engine = BetaEngine::new(t, tol)?;
    let b = engine.beta(point);
    let tr = (rho.op().matrix() * b.matrix()).trace();
    Ok(tr.re / std::f64::consts::TAU)
}

/// Margin axis of a Cartesian POVM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginAxis {
    X,
    Y,
}

/// Collapse a Cartesian 2-d POVM onto one axis by summing effects along the
/// other; the tail is inherited and stays exact.
pub fn cartesian_margin(povm: &DiscretePOVM, axis: MarginAxis, tol: &Tolerances) -> Result<DiscretePOVM> {
    let grid = match &povm.outcomes {
        OutcomeSet::Cells2d(g) if g.kind() == GridKind::Cartesian => g,
        _ => return Err(PsqError::WrongGridKind { expected: "cartesian" }),
    };
    let (nx, ny) = grid.shape();
    let (outer, inner) = match axis {
        MarginAxis::X => (nx, ny),
        MarginAxis::Y => (ny, nx),
    };
    let mut effects = Vec::with_capacity(outer);
    let mut centers = Vec::with_capacity(outer);
    let mut edges = Vec::with_capacity(outer + 1);
    for a in 0..outer {
        let mut acc = DMatrix::<C64>::zeros(povm.dim, povm.dim);
        for b in 0..inner {
            let idx = match axis {
                MarginAxis::X => grid.index_of(a, b),
                MarginAxis::Y => grid.index_of(b, a),
            };
            acc += povm.effects[idx].matrix();
        }
        effects.push(TruncatedOperator::from_matrix(acc)?.hermitize());
        let probe = match axis {
            MarginAxis::X => grid.index_of(a, 0),
            MarginAxis::Y => grid.index_of(0, a),
        };
        let cell = grid.cells()[probe];
        let (lo, hi, c) = match axis {
            MarginAxis::X => (cell.lo.0, cell.hi.0, cell.center.0),
            MarginAxis::Y => (cell.lo.1, cell.hi.1, cell.center.1),
        };
        if a == 0 {
            edges.push(lo);
        }
        edges.push(hi);
        centers.push(c);
    }
    DiscretePOVM::from_effects(
        povm.dim,
        effects,
        OutcomeSet::Bins1d { centers, edges },
        povm.tail_policy,
        povm.generator.clone(),
        tol,
    )
}

/// Per-cell covariance defects against a reference transformation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub max_defect: f64,
    /// `(flat cell index, defect)` for every compared cell.
    pub per_cell_defects: Vec<(usize, f64)>,
    pub interior_dim: usize,
    pub description: String,
}

/// Translation covariance: for grid-aligned shifts `a`,
/// `U(a)* E(cell) U(a) = E(cell - a)` up to quadrature and truncation error.
///
/// The defect is the interior-block spectral norm, maximized over the central
/// `central x central` block of cells whose shifted partner is also a cell.
pub fn check_translation_covariance(
    povm: &DiscretePOVM,
    shift_cells: (i64, i64),
    central: usize,
    tol: &Tolerances,
) -> Result<CovarianceReport> {
    let grid = match &povm.outcomes {
        OutcomeSet::Cells2d(g) if g.kind() == GridKind::Cartesian => g,
        _ => return Err(PsqError::WrongGridKind { expected: "cartesian" }),
    };
    let (nx, ny) = grid.shape();
    let (dq, dp) = grid.cell_widths();
    let a_q = shift_cells.0 as f64 * dq;
    let a_p = shift_cells.1 as f64 * dp;
    let u = beta_unitary(WeylPoint::new(a_q, a_p), povm.dim);
    let interior = tol.interior_dim(povm.dim);

    let i0 = (nx.saturating_sub(central)) / 2;
    let j0 = (ny.saturating_sub(central)) / 2;
    let mut pairs = Vec::new();
    for i in i0..(i0 + central).min(nx) {
        for j in j0..(j0 + central).min(ny) {
            let ti = i as i64 - shift_cells.0;
            let tj = j as i64 - shift_cells.1;
            if ti >= 0 && tj >= 0 && (ti as usize) < nx && (tj as usize) < ny {
                pairs.push((grid.index_of(i, j), grid.index_of(ti as usize, tj as usize)));
            }
        }
    }
    let per_cell_defects: Vec<(usize, f64)> = pairs
        .par_iter()
        .map(|&(src, dst)| {
            let moved = u.matrix().adjoint() * povm.effects[src].matrix() * u.matrix();
            let diff = &moved - povm.effects[dst].matrix();
            let block = diff.view((0, 0), (interior, interior)).into_owned();
            let herm = TruncatedOperator::from_matrix(block).expect("square").hermitize();
            (src, spectral_norm_hermitian(herm.matrix()))
        })
        .collect();
    let max_defect = per_cell_defects.iter().fold(0.0f64, |m, &(_, d)| m.max(d));
    Ok(CovarianceReport {
        max_defect,
        per_cell_defects,
        interior_dim: interior,
        description: format!(
            "translation by ({shift_cells:?}) cells = ({a_q:.4}, {a_p:.4}) over central {central}x{central}"
        ),
    })
}

/// Phase-shift covariance of a polar POVM with a number-diagonal generator:
/// `e^{i theta N} E(sector) e^{-i theta N} = E(sector + theta)` for `theta` a
/// multiple of the sector width.
pub fn check_phase_covariance(
    povm: &DiscretePOVM,
    theta_steps: usize,
    tol: &Tolerances,
) -> Result<CovarianceReport> {
    let grid = match &povm.outcomes {
        OutcomeSet::Cells2d(g) if g.kind() == GridKind::Polar => g,
        _ => return Err(PsqError::WrongGridKind { expected: "polar" }),
    };
    match &povm.generator {
        Some(meta) if meta.number_diagonal => {}
        _ => return Err(PsqError::NotDiagonal),
    }
    let (n_r, n_theta) = grid.shape();
    let dtheta = std::f64::consts::TAU / n_theta as f64;
    let theta = theta_steps as f64 * dtheta;
    let ph = phase_shift(theta, povm.dim);
    let interior = tol.interior_dim(povm.dim);

    let pairs: Vec<(usize, usize)> = (0..n_r)
        .flat_map(|ir| {
            (0..n_theta).map(move |it| {
                (
                    ir * n_theta + it,
                    ir * n_theta + (it + theta_steps) % n_theta,
                )
            })
        })
        .collect();
    let per_cell_defects: Vec<(usize, f64)> = pairs
        .par_iter()
        .map(|&(src, dst)| {
            let moved = ph.matrix() * povm.effects[src].matrix() * ph.matrix().adjoint();
            let diff = &moved - povm.effects[dst].matrix();
            let block = diff.view((0, 0), (interior, interior)).into_owned();
            let herm = TruncatedOperator::from_matrix(block).expect("square").hermitize();
            (src, spectral_norm_hermitian(herm.matrix()))
        })
        .collect();
    let max_defect = per_cell_defects.iter().fold(0.0f64, |m, &(_, d)| m.max(d));
    Ok(CovarianceReport {
        max_defect,
        per_cell_defects,
        interior_dim: interior,
        description: format!("phase shift by {theta_steps} sectors = {theta:.6} rad"),
    })
}
