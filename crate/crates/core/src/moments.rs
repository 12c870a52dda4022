//! Closed-form moment operators of the Cartesian margins of covariant
//! phase-space observables, the quadrature oracle route, Hilbert-Schmidt
//! domain diagnostics, noise operators, and oscillator-energy moments.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::canonical::canonical_set;
use crate::error::{PsqError, Result};
use crate::fock::{GeneratingOperator, Tolerances, TruncatedOperator};
use crate::opint::{op_integral, SampledFunction};
use crate::povm::{build_povm, DiscretePOVM, GridKind, PhaseSpaceGrid};

/// Coordinate axis of a margin: `x` pairs with Q, `y` with P.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

/// Powers of Q and P evaluated at a doubled cutoff and cut back, so that the
/// retained entries are the true infinite-dimensional matrix elements.
///
/// Products of truncated matrices differ from truncations of products in the
/// top block; cutting from the doubled space removes that leakage for all
/// powers up to the cutoff.
#[derive(Debug, Clone)]
pub struct MomentKit {
    dim: usize,
    k_max: usize,
    q_pows: Vec<TruncatedOperator>,
    p_pows: Vec<TruncatedOperator>,
}

impl MomentKit {
    pub fn new(dim: usize, k_max: usize) -> Result<Self> {
        if dim < 2 {
            return Err(PsqError::DimTooSmall { dim, min: 2 });
        }
        let big = canonical_set(2 * dim)?;
        let mut q_pows = Vec::with_capacity(k_max + 1);
        let mut p_pows = Vec::with_capacity(k_max + 1);
        let mut q_acc = DMatrix::<C64>::identity(2 * dim, 2 * dim);
        let mut p_acc = q_acc.clone();
        for l in 0..=k_max {
            if l > 0 {
                q_acc = &q_acc * big.q_op.matrix();
                p_acc = &p_acc * big.p_op.matrix();
            }
            let qc = q_acc.view((0, 0), (dim, dim)).into_owned();
            let pc = p_acc.view((0, 0), (dim, dim)).into_owned();
            q_pows.push(TruncatedOperator::from_matrix(qc)?.hermitize());
            p_pows.push(TruncatedOperator::from_matrix(pc)?.hermitize());
        }
        Ok(Self {
            dim,
            k_max,
            q_pows,
            p_pows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `Q^l` (or `P^l`) with exact interior entries.
    pub fn power(&self, axis: Axis, l: usize) -> &TruncatedOperator {
        match axis {
            Axis::X => &self.q_pows[l],
            Axis::Y => &self.p_pows[l],
        }
    }

    /// `Tr[A^j T]` for the axis operator; real for Hermitian inputs.
    pub fn power_trace(&self, axis: Axis, j: usize, t: &GeneratingOperator) -> Result<f64> {
        if t.dim() != self.dim {
            return Err(PsqError::DimMismatch {
                expected: self.dim,
                got: t.dim(),
            });
        }
        let a = self.power(axis, j);
        let mut tr = C64::new(0.0, 0.0);
        for m in 0..self.dim {
            for n in 0..self.dim {
                tr += a.entry(m, n) * t.op().entry(n, m);
            }
        }
        if tr.im.abs() > 1e-9 {
            return Err(PsqError::DomainDiagnosticFailed(format!(
                "trace of power {j} has imaginary part {:.3e}",
                tr.im
            )));
        }
        Ok(tr.re)
    }
}

/// Coefficients of the closed-form moment operator
/// `L(x^k, E^T) = sum_l s_kl Q^l` with
/// `s_kl = C(k, l) (-1)^{k-l} Tr[Q^{k-l} T]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentCoefficients {
    pub k: usize,
    pub axis: Axis,
    /// `s_k0 .. s_kk`.
    pub coeffs: Vec<f64>,
    /// `Tr[A^j T]` for `j = 0..=k`.
    pub traces: Vec<f64>,
}

fn binomial(k: usize, l: usize) -> f64 {
    let mut b = 1.0f64;
    for i in 0..l.min(k - l) {
        b = b * (k - i) as f64 / (i + 1) as f64;
    }
    b
}

pub fn moment_coefficients(
    kit: &MomentKit,
    k: usize,
    t: &GeneratingOperator,
    axis: Axis,
) -> Result<MomentCoefficients> {
    if k == 0 || k > kit.k_max() {
        return Err(PsqError::DomainDiagnosticFailed(format!(
            "moment order {k} outside 1..={}",
            kit.k_max()
        )));
    }
    let traces: Vec<f64> = (0..=k)
        .map(|j| kit.power_trace(axis, j, t))
        .collect::<Result<_>>()?;
    let coeffs: Vec<f64> = (0..=k)
        .map(|l| {
            let sign = if (k - l) % 2 == 0 { 1.0 } else { -1.0 };
            binomial(k, l) * sign * traces[k - l]
        })
        .collect();
    Ok(MomentCoefficients {
        k,
        axis,
        coeffs,
        traces,
    })
}

/// Closed-form moment operator `sum_l s_kl Q^l` (or powers of P).
pub fn moment_operator(
    kit: &MomentKit,
    k: usize,
    t: &GeneratingOperator,
    axis: Axis,
) -> Result<TruncatedOperator> {
    let mc = moment_coefficients(kit, k, t, axis)?;
    let dim = kit.dim();
    let mut acc = DMatrix::<C64>::zeros(dim, dim);
    for (l, &c) in mc.coeffs.iter().enumerate() {
        acc += kit.power(axis, l).matrix() * C64::new(c, 0.0);
    }
    Ok(TruncatedOperator::from_matrix(acc)?.hermitize())
}

/// Quadrature oracle: `L(x^k, E^T)` as the operator integral of the sampled
/// coordinate monomial over an already-built POVM.
pub fn moment_from_povm(
    k: usize,
    axis: Axis,
    povm: &DiscretePOVM,
    tol: &Tolerances,
) -> Result<TruncatedOperator> {
    let f = SampledFunction::from_fn(povm, format!("{}^{k}", axis.as_str()), |q, p| {
        match axis {
            Axis::X => q.powi(k as i32),
            Axis::Y => p.powi(k as i32),
        }
    });
    op_integral(&f, povm, tol)
}

/// Quadrature oracle from scratch: builds the POVM for `T` over `grid` first.
pub fn moment_operator_quadrature(
    k: usize,
    t: &GeneratingOperator,
    axis: Axis,
    grid: &PhaseSpaceGrid,
    tol: &Tolerances,
) -> Result<TruncatedOperator> {
    let povm = build_povm(grid, t, tol)?;
    moment_from_povm(k, axis, &povm, tol)
}

/// A dimension-indexed family of number-basis weights for domain scans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum WeightFamily {
    /// Fixed weights, zero-padded at every dimension.
    Fixed(Vec<f64>),
    /// Geometric weights `(1-s) s^n`, renormalized at each dimension.
    Thermal { s: f64 },
    /// `w_n` proportional to `(n+1)^{-exponent}`, renormalized at each dimension.
    PowerLaw { exponent: f64 },
}

impl WeightFamily {
    pub fn weights_at(&self, dim: usize) -> Vec<f64> {
        match self {
            WeightFamily::Fixed(w) => {
                let mut out = vec![0.0; dim];
                for (n, &v) in w.iter().take(dim).enumerate() {
                    out[n] = v;
                }
                out
            }
            WeightFamily::Thermal { s } => {
                let mut w = crate::fock::thermal_weights(*s, dim);
                let sum: f64 = w.iter().sum();
                for v in &mut w {
                    *v /= sum;
                }
                w
            }
            WeightFamily::PowerLaw { exponent } => {
                let mut w: Vec<f64> = (0..dim)
                    .map(|n| ((n + 1) as f64).powf(-exponent))
                    .collect();
                let sum: f64 = w.iter().sum();
                for v in &mut w {
                    *v /= sum;
                }
                w
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            WeightFamily::Fixed(w) => format!("fixed[{}]", w.len()),
            WeightFamily::Thermal { s } => format!("thermal(s={s})"),
            WeightFamily::PowerLaw { exponent } => format!("powerlaw({exponent})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthVerdict {
    Bounded,
    Diverging,
}

/// Growth of `||Q^k sqrt(T)||_HS^2 = sum_n w_n ||Q^k |n>||^2` along a
/// dimension scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HsScanReport {
    pub k: usize,
    pub family: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
    /// Log-log slope fitted over the trailing half of the scan.
    pub slope: f64,
    pub verdict: GrowthVerdict,
}

/// `||Q^k |n>||^2` computed by sparse tridiagonal application, exact in the
/// untruncated space. Amplitudes live on Fock levels `n-k ..= n+k`, stored at
/// offsets with `base = n - k` at index 0.
fn q_power_column_norm_sq(k: usize, n: usize) -> f64 {
    let width = 2 * k + 1;
    let mut cur = vec![0.0f64; width];
    let mut buf = vec![0.0f64; width];
    cur[k] = 1.0; // |n>
    let base = n as i64 - k as i64;
    for step in 0..k {
        for v in buf.iter_mut() {
            *v = 0.0;
        }
        // support before this step is offsets k-step ..= k+step
        for i in (k - step)..=(k + step) {
            let amp = cur[i];
            if amp == 0.0 {
                continue;
            }
            let level = base + i as i64;
            debug_assert!(level >= 0);
            let lev = level as f64;
            // Q |m> = sqrt((m+1)/2) |m+1> + sqrt(m/2) |m-1>
            buf[i + 1] += ((lev + 1.0) / 2.0).sqrt() * amp;
            if level > 0 {
                buf[i - 1] += (lev / 2.0).sqrt() * amp;
            }
        }
        std::mem::swap(&mut cur, &mut buf);
    }
    cur.iter().map(|&v| v * v).sum()
}

/// Scan `||Q^k sqrt(T)||_HS^2` over increasing dimensions and classify the
/// growth by a log-log slope fit.
pub fn hs_domain_scan(family: &WeightFamily, k: usize, dims: &[usize]) -> Result<HsScanReport> {
    if !dims.windows(2).all(|w| w[0] < w[1]) || dims.is_empty() {
        return Err(PsqError::DomainDiagnosticFailed(
            "dims must be strictly increasing and nonempty".into(),
        ));
    }
    let values: Vec<f64> = dims
        .iter()
        .map(|&d| {
            let w = family.weights_at(d);
            w.iter()
                .enumerate()
                .filter(|(_, &wn)| wn > 0.0)
                .map(|(n, &wn)| wn * q_power_column_norm_sq(k, n))
                .sum()
        })
        .collect();
    // log-log fit over the trailing half
    let h = (dims.len() / 2).max(2).min(dims.len());
    let xs: Vec<f64> = dims[dims.len() - h..].iter().map(|&d| (d as f64).ln()).collect();
    let ys: Vec<f64> = values[values.len() - h..]
        .iter()
        .map(|&v| v.max(1e-300).ln())
        .collect();
    let xm = xs.iter().sum::<f64>() / h as f64;
    let ym = ys.iter().sum::<f64>() / h as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - xm) * (y - ym);
        den += (x - xm) * (x - xm);
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    let verdict = if slope > 0.01 {
        GrowthVerdict::Diverging
    } else {
        GrowthVerdict::Bounded
    };
    Ok(HsScanReport {
        k,
        family: family.describe(),
        dims: dims.to_vec(),
        values,
        slope,
        verdict,
    })
}

/// Variances and noise-operator diagnostics of `E^T`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseReport {
    pub var_q: f64,
    pub var_p: f64,
    pub product: f64,
    pub trace_q: f64,
    pub trace_p: f64,
    /// Interior-block deviation of `R(x)` from `Var(Q, T) I`: max off-diagonal
    /// entry and diagonal spread, and the same for `R(y)`.
    pub scalar_defect_x: f64,
    pub scalar_defect_y: f64,
}

fn scalar_identity_defect(r: &TruncatedOperator, value: f64, interior: usize) -> f64 {
    let block = r.interior_block(interior);
    let mut worst = 0.0f64;
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            if i == j {
                worst = worst.max((block[(i, j)].re - value).abs().max(block[(i, j)].im.abs()));
            } else {
                worst = worst.max(block[(i, j)].norm());
            }
        }
    }
    worst
}

/// Noise operators `R(x) = L(x^2, E^T) - L(x, E^T)^2` and the y counterpart,
/// verified to be `Var I` on the interior block, with the uncertainty product.
pub fn noise_report(kit: &MomentKit, t: &GeneratingOperator, tol: &Tolerances) -> Result<NoiseReport> {
    if kit.k_max() < 2 {
        return Err(PsqError::DomainDiagnosticFailed(
            "noise report needs moment powers up to 2".into(),
        ));
    }
    let interior = tol.interior_dim(kit.dim());
    let mut out = NoiseReport {
        var_q: 0.0,
        var_p: 0.0,
        product: 0.0,
        trace_q: 0.0,
        trace_p: 0.0,
        scalar_defect_x: 0.0,
        scalar_defect_y: 0.0,
    };
    for axis in [Axis::X, Axis::Y] {
        let t1 = kit.power_trace(axis, 1, t)?;
        let t2 = kit.power_trace(axis, 2, t)?;
        let var = t2 - t1 * t1;
        let l1 = moment_operator(kit, 1, t, axis)?;
        let l2 = moment_operator(kit, 2, t, axis)?;
        let r = TruncatedOperator::from_matrix(l2.matrix() - l1.matrix() * l1.matrix())?;
        let defect = scalar_identity_defect(&r, var, interior);
        match axis {
            Axis::X => {
                out.var_q = var;
                out.trace_q = t1;
                out.scalar_defect_x = defect;
            }
            Axis::Y => {
                out.var_p = var;
                out.trace_p = t1;
                out.scalar_defect_y = defect;
            }
        }
    }
    out.product = out.var_q * out.var_p;
    Ok(out)
}

/// One candidate's standing in the optimal-generator scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub name: String,
    pub centered: bool,
    pub var_q: f64,
    pub var_p: f64,
    pub product: f64,
    /// Product within tolerance of the 1/4 lower bound.
    pub attains_bound: bool,
    /// `Var(Q) = Var(P)` within tolerance.
    pub symmetric: bool,
}

/// Rank centered candidates by uncertainty product and flag the minimizers.
///
/// Non-centered candidates (`Tr[QT]` or `Tr[PT]` nonzero) are excluded from
/// the ranking but still reported.
pub fn optimal_t_scan(
    kit: &MomentKit,
    candidates: &[(String, GeneratingOperator)],
    symmetry_required: bool,
    tol: &Tolerances,
) -> Result<Vec<CandidateVerdict>> {
    let center_tol = 1e-9;
    let attain_tol = 1e-9;
    let mut verdicts = Vec::with_capacity(candidates.len());
    for (name, t) in candidates {
        let report = noise_report(kit, t, tol)?;
        let centered = report.trace_q.abs() <= center_tol && report.trace_p.abs() <= center_tol;
        let symmetric = (report.var_q - report.var_p).abs() <= 1e-9;
        let attains = centered && report.product <= 0.25 + attain_tol && (!symmetry_required || symmetric);
        verdicts.push(CandidateVerdict {
            name: name.clone(),
            centered,
            var_q: report.var_q,
            var_p: report.var_p,
            product: report.product,
            attains_bound: attains,
            symmetric,
        });
    }
    // centered candidates first, ranked by product; ties and the rest by name
    verdicts.sort_by(|a, b| {
        b.centered
            .cmp(&a.centered)
            .then(a.product.partial_cmp(&b.product).unwrap())
            .then(a.name.cmp(&b.name))
    });
    Ok(verdicts)
}

/// Moment operator of the classical oscillator energy `h = (q^2 + p^2)/2`
/// against a polar POVM with a number-diagonal generator. The result commutes
/// with N; it is returned as the extracted diagonal.
pub fn oscillator_energy_moment(
    k: usize,
    povm: &DiscretePOVM,
    tol: &Tolerances,
) -> Result<(TruncatedOperator, f64)> {
    match povm.grid() {
        Some(g) if g.kind() == GridKind::Polar => {}
        _ => return Err(PsqError::WrongGridKind { expected: "polar" }),
    }
    match povm.generator() {
        Some(meta) if meta.number_diagonal => {}
        _ => return Err(PsqError::NotDiagonal),
    }
    let f = SampledFunction::from_fn(povm, format!("h^{k}"), |q, p| {
        (0.5 * (q * q + p * p)).powi(k as i32)
    });
    let full = op_integral(&f, povm, tol)?;
    // commutant defect with N: [A, N]_{mn} = A_{mn} (n - m)
    let dim = povm.dim();
    let mut defect = 0.0f64;
    for m in 0..dim {
        for n in 0..dim {
            if m != n {
                defect = defect.max(full.entry(m, n).norm() * (n as f64 - m as f64).abs());
            }
        }
    }
    if defect > 1e-8 {
        return Err(PsqError::DomainDiagnosticFailed(format!(
            "oscillator moment does not commute with N: defect {defect:.3e}"
        )));
    }
    let diag: Vec<f64> = (0..dim).map(|n| full.entry(n, n).re).collect();
    Ok((TruncatedOperator::from_diagonal(&diag), defect))
}
