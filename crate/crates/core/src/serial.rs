//! File formats: generating operators and POVMs as JSON (complex entries as
//! `[re, im]` pairs), a compact binary POVM layout, and serialized Naimark
//! dilations.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{PsqError, Result};
use crate::fock::{
    make_coherent_projector, make_number_mixture, make_squeezed_vacuum, validate_generating,
    GeneratingOperator, Tolerances, TruncatedOperator,
};
use crate::povm::{DiscretePOVM, GeneratorMeta, OutcomeSet, PhaseSpaceGrid, TailPolicy};
use crate::spectral::NaimarkDilation;

pub type ComplexPair = [f64; 2];

pub fn matrix_to_rows(m: &DMatrix<C64>) -> Vec<Vec<ComplexPair>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<ComplexPair>]) -> Result<DMatrix<C64>> {
    let nr = rows.len();
    let nc = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(PsqError::DomainDiagnosticFailed(
            "ragged matrix rows".into(),
        ));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| {
        C64::new(rows[i][j][0], rows[i][j][1])
    }))
}

/// JSON form of a generating operator: `{dim, kind, payload}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum GeneratingPayload {
    Matrix(Vec<Vec<ComplexPair>>),
    NumberMixture(Vec<f64>),
    Coherent(ComplexPair),
    SqueezedVacuum { var_q: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratingOperatorJson {
    pub dim: usize,
    #[serde(flatten)]
    pub payload: GeneratingPayload,
}

pub fn generating_to_json(t: &GeneratingOperator) -> GeneratingOperatorJson {
    let payload = match t.weights() {
        Some(w) => GeneratingPayload::NumberMixture(w.to_vec()),
        None => GeneratingPayload::Matrix(matrix_to_rows(t.op().matrix())),
    };
    GeneratingOperatorJson {
        dim: t.dim(),
        payload,
    }
}

pub fn generating_from_json(j: &GeneratingOperatorJson, tol: &Tolerances) -> Result<GeneratingOperator> {
    match &j.payload {
        GeneratingPayload::Matrix(rows) => {
            let m = matrix_from_rows(rows)?;
            if m.nrows() != j.dim {
                return Err(PsqError::DimMismatch {
                    expected: j.dim,
                    got: m.nrows(),
                });
            }
            validate_generating(&TruncatedOperator::from_matrix(m)?, tol)
        }
        GeneratingPayload::NumberMixture(w) => make_number_mixture(w, j.dim, tol),
        GeneratingPayload::Coherent(a) => make_coherent_projector(C64::new(a[0], a[1]), j.dim, tol),
        GeneratingPayload::SqueezedVacuum { var_q } => make_squeezed_vacuum(*var_q, j.dim, tol),
    }
}

/// JSON form of a discrete POVM.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PovmJson {
    pub dim: usize,
    pub outcomes: OutcomesJson,
    pub effects: Vec<Vec<Vec<ComplexPair>>>,
    pub tail: Vec<Vec<ComplexPair>>,
    pub labels: Vec<String>,
    pub tail_policy: TailPolicy,
    pub generator: Option<GeneratorMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomesJson {
    Cells2d { grid: PhaseSpaceGrid },
    Bins1d { centers: Vec<f64>, edges: Vec<f64> },
}

pub fn povm_to_json(p: &DiscretePOVM) -> PovmJson {
    let outcomes = match p.outcomes() {
        OutcomeSet::Cells2d(g) => OutcomesJson::Cells2d { grid: g.clone() },
        OutcomeSet::Bins1d { centers, edges } => OutcomesJson::Bins1d {
            centers: centers.clone(),
            edges: edges.clone(),
        },
    };
    PovmJson {
        dim: p.dim(),
        outcomes,
        effects: p
            .effects()
            .iter()
            .map(|e| matrix_to_rows(e.matrix()))
            .collect(),
        tail: matrix_to_rows(p.tail().matrix()),
        labels: (0..p.n_effects()).map(|i| p.label(i)).collect(),
        tail_policy: p.tail_policy(),
        generator: p.generator().cloned(),
    }
}

pub fn povm_from_json(j: &PovmJson, tol: &Tolerances) -> Result<DiscretePOVM> {
    let effects: Vec<TruncatedOperator> = j
        .effects
        .iter()
        .map(|rows| TruncatedOperator::from_matrix(matrix_from_rows(rows)?))
        .collect::<Result<_>>()?;
    let outcomes = match &j.outcomes {
        OutcomesJson::Cells2d { grid } => OutcomeSet::Cells2d(grid.clone()),
        OutcomesJson::Bins1d { centers, edges } => OutcomeSet::Bins1d {
            centers: centers.clone(),
            edges: edges.clone(),
        },
    };
    DiscretePOVM::from_effects(j.dim, effects, outcomes, j.tail_policy, j.generator.clone(), tol)
}

/// Compact binary POVM layout: `dim: u64 LE`, `cell count: u64 LE`, then each
/// effect in cell order followed by the tail, row-major complex doubles
/// (re, im) LE.
pub fn povm_to_binary(p: &DiscretePOVM) -> Vec<u8> {
    let dim = p.dim();
    let n = p.n_effects();
    let mut out = Vec::with_capacity(16 + (n + 1) * dim * dim * 16);
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    let mut push = |m: &DMatrix<C64>| {
        for i in 0..dim {
            for j in 0..dim {
                out.extend_from_slice(&m[(i, j)].re.to_le_bytes());
                out.extend_from_slice(&m[(i, j)].im.to_le_bytes());
            }
        }
    };
    for e in p.effects() {
        push(e.matrix());
    }
    push(p.tail().matrix());
    out
}

/// Read back the binary layout. Outcome labels are not part of the compact
/// format; bins are indexed 0..n.
pub fn povm_from_binary(bytes: &[u8], tol: &Tolerances) -> Result<DiscretePOVM> {
    let fail = |msg: &str| PsqError::DomainDiagnosticFailed(format!("binary povm: {msg}"));
    if bytes.len() < 16 {
        return Err(fail("truncated header"));
    }
    let dim = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let per = dim * dim * 16;
    if bytes.len() != 16 + (n + 1) * per {
        return Err(fail("length does not match header"));
    }
    let read_matrix = |off: usize| -> DMatrix<C64> {
        DMatrix::from_fn(dim, dim, |i, j| {
            let base = off + (i * dim + j) * 16;
            let re = f64::from_le_bytes(bytes[base..base + 8].try_into().unwrap());
            let im = f64::from_le_bytes(bytes[base + 8..base + 16].try_into().unwrap());
            C64::new(re, im)
        })
    };
    let effects: Vec<TruncatedOperator> = (0..n)
        .map(|k| TruncatedOperator::from_matrix(read_matrix(16 + k * per)))
        .collect::<Result<_>>()?;
    let centers: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let edges: Vec<f64> = (0..=n).map(|i| i as f64 - 0.5).collect();
    DiscretePOVM::from_effects(
        dim,
        effects,
        OutcomeSet::Bins1d { centers, edges },
        TailPolicy::default(),
        None,
        tol,
    )
}

/// JSON form of a Naimark dilation: the isometry determines everything; the
/// projections are coordinate blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NaimarkJson {
    pub dim: usize,
    pub blocks: usize,
    pub big_dim: usize,
    pub clipped: f64,
    pub isometry: Vec<Vec<ComplexPair>>,
}

pub fn naimark_to_json(d: &NaimarkDilation) -> NaimarkJson {
    NaimarkJson {
        dim: d.dim(),
        blocks: d.blocks(),
        big_dim: d.big_dim(),
        clipped: d.clipped(),
        isometry: matrix_to_rows(d.isometry()),
    }
}
