//! Physical value types: density matrices, correlated system–environment
//! states, joint unitaries and preparation maps acting on the system.
//!
//! Joint indices are system-first: (r, α) ↦ r·dE + α.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{self, kron, partial_trace, ComplexMatrix, Subsystem, CLAMP_TOL, ONE, ZERO};
use crate::textio::{write_matrix, LineReader};

/// Preparations whose success probability falls below this are treated as
/// incompatible with the state rather than as numerical noise.
pub const PROBABILITY_CUTOFF: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity (all to 1e-10).
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        mat.ensure_square("density matrix")?;
        let deviation = mat.hermitian_deviation();
        if deviation > CLAMP_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        let trace = mat.trace();
        if (trace.re - 1.0).abs() > CLAMP_TOL || trace.im.abs() > CLAMP_TOL {
            return Err(Error::NotUnitTrace { trace: trace.re });
        }
        let min = tensor::min_eigenvalue(&mat)?;
        if min < -CLAMP_TOL {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(DensityMatrix { mat })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix {
            mat: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64),
        }
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) nonzero vector.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DimensionMismatch(
                "pure state from a zero vector".into(),
            ));
        }
        let unit: Vec<Complex64> = psi.iter().map(|z| z / norm).collect();
        Ok(DensityMatrix {
            mat: ComplexMatrix::outer(&unit, &unit),
        })
    }

    /// Skips validation; for extractions from noisy data.
    pub(crate) fn from_raw(mat: ComplexMatrix) -> Self {
        DensityMatrix { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.mat
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteState {
    d_s: usize,
    d_e: usize,
    joint: ComplexMatrix,
}

impl BipartiteState {
    pub fn new(joint: ComplexMatrix, d_s: usize, d_e: usize) -> Result<Self> {
        if joint.rows() != d_s * d_e || !joint.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "joint state for dS={d_s}, dE={d_e} must be {0}x{0}, got {1}x{2}",
                d_s * d_e,
                joint.rows(),
                joint.cols()
            )));
        }
        let joint = DensityMatrix::new(joint)?.into_matrix();
        Ok(BipartiteState { d_s, d_e, joint })
    }

    pub fn product(rho_s: &DensityMatrix, rho_e: &DensityMatrix) -> Self {
        BipartiteState {
            d_s: rho_s.dim(),
            d_e: rho_e.dim(),
            joint: kron(rho_s.matrix(), rho_e.matrix()),
        }
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn joint(&self) -> &ComplexMatrix {
        &self.joint
    }

    pub fn rho_s(&self) -> DensityMatrix {
        let m =
            partial_trace(&self.joint, self.d_s, self.d_e, Subsystem::A).expect("shape checked");
        DensityMatrix { mat: m.hermitize() }
    }

    pub fn rho_e(&self) -> DensityMatrix {
        let m =
            partial_trace(&self.joint, self.d_s, self.d_e, Subsystem::B).expect("shape checked");
        DensityMatrix { mat: m.hermitize() }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("BIPARTITE {} {}\n", self.d_s, self.d_e);
        write_matrix(&mut out, &self.joint);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = LineReader::new(text);
        let dims = r.expect_header("BIPARTITE", 2)?;
        let joint = r.read_matrix()?;
        r.expect_end()?;
        BipartiteState::new(joint, dims[0], dims[1])
    }
}

/// χ = ρ^SE − ρ^S ⊗ ρ^E: Hermitian with vanishing partial traces.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    d_s: usize,
    d_e: usize,
    chi: ComplexMatrix,
}

impl CorrelationMatrix {
    pub fn new(chi: ComplexMatrix, d_s: usize, d_e: usize) -> Result<Self> {
        let deviation = chi.hermitian_deviation();
        if deviation > CLAMP_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        let tr_e = partial_trace(&chi, d_s, d_e, Subsystem::A)?;
        let tr_s = partial_trace(&chi, d_s, d_e, Subsystem::B)?;
        let worst = tr_e.max_abs().max(tr_s.max_abs());
        if worst > CLAMP_TOL {
            return Err(Error::Verification(format!(
                "correlation matrix has a partial trace of size {worst:e}"
            )));
        }
        Ok(CorrelationMatrix { d_s, d_e, chi })
    }

    pub fn zero(d_s: usize, d_e: usize) -> Self {
        CorrelationMatrix {
            d_s,
            d_e,
            chi: ComplexMatrix::zeros(d_s * d_e, d_s * d_e),
        }
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.chi
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.chi.frobenius_norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    mat: ComplexMatrix,
}

impl UnitaryMatrix {
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        mat.ensure_square("unitary")?;
        let deviation = tensor::unitarity_deviation(&mat);
        if deviation > CLAMP_TOL {
            return Err(Error::NotUnitary { deviation });
        }
        Ok(UnitaryMatrix { mat })
    }

    pub fn identity(dim: usize) -> Self {
        UnitaryMatrix {
            mat: ComplexMatrix::identity(dim),
        }
    }

    /// SWAP on C^d ⊗ C^d.
    pub fn swap(d: usize) -> Self {
        let n = d * d;
        let mat = ComplexMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (i / d, i % d);
            if j == b * d + a {
                ONE
            } else {
                ZERO
            }
        });
        UnitaryMatrix { mat }
    }

    /// Controlled-NOT with the first (system) qubit as control.
    pub fn cnot() -> Self {
        UnitaryMatrix {
            mat: ComplexMatrix::from_real_rows(&[
                &[1.0, 0.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 1.0],
                &[0.0, 0.0, 1.0, 0.0],
            ]),
        }
    }

    /// |0⟩⟨0| ⊗ I + Σ_{j≥1} |j⟩⟨j| ⊗ V on C^{d_s} ⊗ C^{d_e}.
    pub fn controlled(d_s: usize, target: &UnitaryMatrix) -> Self {
        let d_e = target.dim();
        let mut mat = ComplexMatrix::zeros(d_s * d_e, d_s * d_e);
        for j in 0..d_s {
            for a in 0..d_e {
                for b in 0..d_e {
                    mat[(j * d_e + a, j * d_e + b)] = if j == 0 {
                        if a == b {
                            ONE
                        } else {
                            ZERO
                        }
                    } else {
                        target.mat[(a, b)]
                    };
                }
            }
        }
        UnitaryMatrix { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    /// Header `UNITARY dS dE` followed by the matrix block.
    pub fn to_text(&self, d_s: usize, d_e: usize) -> String {
        let mut out = format!("UNITARY {d_s} {d_e}\n");
        write_matrix(&mut out, &self.mat);
        out
    }

    /// Returns the unitary together with the (dS, dE) split named in the header.
    pub fn from_text(text: &str) -> Result<(Self, usize, usize)> {
        let mut r = LineReader::new(text);
        let dims = r.expect_header("UNITARY", 2)?;
        let mat = r.read_matrix()?;
        r.expect_end()?;
        if mat.rows() != dims[0] * dims[1] {
            return Err(Error::DimensionMismatch(format!(
                "unitary is {}x{} but header names dS={}, dE={}",
                mat.rows(),
                mat.cols(),
                dims[0],
                dims[1]
            )));
        }
        Ok((UnitaryMatrix::new(mat)?, dims[0], dims[1]))
    }
}

/// A completely positive, trace-non-increasing operation on the system.
///
/// `aform` is the d²×d² map form with row index r′·d + r″ and column index
/// s′·d + s″: aform = Σ_k vec(A^k) vec(A^k)† with row-major vec, so that
/// A(ρ)_{r′s′} = Σ aform_{(r′r″),(s′s″)} ρ_{r″s″}.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparationMap {
    d_s: usize,
    ops: Vec<ComplexMatrix>,
    aform: ComplexMatrix,
}

impl PreparationMap {
    pub fn identity(d_s: usize) -> Self {
        Self::from_single(ComplexMatrix::identity(d_s)).expect("identity is trace preserving")
    }

    pub fn from_single(op: ComplexMatrix) -> Result<Self> {
        prep_from_kraus(vec![op])
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn ops(&self) -> &[ComplexMatrix] {
        &self.ops
    }

    pub fn aform(&self) -> &ComplexMatrix {
        &self.aform
    }

    /// Applies the map to a system operator.
    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.d_s, self.d_s);
        for a in &self.ops {
            out += &a.matmul(rho).matmul(&a.adjoint());
        }
        out
    }

    /// Σ_k A^k† A^k
    pub fn effect(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.d_s, self.d_s);
        for a in &self.ops {
            out += &a.adjoint().matmul(a);
        }
        out
    }
}

/// Map form of an operator list (see [`PreparationMap`]).
pub fn aform_of_ops(ops: &[ComplexMatrix]) -> ComplexMatrix {
    let d = ops.first().map_or(0, |a| a.rows());
    let mut aform = ComplexMatrix::zeros(d * d, d * d);
    for a in ops {
        let v = a.data();
        aform += &ComplexMatrix::outer(v, v);
    }
    aform
}

pub fn prep_from_kraus(ops: Vec<ComplexMatrix>) -> Result<PreparationMap> {
    let Some(first) = ops.first() else {
        return Err(Error::DimensionMismatch(
            "preparation needs at least one operator".into(),
        ));
    };
    let d_s = first.ensure_square("preparation operator")?;
    if let Some(bad) = ops.iter().find(|a| a.rows() != d_s || a.cols() != d_s) {
        return Err(Error::DimensionMismatch(format!(
            "preparation operators must all be {d_s}x{d_s}, found {}x{}",
            bad.rows(),
            bad.cols()
        )));
    }
    let aform = aform_of_ops(&ops);
    let prep = PreparationMap { d_s, ops, aform };
    let max_eigenvalue = tensor::hermitian_eig(&prep.effect().hermitize())?.max();
    if max_eigenvalue > 1.0 + CLAMP_TOL {
        return Err(Error::TraceIncreasing { max_eigenvalue });
    }
    Ok(prep)
}

/// ρ^SE = ρ^S ⊗ ρ^E + χ, rejected when the sum is not a state.
pub fn compose_bipartite(
    rho_s: &DensityMatrix,
    rho_e: &DensityMatrix,
    chi: Option<&CorrelationMatrix>,
) -> Result<BipartiteState> {
    let (d_s, d_e) = (rho_s.dim(), rho_e.dim());
    let mut joint = kron(rho_s.matrix(), rho_e.matrix());
    if let Some(chi) = chi {
        if chi.d_s != d_s || chi.d_e != d_e {
            return Err(Error::DimensionMismatch(format!(
                "correlation matrix is for ({}, {}), states are ({d_s}, {d_e})",
                chi.d_s, chi.d_e
            )));
        }
        joint += &chi.chi;
    }
    BipartiteState::new(joint, d_s, d_e)
}

/// (ρ^S, ρ^E, χ) with χ = ρ^SE − ρ^S ⊗ ρ^E.
pub fn split_correlations(
    state: &BipartiteState,
) -> (DensityMatrix, DensityMatrix, CorrelationMatrix) {
    let rho_s = state.rho_s();
    let rho_e = state.rho_e();
    let chi = &state.joint - &kron(rho_s.matrix(), rho_e.matrix());
    let chi = CorrelationMatrix {
        d_s: state.d_s,
        d_e: state.d_e,
        chi,
    };
    (rho_s, rho_e, chi)
}

/// Σ_k (A^k ⊗ I) X (A^k ⊗ I)† for any joint operator X.
pub fn apply_prep_to_joint(
    prep: &PreparationMap,
    x: &ComplexMatrix,
    d_e: usize,
) -> Result<ComplexMatrix> {
    let n = prep.d_s * d_e;
    if x.rows() != n || x.cols() != n {
        return Err(Error::DimensionMismatch(format!(
            "preparation on dS={} with dE={d_e} needs a {n}x{n} operator, got {}x{}",
            prep.d_s,
            x.rows(),
            x.cols()
        )));
    }
    let id_e = ComplexMatrix::identity(d_e);
    let mut out = ComplexMatrix::zeros(n, n);
    for a in &prep.ops {
        let lifted = kron(a, &id_e);
        out += &lifted.matmul(x).matmul(&lifted.adjoint());
    }
    Ok(out)
}

/// Applies a preparation to the system half of a joint state. Returns the
/// success probability and the renormalized post-preparation state.
pub fn apply_prep(prep: &PreparationMap, state: &BipartiteState) -> Result<(f64, BipartiteState)> {
    if prep.d_s != state.d_s {
        return Err(Error::DimensionMismatch(format!(
            "preparation acts on dS={}, state has dS={}",
            prep.d_s, state.d_s
        )));
    }
    let sigma = apply_prep_to_joint(prep, &state.joint, state.d_e)?;
    let probability = sigma.trace().re;
    if probability < PROBABILITY_CUTOFF {
        return Err(Error::DegeneratePreparation { probability });
    }
    let post = sigma.scale_real(1.0 / probability).hermitize();
    Ok((
        probability,
        BipartiteState::new(post, state.d_s, state.d_e)?,
    ))
}

/// tr_E[U X U†] for any joint operator X.
pub fn evolve_reduce_operator(
    u: &UnitaryMatrix,
    x: &ComplexMatrix,
    d_s: usize,
    d_e: usize,
) -> Result<ComplexMatrix> {
    if u.dim() != d_s * d_e || x.rows() != d_s * d_e {
        return Err(Error::DimensionMismatch(format!(
            "unitary is {0}x{0} and operator is {1}x{1}, expected dS·dE = {2}",
            u.dim(),
            x.rows(),
            d_s * d_e
        )));
    }
    let evolved = u.mat.matmul(x).matmul(&u.mat.adjoint());
    partial_trace(&evolved, d_s, d_e, Subsystem::A)
}

/// tr_E[U ρ^SE U†]
pub fn evolve_reduce(u: &UnitaryMatrix, state: &BipartiteState) -> Result<DensityMatrix> {
    let reduced = evolve_reduce_operator(u, &state.joint, state.d_s, state.d_e)?;
    DensityMatrix::new(reduced.hermitize())
}
