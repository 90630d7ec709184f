//! The M-map: a d³×d³ tensor taking system preparations to output states,
//! and its decomposition into the uncorrelated part L and the memory matrix
//! K = M − L, the CP map B^CP and the affine term B^aff.
//!
//! Index order is fixed here for the whole crate. A tensor entry
//! M_{r r′ r″; s s′ s″} lives at row ι(r, r′, r″) = r·d² + r′·d + r″ and
//! column ι(s, s′, s″). In this grouping M is the Gram matrix of its Kraus
//! vectors, so PSD-ness is a single eigenvalue check. Two-index map forms
//! (B^CP, preparation aforms) use (r, r′) ↦ r·d + r′.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::objects::{
    BipartiteState, DensityMatrix, PreparationMap, UnitaryMatrix, PROBABILITY_CUTOFF,
};
use crate::tensor::{self, kron, ComplexMatrix, CLAMP_TOL, ZERO};
use crate::textio::{write_matrix, LineReader};

#[inline]
pub fn iota(d: usize, r: usize, r1: usize, r2: usize) -> usize {
    (r * d + r1) * d + r2
}

/// Which (row, column) index pair of a d³×d³ tensor to trace out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexPair {
    /// (r, s), the output-state indices.
    Output,
    /// (r′, s′), the preparation output indices.
    Prepared,
    /// (r″, s″), the initial-state indices.
    Initial,
}

/// δ-contraction of one index pair. The two surviving pairs keep their
/// relative order, e.g. tracing `Output` leaves the (r′r″; s′s″) grouping.
pub fn contract_pair(t: &ComplexMatrix, d: usize, pair: IndexPair) -> ComplexMatrix {
    let split = |i: usize| (i / (d * d), (i / d) % d, i % d);
    let mut out = ComplexMatrix::zeros(d * d, d * d);
    let n = d * d * d;
    for row in 0..n {
        let (r, r1, r2) = split(row);
        for col in 0..n {
            let (s, s1, s2) = split(col);
            let (keep, i, j) = match pair {
                IndexPair::Output => (r == s, r1 * d + r2, s1 * d + s2),
                IndexPair::Prepared => (r1 == s1, r * d + r2, s * d + s2),
                IndexPair::Initial => (r2 == s2, r * d + r1, s * d + s1),
            };
            if keep {
                out[(i, j)] += t[(row, col)];
            }
        }
    }
    out
}

/// Applies a d²×d² map form T to a d×d operator: out_{rs} = Σ T_{(rr′),(ss′)} X_{r′s′}.
pub fn apply_map_form(t: &ComplexMatrix, x: &ComplexMatrix) -> ComplexMatrix {
    let d = x.rows();
    ComplexMatrix::from_fn(d, d, |r, s| {
        let mut acc = ZERO;
        for r1 in 0..d {
            for s1 in 0..d {
                acc += t[(r * d + r1, s * d + s1)] * x[(r1, s1)];
            }
        }
        acc
    })
}

/// Q_{rs} = Σ T_{rr′r″;ss′s″} · a_{(r′r″),(s′s″)} without normalization.
pub fn contract_tensor(t: &ComplexMatrix, d: usize, aform: &ComplexMatrix) -> ComplexMatrix {
    let dd = d * d;
    ComplexMatrix::from_fn(d, d, |r, s| {
        let mut acc = ZERO;
        for a in 0..dd {
            for b in 0..dd {
                acc += t[(r * dd + a, s * dd + b)] * aform[(a, b)];
            }
        }
        acc
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MMap {
    d_s: usize,
    tensor: ComplexMatrix,
}

impl MMap {
    /// Wraps a raw d³×d³ tensor (e.g. a reconstruction). Only the shape is
    /// checked; see [`MMap::invariants`] for the physical properties.
    pub fn from_tensor(d_s: usize, tensor: ComplexMatrix) -> Result<Self> {
        let n = d_s * d_s * d_s;
        if tensor.rows() != n || tensor.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "M-map for dS={d_s} must be {n}x{n}, got {}x{}",
                tensor.rows(),
                tensor.cols()
            )));
        }
        Ok(MMap { d_s, tensor })
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn tensor(&self) -> &ComplexMatrix {
        &self.tensor
    }

    /// Unnormalized output for an arbitrary d²×d² map form.
    pub fn contract_aform(&self, aform: &ComplexMatrix) -> ComplexMatrix {
        contract_tensor(&self.tensor, self.d_s, aform)
    }

    pub fn invariants(&self) -> Result<MMapInvariants> {
        let d = self.d_s;
        let rho_s = initial_state_of(self);
        let expected = kron(&ComplexMatrix::identity(d), rho_s.matrix());
        let output_trace = contract_pair(&self.tensor, d, IndexPair::Output);
        let min_eigenvalue = tensor::min_eigenvalue(&self.tensor.hermitize())?;
        Ok(MMapInvariants {
            hermitian_deviation: self.tensor.hermitian_deviation(),
            total_trace: self.tensor.trace().re,
            output_contraction_error: (&output_trace - &expected).max_abs(),
            min_eigenvalue,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("MMAP {}\n", self.d_s);
        write_matrix(&mut out, &self.tensor);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = LineReader::new(text);
        let d = r.expect_header("MMAP", 1)?[0];
        let tensor = r.read_matrix()?;
        r.expect_end()?;
        MMap::from_tensor(d, tensor)
    }
}

/// Checks of the algebraic properties every physical M-map has.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MMapInvariants {
    pub hermitian_deviation: f64,
    /// Should equal dS.
    pub total_trace: f64,
    /// max |δ_{rs}-contraction − I ⊗ ρ^S|
    pub output_contraction_error: f64,
    pub min_eigenvalue: f64,
}

impl MMapInvariants {
    pub fn holds(&self, d_s: usize) -> bool {
        self.hermitian_deviation <= CLAMP_TOL
            && (self.total_trace - d_s as f64).abs() <= CLAMP_TOL
            && self.output_contraction_error <= CLAMP_TOL
            && self.min_eigenvalue >= -CLAMP_TOL
    }
}

/// K = M − L, generated by the correlation matrix alone.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryMatrix {
    d_s: usize,
    tensor: ComplexMatrix,
}

impl MemoryMatrix {
    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn tensor(&self) -> &ComplexMatrix {
        &self.tensor
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.tensor.frobenius_norm()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("KMAT {}\n", self.d_s);
        write_matrix(&mut out, &self.tensor);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = LineReader::new(text);
        let d = r.expect_header("KMAT", 1)?[0];
        let tensor = r.read_matrix()?;
        r.expect_end()?;
        let n = d * d * d;
        if tensor.rows() != n || tensor.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "KMAT {d} needs a {n}x{n} tensor"
            )));
        }
        Ok(MemoryMatrix { d_s: d, tensor })
    }
}

/// B(ρ) = B^CP(ρ) + tr(ρ)·B^aff.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicalMap {
    pub d_s: usize,
    /// B^CP in the (rr′; ss′) grouping.
    pub linear: ComplexMatrix,
    /// B^aff
    pub affine: ComplexMatrix,
}

impl DynamicalMap {
    /// Acts on a system operator; the affine part is weighted by tr(ρ) so the
    /// map is linear and agrees with B^CP(ρ) + B^aff on states.
    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        &apply_map_form(&self.linear, rho) + &self.affine.scale(rho.trace())
    }

    /// Choi-style matrix of the linear extension: B^CP + B^aff ⊗ I in the
    /// (rr′; ss′) grouping. A negative eigenvalue witnesses a not completely
    /// positive map.
    pub fn choi_style(&self) -> ComplexMatrix {
        &self.linear + &kron(&self.affine, &ComplexMatrix::identity(self.d_s))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("BMAP {}\n", self.d_s);
        write_matrix(&mut out, &self.linear);
        write_matrix(&mut out, &self.affine);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = LineReader::new(text);
        let d = r.expect_header("BMAP", 1)?[0];
        let linear = r.read_matrix()?;
        let affine = r.read_matrix()?;
        r.expect_end()?;
        if linear.rows() != d * d
            || !linear.is_square()
            || affine.rows() != d
            || !affine.is_square()
        {
            return Err(Error::DimensionMismatch(format!(
                "BMAP {d} block shapes are wrong"
            )));
        }
        Ok(DynamicalMap {
            d_s: d,
            linear,
            affine,
        })
    }
}

/// Operators M^μ (d × d², row r, column r′·d + r″) with Σ_μ vec(M^μ)vec(M^μ)† = M.
#[derive(Debug, Clone)]
pub struct KrausSet {
    pub d_s: usize,
    pub ops: Vec<ComplexMatrix>,
}

impl KrausSet {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.d_s.pow(3);
        let mut out = ComplexMatrix::zeros(n, n);
        for op in &self.ops {
            out += &ComplexMatrix::outer(op.data(), op.data());
        }
        out
    }

    /// Σ_μ M^μ · a · M^μ† for a preparation map form `a`.
    pub fn apply(&self, aform: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.d_s, self.d_s);
        for op in &self.ops {
            out += &op.matmul(aform).matmul(&op.adjoint());
        }
        out
    }
}

/// M_{rr′r″;ss′s″} = Σ_{αβε} U_{(rε),(r′α)} ρ^SE_{(r″α),(s″β)} conj(U_{(sε),(s′β)}).
pub fn build_mmap(u: &UnitaryMatrix, state: &BipartiteState) -> Result<MMap> {
    build_mmap_from_operator(u, state.joint(), state.d_s(), state.d_e())
}

/// Same contraction for any joint operator (a state, a product part or χ).
pub fn build_mmap_from_operator(
    u: &UnitaryMatrix,
    x: &ComplexMatrix,
    d: usize,
    d_e: usize,
) -> Result<MMap> {
    if u.dim() != d * d_e || x.rows() != d * d_e || !x.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "unitary is {0}x{0}, operator {1}x{1}; both must be dS·dE = {2}",
            u.dim(),
            x.rows(),
            d * d_e
        )));
    }
    let um = u.matrix();
    let n = d * d * d;
    let mut t = ComplexMatrix::zeros(n, n);
    for r in 0..d {
        for r1 in 0..d {
            for r2 in 0..d {
                let row = iota(d, r, r1, r2);
                for s in 0..d {
                    for s1 in 0..d {
                        for s2 in 0..d {
                            let col = iota(d, s, s1, s2);
                            let mut acc = ZERO;
                            for eps in 0..d_e {
                                for a in 0..d_e {
                                    let left = um[(r * d_e + eps, r1 * d_e + a)];
                                    if left == ZERO {
                                        continue;
                                    }
                                    let mut inner = ZERO;
                                    for b in 0..d_e {
                                        inner += x[(r2 * d_e + a, s2 * d_e + b)]
                                            * um[(s * d_e + eps, s1 * d_e + b)].conj();
                                    }
                                    acc += left * inner;
                                }
                            }
                            t[(row, col)] = acc;
                        }
                    }
                }
            }
        }
    }
    MMap::from_tensor(d, t)
}

/// Output state for a preparation, renormalized by its success probability.
pub fn contract_mmap(m: &MMap, prep: &PreparationMap) -> Result<DensityMatrix> {
    Ok(contract_mmap_with_probability(m, prep)?.1)
}

/// (probability, normalized output). The probability is the trace of the
/// unnormalized contraction.
pub fn contract_mmap_with_probability(
    m: &MMap,
    prep: &PreparationMap,
) -> Result<(f64, DensityMatrix)> {
    if prep.d_s() != m.d_s {
        return Err(Error::DimensionMismatch(format!(
            "preparation acts on dS={}, M-map has dS={}",
            prep.d_s(),
            m.d_s
        )));
    }
    let q = m.contract_aform(prep.aform());
    let probability = q.trace().re;
    if probability < PROBABILITY_CUTOFF {
        return Err(Error::DegeneratePreparation { probability });
    }
    let q = q.scale_real(1.0 / probability).hermitize();
    Ok((probability, DensityMatrix::new(q)?))
}

/// ρ^S_{r″s″} = (1/dS) Σ_{r,r′} M_{rr′r″;rr′s″}.
pub fn initial_state_of(m: &MMap) -> DensityMatrix {
    let d = m.d_s;
    let mut rho = ComplexMatrix::zeros(d, d);
    for r in 0..d {
        for r1 in 0..d {
            for r2 in 0..d {
                for s2 in 0..d {
                    rho[(r2, s2)] += m.tensor[(iota(d, r, r1, r2), iota(d, r, r1, s2))];
                }
            }
        }
    }
    let rho = rho.scale_real(1.0 / d as f64).hermitize();
    // A noisy reconstruction may miss the density-matrix tolerances; the
    // extraction itself is still well defined.
    DensityMatrix::new(rho.clone()).unwrap_or_else(|_| DensityMatrix::from_raw(rho))
}

/// B^CP_{(rr′),(ss′)} = Σ_{r″} M_{rr′r″;ss′r″}.
pub fn bcp_of(m: &MMap) -> ComplexMatrix {
    contract_pair(&m.tensor, m.d_s, IndexPair::Initial)
}

/// (L, K) with L_{rr′r″;ss′s″} = B^CP_{(rr′),(ss′)} ρ^S_{r″s″} and K = M − L.
pub fn memory_of(m: &MMap) -> (MMap, MemoryMatrix) {
    let d = m.d_s;
    let bcp = bcp_of(m);
    let rho_s = initial_state_of(m);
    // (rr′; ss′) ⊗ (r″; s″) is exactly the ι flattening.
    let l = kron(&bcp, rho_s.matrix());
    let k = &m.tensor - &l;
    (
        MMap { d_s: d, tensor: l },
        MemoryMatrix { d_s: d, tensor: k },
    )
}

/// χ^S_A = K(A): the coherence fed into the system by the initial
/// correlations. Not normalized.
pub fn apply_k(k: &MemoryMatrix, prep: &PreparationMap) -> Result<ComplexMatrix> {
    if prep.d_s() != k.d_s {
        return Err(Error::DimensionMismatch(format!(
            "preparation acts on dS={}, memory matrix has dS={}",
            prep.d_s(),
            k.d_s
        )));
    }
    Ok(contract_tensor(&k.tensor, k.d_s, prep.aform()))
}

pub fn assemble_b(m: &MMap) -> DynamicalMap {
    let (_, k) = memory_of(m);
    let affine = apply_k(&k, &PreparationMap::identity(m.d_s)).expect("dimensions agree");
    DynamicalMap {
        d_s: m.d_s,
        linear: bcp_of(m),
        affine,
    }
}

/// Layout of a tensor handed to [`cp_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// d²×d² map form in the (rr′; ss′) grouping (B^CP, aforms, Choi-style).
    MapForm,
    /// d³×d³ tensor in the ι grouping.
    MMapForm,
    /// d²×d² superoperator S with vec(Φ(X)) = S·vec(X), row-major vec, i.e.
    /// the (rs; r′s′) grouping. Reshuffled to map form before the check.
    Superoperator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpCheck {
    pub min_eigenvalue: f64,
    pub is_cp: bool,
}

/// T_{(rr′),(ss′)} = S_{(rs),(r′s′)}
pub fn reshuffle_superoperator(s: &ComplexMatrix, d: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(d * d, d * d, |i, j| {
        let (r, r1) = (i / d, i % d);
        let (s_, s1) = (j / d, j % d);
        s[(r * d + s_, r1 * d + s1)]
    })
}

pub fn cp_check(t: &ComplexMatrix, grouping: Grouping) -> Result<CpCheck> {
    let n = t.ensure_square("cp_check input")?;
    let psd_form = match grouping {
        Grouping::MapForm | Grouping::Superoperator => {
            let d = (n as f64).sqrt().round() as usize;
            if d * d != n {
                return Err(Error::DimensionMismatch(format!(
                    "{n}x{n} is not a d²×d² map form"
                )));
            }
            if grouping == Grouping::Superoperator {
                reshuffle_superoperator(t, d)
            } else {
                t.clone()
            }
        }
        Grouping::MMapForm => {
            let d = (n as f64).cbrt().round() as usize;
            if d * d * d != n {
                return Err(Error::DimensionMismatch(format!(
                    "{n}x{n} is not a d³×d³ tensor"
                )));
            }
            t.clone()
        }
    };
    let min_eigenvalue = tensor::min_eigenvalue(&psd_form)?;
    Ok(CpCheck {
        min_eigenvalue,
        is_cp: min_eigenvalue >= -CLAMP_TOL,
    })
}

/// Operator-sum form of M from the spectral decomposition of its flattened
/// tensor: M^μ = √λ_μ · (eigenvector μ reshaped to d × d²).
pub fn kraus_of(m: &MMap) -> Result<KrausSet> {
    let spectrum = tensor::hermitian_eig(&m.tensor)?;
    let min = spectrum.min();
    if min < -CLAMP_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let d = m.d_s;
    let ops = spectrum
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > CLAMP_TOL)
        .map(|(i, &l)| {
            let col = spectrum.eigenvectors.column(i);
            let scaled: Vec<Complex64> = col.iter().map(|z| z * l.sqrt()).collect();
            ComplexMatrix::from_vec(d, d * d, scaled).expect("d³ entries")
        })
        .collect();
    Ok(KrausSet { d_s: d, ops })
}
