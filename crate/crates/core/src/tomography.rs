//! Preparation bases, simulated tomography records and linear-inversion
//! reconstruction of the M-map.
//!
//! Basis indices are 0-based. Preparation `(m, n)` sits at position
//! `m·d² + n` and applies the single operator |π_n⟩⟨π_m|: measure along π_m,
//! then re-prepare π_n.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mmap::MMap;
use crate::objects::{
    apply_prep_to_joint, evolve_reduce_operator, BipartiteState, DensityMatrix, PreparationMap,
    UnitaryMatrix, PROBABILITY_CUTOFF,
};
use crate::rng::{derive_seed, ShiftRegisterRng};
use crate::scenarios::haar_unitary;
use crate::tensor::{hermitian_eig, kron, ComplexMatrix, ZERO};
use crate::textio::{fmt_f64, write_matrix, LineReader};

/// Gram matrices with a larger eigenvalue ratio are rejected.
pub const MAX_GRAM_CONDITION: f64 = 1e8;

/// Inverse of a Hermitian positive-definite Gram matrix plus its condition
/// number. `inverse` is `None` when the matrix is singular or too badly
/// conditioned to invert.
#[derive(Debug, Clone)]
struct GramInverse {
    condition: f64,
    inverse: Option<ComplexMatrix>,
}

fn gram_inverse(elements: &[ComplexMatrix]) -> Result<GramInverse> {
    let n = elements.len();
    let gram = ComplexMatrix::from_fn(n, n, |i, j| elements[i].hs_inner(&elements[j])).hermitize();
    let spectrum = hermitian_eig(&gram)?;
    let (lo, hi) = (spectrum.min(), spectrum.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let inverse = (condition <= MAX_GRAM_CONDITION).then(|| spectrum.reconstruct_with(|l| 1.0 / l));
    Ok(GramInverse { condition, inverse })
}

/// Dual frame: D_j = Σ_i (G⁻¹)_{ij} X_i, so that ⟨D_j, X_k⟩ = δ_{jk}.
fn dual_elements(elements: &[ComplexMatrix], g_inv: &ComplexMatrix) -> Vec<ComplexMatrix> {
    let (rows, cols) = (elements[0].rows(), elements[0].cols());
    (0..elements.len())
        .map(|j| {
            let mut d = ComplexMatrix::zeros(rows, cols);
            for (i, x) in elements.iter().enumerate() {
                let c = g_inv[(i, j)];
                if c != ZERO {
                    d += &x.map(|z| z * c);
                }
            }
            d
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PreparationBasis {
    d_s: usize,
    vectors: Vec<Vec<Complex64>>,
    projectors: Vec<ComplexMatrix>,
    preparations: Vec<PreparationMap>,
    projector_condition: f64,
    projector_duals: Option<Vec<ComplexMatrix>>,
    aform_condition: f64,
    aform_duals: Option<Vec<ComplexMatrix>>,
}

fn normalized(v: Vec<Complex64>) -> Vec<Complex64> {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

/// Pure-state vectors: the qubit set |x+⟩, |y+⟩, |z+⟩, |x−⟩, and for d > 2
/// |j⟩, (|j⟩+|k⟩)/√2, (|j⟩+i|k⟩)/√2 with j < k.
pub fn pure_state_vectors(d: usize) -> Vec<Vec<Complex64>> {
    assert!(d >= 2, "a pure-state basis needs dS >= 2, got {d}");
    let re = |x: f64| Complex64::new(x, 0.0);
    if d == 2 {
        let i = Complex64::new(0.0, 1.0);
        return vec![
            normalized(vec![re(1.0), re(1.0)]),
            normalized(vec![re(1.0), i]),
            vec![re(1.0), re(0.0)],
            normalized(vec![re(1.0), re(-1.0)]),
        ];
    }
    let unit = |j: usize| -> Vec<Complex64> {
        (0..d).map(|k| re(if k == j { 1.0 } else { 0.0 })).collect()
    };
    let mut out: Vec<Vec<Complex64>> = (0..d).map(unit).collect();
    for j in 0..d {
        for k in j + 1..d {
            let mut plus = unit(j);
            plus[k] = re(1.0);
            out.push(normalized(plus));
            let mut plus_i = unit(j);
            plus_i[k] = Complex64::new(0.0, 1.0);
            out.push(normalized(plus_i));
        }
    }
    out
}

/// The d² projectors |π_m⟩⟨π_m| together with everything derived from them.
pub fn pure_state_basis(d: usize) -> PreparationBasis {
    preparation_basis(d)
}

/// d⁴ preparations A^(mn) = |π_n⟩⟨π_m| built on [`pure_state_vectors`].
pub fn preparation_basis(d: usize) -> PreparationBasis {
    PreparationBasis::from_vectors(pure_state_vectors(d))
        .expect("standard basis is well conditioned")
}

impl PreparationBasis {
    /// Builds the basis from d² pure vectors (normalized here). Linear
    /// dependence is not an error at construction; it surfaces as
    /// [`Error::IllConditioned`] when duals are needed.
    pub fn from_vectors(vectors: Vec<Vec<Complex64>>) -> Result<Self> {
        let d = vectors.first().map_or(0, |v| v.len());
        if d < 2 || vectors.len() != d * d || vectors.iter().any(|v| v.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "a preparation basis needs d² vectors of length d >= 2, got {} vectors of length {d}",
                vectors.len()
            )));
        }
        let vectors: Vec<Vec<Complex64>> = vectors.into_iter().map(normalized).collect();
        let projectors: Vec<ComplexMatrix> =
            vectors.iter().map(|v| ComplexMatrix::outer(v, v)).collect();
        let mut preparations = Vec::with_capacity(d * d * d * d);
        for pi_m in &vectors {
            for pi_n in &vectors {
                preparations.push(PreparationMap::from_single(ComplexMatrix::outer(
                    pi_n, pi_m,
                ))?);
            }
        }
        let proj = gram_inverse(&projectors)?;
        let projector_duals = proj.inverse.as_ref().map(|g| dual_elements(&projectors, g));
        // aform(A^(mn))_{(r′r″),(s′s″)} = P_n[r′,s′]·P_m[s″,r″], so the aform Gram
        // is G_P ⊗ G_P and the duals factor the same way.
        let aform_condition = proj.condition * proj.condition;
        let aform_duals = projector_duals.as_ref().and_then(|e| {
            (aform_condition <= MAX_GRAM_CONDITION).then(|| {
                let mut out = Vec::with_capacity(d * d * d * d);
                for e_m in e {
                    for e_n in e {
                        out.push(ComplexMatrix::from_fn(d * d, d * d, |a, b| {
                            e_n[(a / d, b / d)] * e_m[(b % d, a % d)]
                        }));
                    }
                }
                out
            })
        });
        Ok(PreparationBasis {
            d_s: d,
            vectors,
            projectors,
            preparations,
            projector_condition: proj.condition,
            projector_duals,
            aform_condition,
            aform_duals,
        })
    }

    /// The same construction on V|π_m⟩.
    pub fn rotated(&self, v: &UnitaryMatrix) -> Result<Self> {
        if v.dim() != self.d_s {
            return Err(Error::DimensionMismatch(format!(
                "rotation is {0}x{0}, basis has dS={1}",
                v.dim(),
                self.d_s
            )));
        }
        let rotated = self
            .vectors
            .iter()
            .map(|pi| {
                (0..self.d_s)
                    .map(|i| (0..self.d_s).map(|j| v.matrix()[(i, j)] * pi[j]).sum())
                    .collect()
            })
            .collect();
        PreparationBasis::from_vectors(rotated)
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn len(&self) -> usize {
        self.preparations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preparations.is_empty()
    }

    pub fn index(&self, m: usize, n: usize) -> usize {
        m * self.d_s * self.d_s + n
    }

    pub fn vectors(&self) -> &[Vec<Complex64>] {
        &self.vectors
    }

    pub fn projectors(&self) -> &[ComplexMatrix] {
        &self.projectors
    }

    pub fn preparations(&self) -> &[PreparationMap] {
        &self.preparations
    }

    pub fn preparation(&self, m: usize, n: usize) -> &PreparationMap {
        &self.preparations[self.index(m, n)]
    }

    pub fn projector_condition(&self) -> f64 {
        self.projector_condition
    }

    pub fn aform_condition(&self) -> f64 {
        self.aform_condition
    }

    /// E_m with ⟨E_m, P_k⟩ = δ_{mk}.
    pub fn projector_duals(&self) -> Result<&[ComplexMatrix]> {
        self.projector_duals
            .as_deref()
            .ok_or(Error::IllConditioned {
                condition: self.projector_condition,
            })
    }

    /// D_j with ⟨D_j, aform(A_k)⟩ = δ_{jk}.
    pub fn aform_duals(&self) -> Result<&[ComplexMatrix]> {
        self.aform_duals.as_deref().ok_or(Error::IllConditioned {
            condition: self.aform_condition,
        })
    }
}

/// Coefficients α_j with Σ_j α_j aform(A_j) = aform(prep).
#[derive(Debug, Clone, PartialEq)]
pub struct PrepDecomposition {
    pub coefficients: Vec<Complex64>,
    /// max |Σ α_j aform(A_j) − aform(prep)|
    pub residual: f64,
}

pub fn decompose_prep(
    prep: &PreparationMap,
    basis: &PreparationBasis,
) -> Result<PrepDecomposition> {
    decompose_aform(prep.aform(), basis)
}

pub fn decompose_aform(
    aform: &ComplexMatrix,
    basis: &PreparationBasis,
) -> Result<PrepDecomposition> {
    let d2 = basis.d_s * basis.d_s;
    if aform.rows() != d2 || aform.cols() != d2 {
        return Err(Error::DimensionMismatch(format!(
            "aform is {}x{}, basis expects {d2}x{d2}",
            aform.rows(),
            aform.cols()
        )));
    }
    let duals = basis.aform_duals()?;
    let coefficients: Vec<Complex64> = duals.iter().map(|d| d.hs_inner(aform)).collect();
    let mut rebuilt = ComplexMatrix::zeros(d2, d2);
    for (c, p) in coefficients.iter().zip(&basis.preparations) {
        rebuilt += &p.aform().map(|z| z * c);
    }
    let residual = (&rebuilt - aform).max_abs();
    Ok(PrepDecomposition {
        coefficients,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordEntry {
    pub m: usize,
    pub n: usize,
    /// Trace of the unnormalized output.
    pub probability: f64,
    /// `None` for degenerate entries.
    pub normalized: Option<DensityMatrix>,
    pub unnormalized: ComplexMatrix,
    /// The measurement arm m has (noiseless) probability below the cutoff.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyRecord {
    pub d_s: usize,
    pub d_e: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Row-major in (m, n).
    pub entries: Vec<RecordEntry>,
}

fn normalize_output(unnormalized: &ComplexMatrix, probability: f64) -> DensityMatrix {
    let q = unnormalized.scale_real(1.0 / probability).hermitize();
    // Noise can push a normalized output slightly outside the state space.
    DensityMatrix::new(q.clone()).unwrap_or_else(|_| DensityMatrix::from_raw(q))
}

/// Runs every basis preparation on ρ^SE, evolves with U and records the
/// reduced outputs. With `noise_sigma > 0` each unnormalized output entry
/// gets i.i.d. N(0, σ²) added to its real and imaginary parts (entries in
/// (m, n) order, matrix elements row-major, real part first) before
/// re-Hermitizing.
pub fn simulate_tomography(
    u: &UnitaryMatrix,
    state: &BipartiteState,
    basis: &PreparationBasis,
    noise_sigma: f64,
    seed: u64,
) -> Result<TomographyRecord> {
    let (d, d_e) = (state.d_s(), state.d_e());
    if basis.d_s != d || u.dim() != d * d_e {
        return Err(Error::DimensionMismatch(format!(
            "basis dS={}, state dS={d} dE={d_e}, unitary {1}x{1}",
            basis.d_s,
            u.dim()
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Config(format!(
            "noise_sigma must be finite and >= 0, got {noise_sigma}"
        )));
    }
    let mut rng = ShiftRegisterRng::new(seed);
    let d2 = d * d;
    let mut entries = Vec::with_capacity(d2 * d2);
    for m in 0..d2 {
        for n in 0..d2 {
            let prep = basis.preparation(m, n);
            let joint = apply_prep_to_joint(prep, state.joint(), d_e)?;
            let exact = evolve_reduce_operator(u, &joint, d, d_e)?.hermitize();
            let degenerate = exact.trace().re < PROBABILITY_CUTOFF;
            let unnormalized = if noise_sigma > 0.0 {
                let mut noisy = exact;
                for i in 0..d {
                    for j in 0..d {
                        let re = noise_sigma * rng.gaussian();
                        let im = noise_sigma * rng.gaussian();
                        noisy[(i, j)] += Complex64::new(re, im);
                    }
                }
                noisy.hermitize()
            } else {
                exact
            };
            let probability = unnormalized.trace().re;
            let normalized = (!degenerate).then(|| normalize_output(&unnormalized, probability));
            entries.push(RecordEntry {
                m,
                n,
                probability,
                normalized,
                unnormalized,
                degenerate,
            });
        }
    }
    Ok(TomographyRecord {
        d_s: d,
        d_e,
        seed,
        noise_sigma,
        entries,
    })
}

impl TomographyRecord {
    pub fn entry(&self, m: usize, n: usize) -> &RecordEntry {
        &self.entries[m * self.d_s * self.d_s + n]
    }

    /// Probabilities p^(m) per measurement arm, read from the n = 0 entry.
    pub fn arm_probabilities(&self) -> Vec<f64> {
        let d2 = self.d_s * self.d_s;
        (0..d2).map(|m| self.entries[m * d2].probability).collect()
    }

    pub fn degenerate_entries(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .filter(|e| e.degenerate)
            .map(|e| (e.m, e.n))
            .collect()
    }

    fn check_complete(&self, basis: &PreparationBasis) -> Result<()> {
        if basis.d_s != self.d_s {
            return Err(Error::DimensionMismatch(format!(
                "record has dS={}, basis has dS={}",
                self.d_s, basis.d_s
            )));
        }
        let expected = basis.len();
        if self.entries.len() != expected {
            return Err(Error::IncompleteRecord {
                expected,
                found: self.entries.len(),
            });
        }
        for (j, e) in self.entries.iter().enumerate() {
            if basis.index(e.m, e.n) != j
                || e.unnormalized.rows() != self.d_s
                || e.unnormalized.cols() != self.d_s
            {
                return Err(Error::IncompleteRecord { expected, found: j });
            }
        }
        Ok(())
    }

    /// Σ α^(mn) p^(m) Q^(mn) straight from the recorded data, unnormalized.
    pub fn predict(
        &self,
        basis: &PreparationBasis,
        prep: &PreparationMap,
    ) -> Result<ComplexMatrix> {
        self.check_complete(basis)?;
        let alpha = decompose_prep(prep, basis)?;
        Ok(combine(
            &alpha.coefficients,
            self.entries.iter().map(|e| &e.unnormalized),
            self.d_s,
        ))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("TOMOGRAPHY_RECORD\n");
        let _ = writeln!(out, "d_s {}", self.d_s);
        let _ = writeln!(out, "d_e {}", self.d_e);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "noise_sigma {}", fmt_f64(self.noise_sigma));
        let _ = writeln!(out, "entries {}", self.entries.len());
        for e in &self.entries {
            let _ = writeln!(out, "ENTRY {} {}", e.m, e.n);
            let _ = writeln!(out, "probability {}", fmt_f64(e.probability));
            let _ = writeln!(out, "degenerate {}", u8::from(e.degenerate));
            write_matrix(&mut out, &e.unnormalized);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = LineReader::new(text);
        r.expect_header("TOMOGRAPHY_RECORD", 0)?;
        let parse_usize = |r: &mut LineReader, key: &str| -> Result<usize> {
            let v = r.expect_key(key)?;
            v.parse()
                .map_err(|_| r.error(format!("bad `{key}` value `{v}`")))
        };
        let d_s = parse_usize(&mut r, "d_s")?;
        let d_e = parse_usize(&mut r, "d_e")?;
        let v = r.expect_key("seed")?;
        let seed: u64 = v.parse().map_err(|_| r.error(format!("bad seed `{v}`")))?;
        let v = r.expect_key("noise_sigma")?;
        let noise_sigma: f64 = v
            .parse()
            .map_err(|_| r.error(format!("bad noise_sigma `{v}`")))?;
        let count = parse_usize(&mut r, "entries")?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let mn = r.expect_header("ENTRY", 2)?;
            let v = r.expect_key("probability")?;
            let probability: f64 = v
                .parse()
                .map_err(|_| r.error(format!("bad probability `{v}`")))?;
            let degenerate = match r.expect_key("degenerate")? {
                "0" => false,
                "1" => true,
                other => return Err(r.error(format!("degenerate must be 0 or 1, found `{other}`"))),
            };
            let unnormalized = r.read_matrix()?;
            if unnormalized.rows() != d_s || unnormalized.cols() != d_s {
                return Err(r.error(format!("entry matrix must be {d_s}x{d_s}")));
            }
            let normalized = (!degenerate).then(|| normalize_output(&unnormalized, probability));
            entries.push(RecordEntry {
                m: mn[0],
                n: mn[1],
                probability,
                normalized,
                unnormalized,
                degenerate,
            });
        }
        r.expect_end()?;
        Ok(TomographyRecord {
            d_s,
            d_e,
            seed,
            noise_sigma,
            entries,
        })
    }
}

fn combine<'a>(
    coefficients: &[Complex64],
    outputs: impl Iterator<Item = &'a ComplexMatrix>,
    d: usize,
) -> ComplexMatrix {
    let mut q = ComplexMatrix::zeros(d, d);
    for (c, y) in coefficients.iter().zip(outputs) {
        q += &y.map(|z| z * c);
    }
    q
}

fn check_usable(record: &TomographyRecord, basis: &PreparationBasis) -> Result<()> {
    record.check_complete(basis)?;
    let degenerate = record.degenerate_entries();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateRecord {
            entries: degenerate,
        });
    }
    Ok(())
}

/// M = Σ_j y_j ⊗ conj(D_j), the unique M whose contraction with every basis
/// aform reproduces the unnormalized outputs y_j. Hermitized.
pub fn reconstruct_mmap(record: &TomographyRecord, basis: &PreparationBasis) -> Result<MMap> {
    check_usable(record, basis)?;
    let duals = basis.aform_duals()?;
    let d = record.d_s;
    let mut t = ComplexMatrix::zeros(d * d * d, d * d * d);
    for (e, dual) in record.entries.iter().zip(duals) {
        t += &kron(&e.unnormalized, &dual.conj());
    }
    MMap::from_tensor(d, t.hermitize())
}

/// Standard process tomography from outputs Λ(P_n) on the projector basis:
/// the map-form matrix T = Σ_n Λ(P_n) ⊗ conj(E_n).
pub fn standard_qpt(basis: &PreparationBasis, outputs: &[ComplexMatrix]) -> Result<ComplexMatrix> {
    let duals = basis.projector_duals()?;
    let d = basis.d_s;
    if outputs.len() != duals.len() {
        return Err(Error::IncompleteRecord {
            expected: duals.len(),
            found: outputs.len(),
        });
    }
    let mut t = ComplexMatrix::zeros(d * d, d * d);
    for (y, e) in outputs.iter().zip(duals) {
        if y.rows() != d || y.cols() != d {
            return Err(Error::DimensionMismatch(format!(
                "QPT output must be {d}x{d}"
            )));
        }
        t += &kron(y, &e.conj());
    }
    Ok(t)
}

/// The record splits into d² standard-QPT sub-experiments, one per
/// measurement arm m. Each yields T_m; M = Σ_m T_m ⊗ E_m.
pub fn reconstruct_mmap_factorized(
    record: &TomographyRecord,
    basis: &PreparationBasis,
) -> Result<MMap> {
    check_usable(record, basis)?;
    let d = record.d_s;
    let d2 = d * d;
    let duals = basis.projector_duals()?;
    let mut t = ComplexMatrix::zeros(d * d2, d * d2);
    for (m, e_m) in duals.iter().enumerate() {
        let outputs: Vec<ComplexMatrix> = record.entries[m * d2..(m + 1) * d2]
            .iter()
            .map(|e| e.unnormalized.clone())
            .collect();
        let t_m = standard_qpt(basis, &outputs)?;
        t += &kron(&t_m, e_m);
    }
    MMap::from_tensor(d, t.hermitize())
}

/// Unnormalized responses of `m` to every basis preparation.
pub fn basis_responses(m: &MMap, basis: &PreparationBasis) -> Result<Vec<ComplexMatrix>> {
    if m.d_s() != basis.d_s {
        return Err(Error::DimensionMismatch(format!(
            "M-map has dS={}, basis has dS={}",
            m.d_s(),
            basis.d_s
        )));
    }
    Ok(basis
        .preparations
        .iter()
        .map(|p| m.contract_aform(p.aform()))
        .collect())
}

/// Σ α_j y_j with y_j the responses of `m` to the basis, unnormalized.
pub fn predict_unnormalized(
    m: &MMap,
    prep: &PreparationMap,
    basis: &PreparationBasis,
) -> Result<ComplexMatrix> {
    let responses = basis_responses(m, basis)?;
    let alpha = decompose_prep(prep, basis)?;
    Ok(combine(&alpha.coefficients, responses.iter(), basis.d_s))
}

/// Output state for `prep` predicted from basis responses and the
/// decomposition α, renormalized.
pub fn predict_output(
    m: &MMap,
    prep: &PreparationMap,
    basis: &PreparationBasis,
) -> Result<DensityMatrix> {
    let q = predict_unnormalized(m, prep, basis)?;
    let p = q.trace().re;
    if p < PROBABILITY_CUTOFF {
        return Err(Error::DegeneratePreparation { probability: p });
    }
    DensityMatrix::new(q.scale_real(1.0 / p).hermitize())
}

/// Simulates with the standard basis and, if some measurement arm has zero
/// probability, retries on randomly rotated bases. Returns the basis that
/// produced a usable record.
pub fn tomography_with_fallback(
    u: &UnitaryMatrix,
    state: &BipartiteState,
    noise_sigma: f64,
    seed: u64,
    max_rotations: usize,
) -> Result<(PreparationBasis, TomographyRecord)> {
    let standard = preparation_basis(state.d_s());
    let record = simulate_tomography(u, state, &standard, noise_sigma, seed)?;
    let mut degenerate = record.degenerate_entries();
    if degenerate.is_empty() {
        return Ok((standard, record));
    }
    for k in 0..max_rotations {
        let v = haar_unitary(state.d_s(), derive_seed(seed, 1000 + k as u64));
        let basis = standard.rotated(&v)?;
        let record = simulate_tomography(u, state, &basis, noise_sigma, seed)?;
        if record.degenerate_entries().is_empty() {
            return Ok((basis, record));
        }
        degenerate = record.degenerate_entries();
    }
    Err(Error::DegenerateRecord {
        entries: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmap::{build_mmap, contract_mmap, memory_of};
    use crate::objects::evolve_reduce;
    use crate::scenarios::{canonical_cnot_bell, random_correlated_state, random_cptp_prep};
    use crate::tensor::ONE;

    fn pauli(k: usize) -> ComplexMatrix {
        let i = Complex64::new(0.0, 1.0);
        match k {
            1 => ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]),
            2 => ComplexMatrix::from_vec(2, 2, vec![ZERO, -i, i, ZERO]).unwrap(),
            3 => ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]),
            _ => ComplexMatrix::identity(2),
        }
    }

    fn half_plus(sign: f64, k: usize) -> ComplexMatrix {
        (&ComplexMatrix::identity(2) + &pauli(k).scale_real(sign)).scale_real(0.5)
    }

    #[test]
    fn qubit_projectors() {
        let b = pure_state_basis(2);
        let expected = [
            half_plus(1.0, 1),
            half_plus(1.0, 2),
            half_plus(1.0, 3),
            half_plus(-1.0, 1),
        ];
        for (p, e) in b.projectors().iter().zip(&expected) {
            assert!((p - e).max_abs() < 1e-15);
        }
        let p = b.projectors();
        let combo = &(&p[0] + &p[3]) - &p[1];
        assert!((&combo - &half_plus(-1.0, 2)).max_abs() < 1e-15);
        assert!((&combo - &half_plus(1.0, 2)).max_abs() > 0.5);
    }

    #[test]
    fn higher_dimensional_basis_is_informationally_complete() {
        for d in [3, 4] {
            let b = pure_state_basis(d);
            assert_eq!(b.projectors().len(), d * d);
            for p in b.projectors() {
                assert!((p.trace() - ONE).norm() < 1e-14);
                assert!((&p.matmul(p) - p).max_abs() < 1e-14);
            }
            assert!(
                b.projector_condition() < 100.0,
                "cond {}",
                b.projector_condition()
            );
        }
    }

    #[test]
    fn projector_gram_condition_oracle_d3() {
        // Gram from vector overlaps ⟨P_i, P_j⟩ = |⟨π_i|π_j⟩|², not from the
        // projector matrices.
        let vecs = pure_state_vectors(3);
        let n = vecs.len();
        let g = ComplexMatrix::from_fn(n, n, |i, j| {
            let ip: Complex64 = vecs[i]
                .iter()
                .zip(&vecs[j])
                .map(|(a, b)| a.conj() * b)
                .sum();
            Complex64::new(ip.norm_sqr(), 0.0)
        });
        let spec = hermitian_eig(&g).unwrap();
        assert!(spec.min() > 0.0);
        let cond = spec.max() / spec.min();
        assert!((cond - pure_state_basis(3).projector_condition()).abs() < 1e-8 * cond);
        assert!(cond < 100.0);
    }

    #[test]
    fn preparation_operators() {
        let b = preparation_basis(2);
        assert_eq!(b.len(), 16);
        let xp = &b.vectors()[0];
        let zp = &b.vectors()[2];
        let xm = &b.vectors()[3];
        assert!((&b.preparation(0, 0).ops()[0] - &ComplexMatrix::outer(xp, xp)).max_abs() < 1e-15);
        assert!((&b.preparation(2, 3).ops()[0] - &ComplexMatrix::outer(xm, zp)).max_abs() < 1e-15);
        assert!(b.aform_condition().is_finite() && b.aform_condition() < MAX_GRAM_CONDITION);
        let cp = b.projector_condition();
        assert!((b.aform_condition() - cp * cp).abs() < 1e-8 * cp * cp);
    }

    #[test]
    fn dual_basis_property() {
        for d in [2, 3] {
            let b = preparation_basis(d);
            let duals = b.aform_duals().unwrap();
            for (j, dj) in duals.iter().enumerate() {
                for (k, pk) in b.preparations().iter().enumerate() {
                    let expected = if j == k { ONE } else { ZERO };
                    assert!(
                        (dj.hs_inner(pk.aform()) - expected).norm() < 1e-10,
                        "d={d} j={j} k={k}"
                    );
                }
            }
            let pd = b.projector_duals().unwrap();
            for (j, e) in pd.iter().enumerate() {
                assert!(e.hermitian_deviation() < 1e-12);
                for (k, p) in b.projectors().iter().enumerate() {
                    let expected = if j == k { ONE } else { ZERO };
                    assert!((e.hs_inner(p) - expected).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn aform_duals_match_brute_force_gram_inverse() {
        for d in [2, 3] {
            let b = preparation_basis(d);
            let aforms: Vec<ComplexMatrix> =
                b.preparations().iter().map(|p| p.aform().clone()).collect();
            let brute = gram_inverse(&aforms).unwrap();
            let cond = b.aform_condition();
            assert!((brute.condition - cond).abs() < 1e-8 * cond);
            let brute_duals = dual_elements(&aforms, brute.inverse.as_ref().unwrap());
            for (x, y) in brute_duals.iter().zip(b.aform_duals().unwrap()) {
                assert!((x - y).max_abs() < 1e-10);
            }
        }
    }

    #[test]
    fn aform_entries_factorize() {
        let b = preparation_basis(2);
        let p = b.projectors();
        let a = b.preparation(1, 2).aform();
        for r1 in 0..2 {
            for r2 in 0..2 {
                for s1 in 0..2 {
                    for s2 in 0..2 {
                        let lhs = a[(r1 * 2 + r2, s1 * 2 + s2)];
                        let rhs = p[2][(r1, s1)] * p[1][(s2, r2)];
                        assert!((lhs - rhs).norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn dependent_vectors_are_ill_conditioned() {
        let mut v = pure_state_vectors(2);
        v[3] = v[0].clone();
        let b = PreparationBasis::from_vectors(v).unwrap();
        assert!(matches!(b.aform_duals(), Err(Error::IllConditioned { .. })));
        let prep = PreparationMap::identity(2);
        assert!(matches!(
            decompose_prep(&prep, &b),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn decompose_basis_element_and_identity() {
        let b = preparation_basis(2);
        let alpha = decompose_prep(b.preparation(1, 2), &b).unwrap();
        for (j, c) in alpha.coefficients.iter().enumerate() {
            let expected = if j == b.index(1, 2) { ONE } else { ZERO };
            assert!((c - expected).norm() < 1e-10);
        }
        let id = decompose_prep(&PreparationMap::identity(2), &b).unwrap();
        assert!(id.residual < 1e-10);
        let mut rebuilt = ComplexMatrix::zeros(4, 4);
        for (c, p) in id.coefficients.iter().zip(b.preparations()) {
            rebuilt += &p.aform().map(|z| z * c);
        }
        let vec_i: Vec<Complex64> = vec![ONE, ZERO, ZERO, ONE];
        assert!((&rebuilt - &ComplexMatrix::outer(&vec_i, &vec_i)).max_abs() < 1e-10);
    }

    #[test]
    fn identity_unitary_product_state_outputs_are_projectors() {
        let b = preparation_basis(2);
        let state = random_correlated_state(2, 2, 0.0, 3);
        let rec = simulate_tomography(&UnitaryMatrix::identity(4), &state, &b, 0.0, 0).unwrap();
        for e in &rec.entries {
            let q = e.normalized.as_ref().unwrap();
            assert!((q.matrix() - &b.projectors()[e.n]).max_abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_depend_only_on_the_measurement_arm() {
        let b = preparation_basis(2);
        let state = random_correlated_state(2, 3, 0.6, 9);
        let u = haar_unitary(6, 10);
        let rec = simulate_tomography(&u, &state, &b, 0.0, 0).unwrap();
        for e in &rec.entries {
            let p_m = rec.entry(e.m, 0).probability;
            assert!((e.probability - p_m).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&e.probability));
            let oracle = b.projectors()[e.m].hs_inner(state.rho_s().matrix()).re;
            assert!((e.probability - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn bell_state_arm_probabilities_are_half() {
        let inst = canonical_cnot_bell().unwrap();
        let b = preparation_basis(2);
        let rec = simulate_tomography(&haar_unitary(4, 1), &inst.state, &b, 0.0, 0).unwrap();
        for p in rec.arm_probabilities() {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_reconstruction_matches_analytic_mmap() {
        for (d_s, d_e, seed) in [(2, 2, 1), (2, 3, 2), (3, 2, 3)] {
            let b = preparation_basis(d_s);
            let state = random_correlated_state(d_s, d_e, 0.5, seed);
            let u = haar_unitary(d_s * d_e, seed + 100);
            let rec = simulate_tomography(&u, &state, &b, 0.0, 0).unwrap();
            let m_rec = reconstruct_mmap(&rec, &b).unwrap();
            let m = build_mmap(&u, &state).unwrap();
            assert!(
                (m_rec.tensor() - m.tensor()).frobenius_norm() <= 1e-9,
                "d_s={d_s} d_e={d_e}"
            );
            let m_fac = reconstruct_mmap_factorized(&rec, &b).unwrap();
            assert!((m_fac.tensor() - m_rec.tensor()).frobenius_norm() <= 1e-9);
        }
    }

    #[test]
    fn product_record_has_no_memory() {
        let b = preparation_basis(2);
        let state = random_correlated_state(2, 2, 0.0, 5);
        let rec = simulate_tomography(&haar_unitary(4, 6), &state, &b, 0.0, 0).unwrap();
        let (_, k) = memory_of(&reconstruct_mmap(&rec, &b).unwrap());
        assert!(k.frobenius_norm() < 1e-8);
    }

    #[test]
    fn reconstruction_error_is_linear_in_noise() {
        let b = preparation_basis(2);
        let state = random_correlated_state(2, 2, 0.5, 12);
        let u = haar_unitary(4, 13);
        let m = build_mmap(&u, &state).unwrap();
        let err = |sigma: f64| {
            let rec = simulate_tomography(&u, &state, &b, sigma, 99).unwrap();
            (reconstruct_mmap(&rec, &b).unwrap().tensor() - m.tensor()).frobenius_norm()
        };
        let (e6, e5) = (err(1e-6), err(1e-5));
        let ratio = e5 / e6;
        assert!(ratio > 10.0 / 3.0 && ratio < 30.0, "ratio {ratio}");
    }

    #[test]
    fn noise_is_reproducible() {
        let b = preparation_basis(2);
        let state = random_correlated_state(2, 2, 0.5, 12);
        let u = haar_unitary(4, 13);
        let a = simulate_tomography(&u, &state, &b, 1e-3, 5).unwrap();
        assert_eq!(a, simulate_tomography(&u, &state, &b, 1e-3, 5).unwrap());
        assert_ne!(a, simulate_tomography(&u, &state, &b, 1e-3, 6).unwrap());
        for e in &a.entries {
            assert!(e.unnormalized.hermitian_deviation() == 0.0);
            assert_eq!(e.probability, e.unnormalized.trace().re);
        }
    }

    #[test]
    fn predictions_agree_across_code_paths() {
        let b = preparation_basis(2);
        let state = random_correlated_state(2, 2, 0.7, 20);
        let u = haar_unitary(4, 21);
        let m = build_mmap(&u, &state).unwrap();
        let rec = simulate_tomography(&u, &state, &b, 0.0, 0).unwrap();
        for e in rec.entries.iter().filter(|e| e.m == 1) {
            let q = predict_output(&m, b.preparation(e.m, e.n), &b).unwrap();
            assert!((q.matrix() - e.normalized.as_ref().unwrap().matrix()).max_abs() < 1e-9);
        }
        let id = predict_output(&m, &PreparationMap::identity(2), &b).unwrap();
        assert!((id.matrix() - evolve_reduce(&u, &state).unwrap().matrix()).max_abs() < 1e-9);
        for seed in 0..3 {
            let prep = random_cptp_prep(2, 2, seed);
            let direct = evolve_reduce_operator(
                &u,
                &apply_prep_to_joint(&prep, state.joint(), 2).unwrap(),
                2,
                2,
            )
            .unwrap();
            let via_basis = predict_output(&m, &prep, &b).unwrap();
            assert!((via_basis.matrix() - &direct).max_abs() < 1e-9);
            assert!((contract_mmap(&m, &prep).unwrap().matrix() - &direct).max_abs() < 1e-9);
            let from_record = rec.predict(&b, &prep).unwrap();
            assert!((&from_record - &direct).max_abs() < 1e-9);
            let alpha = decompose_prep(&prep, &b).unwrap();
            assert!(alpha.residual < 1e-10);
        }
    }

    #[test]
    fn degenerate_records_are_refused_and_rotated_basis_recovers() {
        // |1⟩_S|0⟩_E: arm |z+⟩ has zero probability.
        let mut joint = ComplexMatrix::zeros(4, 4);
        joint[(2, 2)] = ONE;
        let state = BipartiteState::new(joint, 2, 2).unwrap();
        let u = haar_unitary(4, 30);
        let b = preparation_basis(2);
        let rec = simulate_tomography(&u, &state, &b, 0.0, 0).unwrap();
        let deg = rec.degenerate_entries();
        assert_eq!(deg.len(), 4);
        assert!(deg.iter().all(|&(m, _)| m == 2));
        assert!(rec.entry(2, 1).normalized.is_none());
        assert!(matches!(
            reconstruct_mmap(&rec, &b),
            Err(Error::DegenerateRecord { .. })
        ));

        let (basis, rec) = tomography_with_fallback(&u, &state, 0.0, 0, 8).unwrap();
        let m_rec = reconstruct_mmap(&rec, &basis).unwrap();
        let m = build_mmap(&u, &state).unwrap();
        assert!((m_rec.tensor() - m.tensor()).frobenius_norm() <= 1e-9);
    }

    #[test]
    fn incomplete_record_is_refused() {
        let b = preparation_basis(2);
        let state = random_correlated_state(2, 2, 0.3, 1);
        let mut rec = simulate_tomography(&haar_unitary(4, 2), &state, &b, 0.0, 0).unwrap();
        rec.entries.pop();
        assert!(matches!(
            reconstruct_mmap(&rec, &b),
            Err(Error::IncompleteRecord {
                expected: 16,
                found: 15
            })
        ));
    }

    #[test]
    fn record_text_round_trip() {
        let b = preparation_basis(2);
        let state = random_correlated_state(2, 2, 0.3, 1);
        let rec = simulate_tomography(&haar_unitary(4, 2), &state, &b, 1e-4, 11).unwrap();
        let text = rec.to_text();
        assert!(text.starts_with("TOMOGRAPHY_RECORD\nd_s 2\nd_e 2\nseed 11\n"));
        assert_eq!(TomographyRecord::from_text(&text).unwrap(), rec);
        let broken = text.replacen("degenerate 0", "degenerate 2", 1);
        assert!(matches!(
            TomographyRecord::from_text(&broken),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn standard_qpt_recovers_a_channel() {
        let b = preparation_basis(2);
        let channel = random_cptp_prep(2, 3, 4);
        let outputs: Vec<ComplexMatrix> = b.projectors().iter().map(|p| channel.apply(p)).collect();
        let t = standard_qpt(&b, &outputs).unwrap();
        assert!((&t - channel.aform()).max_abs() < 1e-10);
    }

    #[test]
    fn rotated_basis_keeps_condition() {
        let b = preparation_basis(2);
        let r = b.rotated(&haar_unitary(2, 77)).unwrap();
        assert!((r.aform_condition() - b.aform_condition()).abs() < 1e-8 * b.aform_condition());
    }
}
