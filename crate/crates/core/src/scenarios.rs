//! Seeded problem instances: Haar unitaries, random correlated states, the
//! CNOT/Bell-diagonal NCP instance, vanishing-memory instances and the NCP
//! scan over random correlated instances.
//!
//! Every generator is a pure function of its arguments and seed.

use std::collections::BTreeSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmap::{assemble_b, build_mmap, cp_check, memory_of, Grouping};
use crate::objects::{
    evolve_reduce_operator, prep_from_kraus, split_correlations, BipartiteState, DensityMatrix,
    PreparationMap, UnitaryMatrix,
};
use crate::rng::{derive_seed, ShiftRegisterRng};
use crate::tensor::{self, kron, qr, ComplexMatrix, CLAMP_TOL, ONE, ZERO};
use crate::textio::fmt_f64;

/// Weights of |Φ+⟩, |Φ−⟩, |Ψ+⟩, |Ψ−⟩ in the canonical CNOT instance.
pub const CNOT_BELL_WEIGHTS: [f64; 4] = [0.6, 0.2, 0.15, 0.05];

/// Minimum eigenvalue of the Choi-style matrix of B for [`canonical_cnot_bell`],
/// as produced by the construction-time check.
pub const CNOT_BELL_NCP_WITNESS: f64 = -0.059016994374947396;

/// Fraction of the largest PSD-admissible correlation strength used by
/// [`vanishing_memory_instance`].
pub const VANISHING_MEMORY_FRACTION: f64 = 0.9;

const VANISHING_MEMORY_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Product,
    Correlated,
    VanishingMemory,
    NcpExpected,
    /// Set on scan rows whose B has a negative Choi-style eigenvalue.
    NcpObserved,
}

impl Flag {
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::Product => "product",
            Flag::Correlated => "correlated",
            Flag::VanishingMemory => "vanishing_memory",
            Flag::NcpExpected => "ncp_expected",
            Flag::NcpObserved => "ncp_observed",
        }
    }
}

/// Decomposition metrics of a (U, ρ^SE) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub norm_chi: f64,
    pub norm_k: f64,
    pub norm_baff: f64,
    pub min_eig_m: f64,
    pub min_eig_b: f64,
}

pub fn instance_metrics(u: &UnitaryMatrix, state: &BipartiteState) -> Result<InstanceMetrics> {
    let m = build_mmap(u, state)?;
    let (_, k) = memory_of(&m);
    let b = assemble_b(&m);
    let (_, _, chi) = split_correlations(state);
    Ok(InstanceMetrics {
        norm_chi: chi.frobenius_norm(),
        norm_k: k.frobenius_norm(),
        norm_baff: b.affine.frobenius_norm(),
        min_eig_m: cp_check(m.tensor(), Grouping::MMapForm)?.min_eigenvalue,
        min_eig_b: cp_check(&b.choi_style().hermitize(), Grouping::MapForm)?.min_eigenvalue,
    })
}

#[derive(Debug, Clone)]
pub struct ScenarioInstance {
    pub label: String,
    pub u: UnitaryMatrix,
    pub state: BipartiteState,
    pub seed: u64,
    pub flags: BTreeSet<Flag>,
}

impl ScenarioInstance {
    /// Builds an instance and checks each claimed flag against the M-map
    /// decomposition.
    pub fn new(
        label: impl Into<String>,
        u: UnitaryMatrix,
        state: BipartiteState,
        seed: u64,
        flags: impl IntoIterator<Item = Flag>,
    ) -> Result<Self> {
        let inst = ScenarioInstance {
            label: label.into(),
            u,
            state,
            seed,
            flags: flags.into_iter().collect(),
        };
        let metrics = inst.metrics()?;
        for flag in &inst.flags {
            let ok = match flag {
                Flag::Product => metrics.norm_chi <= CLAMP_TOL && metrics.norm_k <= CLAMP_TOL,
                Flag::Correlated => metrics.norm_chi > CLAMP_TOL,
                Flag::VanishingMemory => {
                    metrics.norm_chi > CLAMP_TOL && metrics.norm_baff <= CLAMP_TOL
                }
                Flag::NcpExpected => metrics.min_eig_b < -1e-3,
                Flag::NcpObserved => metrics.min_eig_b < -CLAMP_TOL,
            };
            if !ok {
                return Err(Error::Verification(format!(
                    "instance `{}` does not satisfy flag `{}` ({metrics:?})",
                    inst.label,
                    flag.as_str()
                )));
            }
        }
        Ok(inst)
    }

    pub fn d_s(&self) -> usize {
        self.state.d_s()
    }

    pub fn d_e(&self) -> usize {
        self.state.d_e()
    }

    pub fn metrics(&self) -> Result<InstanceMetrics> {
        instance_metrics(&self.u, &self.state)
    }
}

/// Haar-distributed unitary: QR of a complex Ginibre matrix with the phases
/// of diag(R) moved into Q.
pub fn haar_unitary(d: usize, seed: u64) -> UnitaryMatrix {
    assert!(d >= 1, "haar_unitary needs d >= 1");
    let mut rng = ShiftRegisterRng::new(seed);
    let z = ComplexMatrix::from_fn(d, d, |_, _| rng.complex_gaussian());
    let (q, r) = qr(&z).expect("square");
    let phases: Vec<Complex64> = (0..d)
        .map(|i| {
            let rii = r[(i, i)];
            if rii.norm() > 0.0 {
                rii / rii.norm()
            } else {
                ONE
            }
        })
        .collect();
    UnitaryMatrix::new(q.scale_columns(&phases)).expect("QR factor is unitary")
}

/// Full-rank random density matrix G G†/tr(G G†) with G Ginibre.
pub fn random_density(d: usize, rng: &mut ShiftRegisterRng) -> DensityMatrix {
    let g = ComplexMatrix::from_fn(d, d, |_, _| rng.complex_gaussian());
    let p = g.matmul(&g.adjoint());
    let tr = p.trace().re;
    DensityMatrix::new(p.scale_real(1.0 / tr).hermitize()).expect("Ginibre state is valid")
}

pub fn random_pure_vector(d: usize, rng: &mut ShiftRegisterRng) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..d).map(|_| rng.complex_gaussian()).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z / norm).collect()
}

/// (1 − w)·ρ^S ⊗ ρ^E + w·|ψ⟩⟨ψ| with random full-rank marginal factors and a
/// random pure joint vector.
pub fn random_correlated_state(d_s: usize, d_e: usize, w: f64, seed: u64) -> BipartiteState {
    assert!(
        (0.0..=1.0).contains(&w),
        "correlation weight must lie in [0, 1], got {w}"
    );
    let mut rng = ShiftRegisterRng::new(seed);
    let rho_s = random_density(d_s, &mut rng);
    let rho_e = random_density(d_e, &mut rng);
    let psi = random_pure_vector(d_s * d_e, &mut rng);
    let product = kron(rho_s.matrix(), rho_e.matrix()).scale_real(1.0 - w);
    let pure = ComplexMatrix::outer(&psi, &psi).scale_real(w);
    BipartiteState::new((&product + &pure).hermitize(), d_s, d_e).expect("convex mixture of states")
}

/// Random CPTP preparation with `n_ops` Kraus operators cut from a Haar
/// isometry.
pub fn random_cptp_prep(d: usize, n_ops: usize, seed: u64) -> PreparationMap {
    let v = haar_unitary(d * n_ops, seed);
    let ops = (0..n_ops)
        .map(|k| ComplexMatrix::from_fn(d, d, |i, j| v.matrix()[(k * d + i, j)]))
        .collect();
    prep_from_kraus(ops).expect("isometry blocks are trace preserving")
}

fn bell_basis() -> [[Complex64; 4]; 4] {
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [
        [h, ZERO, ZERO, h],
        [h, ZERO, ZERO, -h],
        [ZERO, h, h, ZERO],
        [ZERO, h, -h, ZERO],
    ]
}

/// Two-qubit Bell-diagonal state with [`CNOT_BELL_WEIGHTS`] evolved by a
/// system-controlled CNOT: the affine term makes B not completely positive.
pub fn canonical_cnot_bell() -> Result<ScenarioInstance> {
    let mut joint = ComplexMatrix::zeros(4, 4);
    for (w, v) in CNOT_BELL_WEIGHTS.iter().zip(bell_basis().iter()) {
        joint += &ComplexMatrix::outer(v, v).scale_real(*w);
    }
    let state = BipartiteState::new(joint, 2, 2)?;
    ScenarioInstance::new(
        "cnot_bell",
        UnitaryMatrix::cnot(),
        state,
        0,
        [Flag::Correlated, Flag::NcpExpected],
    )
}

/// ρ^S ⊗ ρ^E from the seed, no correlations.
pub fn product_instance(d_s: usize, d_e: usize, seed: u64) -> Result<ScenarioInstance> {
    let u = haar_unitary(d_s * d_e, derive_seed(seed, 0));
    let state = random_correlated_state(d_s, d_e, 0.0, derive_seed(seed, 1));
    ScenarioInstance::new("product", u, state, seed, [Flag::Product])
}

/// Haar unitary and random correlated state with weight `w`.
pub fn random_instance(d_s: usize, d_e: usize, w: f64, seed: u64) -> Result<ScenarioInstance> {
    let u = haar_unitary(d_s * d_e, derive_seed(seed, 0));
    let state = random_correlated_state(d_s, d_e, w, derive_seed(seed, 1));
    let flags = if w == 0.0 {
        vec![Flag::Product]
    } else {
        vec![Flag::Correlated]
    };
    ScenarioInstance::new("random_correlated", u, state, seed, flags)
}

/// σ_i ⊗ σ_j for i, j ∈ {x, y, z}: a real basis of the traceless Hermitian
/// two-qubit operators whose partial traces both vanish.
fn zero_marginal_basis() -> Vec<ComplexMatrix> {
    let i = Complex64::new(0.0, 1.0);
    let paulis = [
        ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]),
        ComplexMatrix::from_vec(2, 2, vec![ZERO, -i, i, ZERO]).expect("2x2"),
        ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]),
    ];
    let mut out = Vec::with_capacity(9);
    for a in &paulis {
        for b in &paulis {
            out.push(kron(a, b));
        }
    }
    out
}

/// Largest t with ρ^S⊗ρ^E + t·χ̂ PSD, by bisection on the minimum eigenvalue.
fn max_admissible_scale(base: &ComplexMatrix, direction: &ComplexMatrix) -> Result<f64> {
    let psd_at = |t: f64| -> Result<bool> {
        Ok(tensor::min_eigenvalue(&(base + &direction.scale_real(t)).hermitize())? >= 0.0)
    };
    let mut hi = 1.0;
    while psd_at(hi)? {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::SearchFailed(
                "correlation direction never leaves the PSD cone".into(),
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if psd_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Correlated two-qubit instance whose correlations never reach the system:
/// χ ≠ 0 but tr_E[U χ U†] = 0, so B^aff vanishes.
pub fn vanishing_memory_instance(seed: u64) -> Result<ScenarioInstance> {
    vanishing_memory_instance_at(seed, VANISHING_MEMORY_FRACTION)
}

/// Same construction with the correlation strength set to `fraction` of the
/// PSD-admissible maximum; `fraction = 0` gives the underlying product state.
///
/// U is a system-controlled Haar qubit unitary. χ is drawn from the null
/// space of the linear map χ ↦ tr_E[U χ U†] restricted to the σ_i ⊗ σ_j span,
/// then scaled into the PSD region.
pub fn vanishing_memory_instance_at(seed: u64, fraction: f64) -> Result<ScenarioInstance> {
    assert!(
        (0.0..=1.0).contains(&fraction),
        "fraction must lie in [0, 1]"
    );
    let target = haar_unitary(2, derive_seed(seed, 0));
    let u = UnitaryMatrix::controlled(2, &target);
    let mut rng = ShiftRegisterRng::new(derive_seed(seed, 1));
    // Keep marginals away from the boundary so the admissible χ is not tiny.
    let mix = |rho: DensityMatrix| {
        let m = &rho.matrix().scale_real(0.5) + &ComplexMatrix::identity(2).scale_real(0.25);
        DensityMatrix::new(m).expect("mixture of states")
    };
    let rho_s = mix(random_density(2, &mut rng));
    let rho_e = mix(random_density(2, &mut rng));
    let base = kron(rho_s.matrix(), rho_e.matrix());

    let basis = zero_marginal_basis();
    // Constraint rows: tr(P_i · tr_E[U B_j U†]) for the three output Paulis
    // (the identity component vanishes because every B_j is traceless).
    let images: Vec<ComplexMatrix> = basis
        .iter()
        .map(|b| evolve_reduce_operator(&u, b, 2, 2))
        .collect::<Result<_>>()?;
    let sigma = [
        ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]),
        ComplexMatrix::from_vec(
            2,
            2,
            vec![
                ZERO,
                Complex64::new(0.0, -1.0),
                Complex64::new(0.0, 1.0),
                ZERO,
            ],
        )?,
        ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]),
    ];
    let constraint = ComplexMatrix::from_fn(3, 9, |i, j| {
        Complex64::new(sigma[i].hs_inner(&images[j]).re, 0.0)
    });
    let normal = constraint.adjoint().matmul(&constraint);
    let spectrum = tensor::hermitian_eig(&normal.hermitize())?;
    let scale = spectrum.max().max(1.0);
    let null: Vec<Vec<f64>> = spectrum
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l < 1e-12 * scale)
        .map(|(k, _)| {
            spectrum
                .eigenvectors
                .column(k)
                .iter()
                .map(|z| z.re)
                .collect()
        })
        .collect();
    if null.is_empty() {
        return Err(Error::SearchFailed(
            "constraint map has a trivial null space".into(),
        ));
    }

    for _attempt in 0..VANISHING_MEMORY_ATTEMPTS {
        let coeffs: Vec<f64> = null.iter().map(|_| rng.gaussian()).collect();
        let mut direction = ComplexMatrix::zeros(4, 4);
        for (c, v) in coeffs.iter().zip(&null) {
            for (j, b) in basis.iter().enumerate() {
                direction += &b.scale_real(c * v[j]);
            }
        }
        let norm = direction.frobenius_norm();
        if norm < 1e-8 {
            continue;
        }
        let direction = direction.scale_real(1.0 / norm);
        let t_max = max_admissible_scale(&base, &direction)?;
        let chi = direction.scale_real(fraction * t_max);
        if fraction > 0.0 && chi.frobenius_norm() <= 1e-2 {
            continue;
        }
        let leak = evolve_reduce_operator(&u, &chi, 2, 2)?.frobenius_norm();
        if leak > CLAMP_TOL {
            continue;
        }
        let state = BipartiteState::new((&base + &chi).hermitize(), 2, 2)?;
        let flags = if fraction == 0.0 {
            vec![Flag::Product]
        } else {
            vec![Flag::Correlated, Flag::VanishingMemory]
        };
        return ScenarioInstance::new("vanishing_memory", u, state, seed, flags);
    }
    Err(Error::SearchFailed(format!(
        "no admissible vanishing-memory correlation after {VANISHING_MEMORY_ATTEMPTS} attempts"
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub label: String,
    pub seed: u64,
    pub norm_chi: f64,
    #[serde(rename = "norm_K")]
    pub norm_k: f64,
    #[serde(rename = "min_eig_B")]
    pub min_eig_b: f64,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
}

impl ScanTable {
    /// Delimited text with header `label,seed,norm_chi,norm_K,min_eig_B,flags`;
    /// flags are `;`-separated.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "seed", "norm_chi", "norm_K", "min_eig_B", "flags"])?;
        for row in &self.rows {
            let flags: Vec<&str> = row.flags.iter().map(|f| f.as_str()).collect();
            w.write_record([
                row.label.clone(),
                row.seed.to_string(),
                fmt_f64(row.norm_chi),
                fmt_f64(row.norm_k),
                fmt_f64(row.min_eig_b),
                flags.join(";"),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn min_eig_b(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.min_eig_b)
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn scan_row(inst: &ScenarioInstance) -> Result<ScanRow> {
    let m = inst.metrics()?;
    let mut flags: BTreeSet<Flag> = inst.flags.clone();
    if m.norm_chi <= CLAMP_TOL {
        flags.insert(Flag::Product);
    } else {
        flags.insert(Flag::Correlated);
        if m.norm_baff <= CLAMP_TOL {
            flags.insert(Flag::VanishingMemory);
        }
    }
    if m.min_eig_b < -CLAMP_TOL {
        flags.insert(Flag::NcpObserved);
    }
    Ok(ScanRow {
        label: inst.label.clone(),
        seed: inst.seed,
        norm_chi: m.norm_chi,
        norm_k: m.norm_k,
        min_eig_b: m.min_eig_b,
        flags: flags.into_iter().collect(),
    })
}

pub fn scan_instances(instances: &[ScenarioInstance]) -> Result<ScanTable> {
    Ok(ScanTable {
        rows: instances.iter().map(scan_row).collect::<Result<_>>()?,
    })
}

/// Instance `i` of an NCP scan: Haar U and a random correlated state whose
/// weight is drawn uniformly from [0, 1].
pub fn scan_instance(d_s: usize, d_e: usize, seed: u64, i: usize) -> Result<ScenarioInstance> {
    let inst_seed = derive_seed(seed, i as u64);
    let w = ShiftRegisterRng::new(derive_seed(inst_seed, 2)).next_f64();
    let mut inst = random_instance(d_s, d_e, w, inst_seed)?;
    inst.label = format!("random_{i}");
    Ok(inst)
}

/// Records ‖K‖ and the NCP witness of B over `n_instances` random correlated
/// instances. This reports data only.
pub fn ncp_scan(n_instances: usize, d_s: usize, d_e: usize, seed: u64) -> Result<ScanTable> {
    let instances = (0..n_instances)
        .map(|i| scan_instance(d_s, d_e, seed, i))
        .collect::<Result<Vec<_>>>()?;
    scan_instances(&instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmap::apply_k;
    use crate::objects::evolve_reduce;
    use crate::tensor::{partial_trace, unitarity_deviation, Subsystem};

    #[test]
    fn haar_unitary_basics() {
        let u1 = haar_unitary(1, 3);
        assert!((u1.matrix()[(0, 0)].norm() - 1.0).abs() < 1e-15);
        assert_eq!(haar_unitary(4, 17), haar_unitary(4, 17));
        assert_ne!(haar_unitary(4, 17), haar_unitary(4, 18));
        for d in [2, 3, 6, 8] {
            assert!(unitarity_deviation(haar_unitary(d, d as u64).matrix()) < 1e-10);
        }
    }

    #[test]
    fn haar_first_moment() {
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|s| haar_unitary(2, s).matrix()[(0, 0)].norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean |U00|² = {mean}");
    }

    #[test]
    fn haar_phase_is_uniform() {
        // Without the R-diagonal correction, Householder QR biases the phase
        // of U00; with it, E[U00] = 0.
        let n = 10_000;
        let mean: Complex64 = (0..n)
            .map(|s| haar_unitary(2, s).matrix()[(0, 0)])
            .sum::<Complex64>()
            / n as f64;
        assert!(mean.norm() < 0.03, "E[U00] = {mean}");
    }

    #[test]
    fn correlated_state_endpoints() {
        let s = random_correlated_state(2, 3, 0.0, 5);
        let (_, _, chi) = split_correlations(&s);
        assert!(chi.frobenius_norm() < 1e-12);
        let s = random_correlated_state(2, 3, 1.0, 5);
        let purity = s.joint().matmul(s.joint()).trace().re;
        assert!((purity - 1.0).abs() < 1e-12);
        let s = random_correlated_state(2, 2, 0.5, 5);
        let (_, _, chi) = split_correlations(&s);
        assert!(chi.frobenius_norm() > 1e-3);
        assert!(
            partial_trace(chi.matrix(), 2, 2, Subsystem::A)
                .unwrap()
                .max_abs()
                < 1e-12
        );
        assert!(
            partial_trace(chi.matrix(), 2, 2, Subsystem::B)
                .unwrap()
                .max_abs()
                < 1e-12
        );
    }

    #[test]
    fn correlation_grows_with_weight_on_average() {
        let avg = |w: f64| {
            (0..50)
                .map(|s| {
                    split_correlations(&random_correlated_state(2, 2, w, s))
                        .2
                        .frobenius_norm()
                })
                .sum::<f64>()
                / 50.0
        };
        let (a, b, c) = (avg(0.2), avg(0.5), avg(0.9));
        assert!(a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn random_cptp_prep_is_trace_preserving() {
        let prep = random_cptp_prep(3, 2, 8);
        assert!((&prep.effect() - &ComplexMatrix::identity(3)).max_abs() < 1e-12);
    }

    #[test]
    fn canonical_instance() {
        let inst = canonical_cnot_bell().unwrap();
        let m = inst.metrics().unwrap();
        assert!(m.norm_k > 0.1);
        assert!(m.min_eig_b < -1e-3);
        assert!(
            (m.min_eig_b - CNOT_BELL_NCP_WITNESS).abs() < 1e-12,
            "{}",
            m.min_eig_b
        );
        let rho_s = inst.state.rho_s();
        assert!((rho_s.matrix() - &ComplexMatrix::identity(2).scale_real(0.5)).max_abs() < 1e-15);
        let mm = build_mmap(&inst.u, &inst.state).unwrap();
        let b = assemble_b(&mm);
        let direct = evolve_reduce(&inst.u, &inst.state).unwrap();
        assert!((&b.apply(rho_s.matrix()) - direct.matrix()).max_abs() < 1e-10);
    }

    #[test]
    fn vanishing_memory_instances() {
        for seed in 0..5 {
            let inst = vanishing_memory_instance(seed).unwrap();
            let (_, _, chi) = split_correlations(&inst.state);
            assert!(chi.frobenius_norm() > 1e-2);
            let m = build_mmap(&inst.u, &inst.state).unwrap();
            let (_, k) = memory_of(&m);
            let baff = apply_k(&k, &PreparationMap::identity(2)).unwrap();
            assert!(baff.frobenius_norm() <= 1e-10);
            assert!(k.frobenius_norm() > 1e-3, "K carries more than B^aff");
            assert!(inst.flags.contains(&Flag::VanishingMemory));
        }
        let zero = vanishing_memory_instance_at(3, 0.0).unwrap();
        let metrics = zero.metrics().unwrap();
        assert!(metrics.norm_k <= 1e-10 && metrics.norm_baff <= 1e-10 && metrics.norm_chi <= 1e-12);
        assert!(zero.flags.contains(&Flag::Product));
    }

    #[test]
    fn flags_are_verified() {
        let inst = canonical_cnot_bell().unwrap();
        let err = ScenarioInstance::new(
            "bad",
            inst.u.clone(),
            inst.state.clone(),
            0,
            [Flag::Product],
        );
        assert!(matches!(err, Err(Error::Verification(_))));
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            random_correlated_state(2, 3, 0.4, 9),
            random_correlated_state(2, 3, 0.4, 9)
        );
        let a = vanishing_memory_instance(4).unwrap();
        let b = vanishing_memory_instance(4).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.u, b.u);
        assert_eq!(ncp_scan(5, 2, 2, 1).unwrap(), ncp_scan(5, 2, 2, 1).unwrap());
    }

    #[test]
    fn scan_rows_for_product_instances() {
        let instances: Vec<_> = (0..10)
            .map(|s| product_instance(2, 3, s).unwrap())
            .collect();
        let table = scan_instances(&instances).unwrap();
        for row in &table.rows {
            assert!(row.norm_k <= 1e-10);
            assert!(row.min_eig_b >= -1e-10);
            assert!(row.flags.contains(&Flag::Product));
        }
    }

    #[test]
    fn scan_with_injected_canonical_instance() {
        let mut instances: Vec<_> = (0..3).map(|i| scan_instance(2, 2, 7, i).unwrap()).collect();
        instances.push(canonical_cnot_bell().unwrap());
        let table = scan_instances(&instances).unwrap();
        let row = table.rows.last().unwrap();
        assert_eq!(row.label, "cnot_bell");
        assert!(row.min_eig_b < -1e-3);
        assert!(row.flags.contains(&Flag::NcpObserved));
    }

    #[test]
    fn scan_finds_ncp_instances() {
        let table = ncp_scan(100, 2, 2, 2024).unwrap();
        assert_eq!(table.rows.len(), 100);
        assert!(
            table.min_eig_b() < -1e-6,
            "min over scan {}",
            table.min_eig_b()
        );
    }

    #[test]
    fn scan_csv_header() {
        let table = ncp_scan(2, 2, 2, 3).unwrap();
        let text = table.to_csv().unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("label,seed,norm_chi,norm_K,min_eig_B,flags")
        );
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn zero_marginal_basis_has_zero_partial_traces() {
        for b in zero_marginal_basis() {
            assert!(partial_trace(&b, 2, 2, Subsystem::A).unwrap().max_abs() < 1e-15);
            assert!(partial_trace(&b, 2, 2, Subsystem::B).unwrap().max_abs() < 1e-15);
        }
    }

    #[test]
    fn unit_modulus_for_d1() {
        let u = haar_unitary(1, 0);
        assert!((u.matrix()[(0, 0)].norm() - 1.0).abs() < 1e-15);
    }
}
