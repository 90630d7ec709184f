//! Batch pipelines behind the command line: load a JSON configuration, run
//! the analytic, tomography or scan pipeline, and produce a JSON report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmap::{assemble_b, build_mmap, cp_check, memory_of, Grouping, MMap};
use crate::objects::{split_correlations, BipartiteState, UnitaryMatrix};
use crate::scenarios::{
    canonical_cnot_bell, ncp_scan, product_instance, random_instance, vanishing_memory_instance,
    ScanRow, ScenarioInstance,
};
use crate::tomography::{preparation_basis, reconstruct_mmap, tomography_with_fallback};

/// Environment variable naming the directory for reports when neither the
/// command line nor the configuration gives an output path.
pub const OUT_DIR_ENV: &str = "CORRQPT_OUT_DIR";

/// Rotated bases tried when a tomography record has zero-probability arms.
pub const FALLBACK_ROTATIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Analytic,
    Tomography,
    Scan,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Analytic => "analytic",
            Mode::Tomography => "tomography",
            Mode::Scan => "scan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    CnotBell,
    Product,
    RandomCorrelated {
        weight: f64,
    },
    VanishingMemory,
    /// `UNITARY dS dE` and `BIPARTITE dS dE` text files, relative paths
    /// resolved against the working directory.
    Files {
        unitary: PathBuf,
        state: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub d_s: usize,
    pub d_e: usize,
    #[serde(default = "default_scenario")]
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub seed: u64,
    /// Tomography mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Scan mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_instances: Option<usize>,
    /// Per-(m, n) entries in tomography reports.
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

fn default_scenario() -> ScenarioSpec {
    ScenarioSpec::CnotBell
}

impl ExperimentConfig {
    pub fn new(mode: Mode, d_s: usize, d_e: usize, scenario: ScenarioSpec, seed: u64) -> Self {
        ExperimentConfig {
            mode: Some(mode),
            d_s,
            d_e,
            scenario,
            seed,
            noise_sigma: (mode == Mode::Tomography).then_some(0.0),
            n_instances: (mode == Mode::Scan).then_some(100),
            diagnostics: false,
            output_path: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks the fields the selected mode needs.
    pub fn validate(&self) -> Result<Mode> {
        let mode = self
            .mode
            .ok_or_else(|| Error::Config("`mode` is not set".into()))?;
        if self.d_s < 2 || self.d_e < 2 {
            return Err(Error::Config(format!(
                "d_s and d_e must be >= 2, got {} and {}",
                self.d_s, self.d_e
            )));
        }
        match mode {
            Mode::Tomography => match self.noise_sigma {
                None => {
                    return Err(Error::Config(
                        "tomography mode requires `noise_sigma`".into(),
                    ))
                }
                Some(s) if !(s >= 0.0 && s.is_finite()) => {
                    return Err(Error::Config(format!(
                        "`noise_sigma` must be finite and >= 0, got {s}"
                    )))
                }
                _ => {}
            },
            Mode::Scan => match self.n_instances {
                None | Some(0) => {
                    return Err(Error::Config(
                        "scan mode requires `n_instances` >= 1".into(),
                    ))
                }
                _ => {}
            },
            Mode::Analytic => {}
        }
        if let ScenarioSpec::RandomCorrelated { weight } = self.scenario {
            if !(0.0..=1.0).contains(&weight) {
                return Err(Error::Config(format!(
                    "scenario weight must lie in [0, 1], got {weight}"
                )));
            }
        }
        Ok(mode)
    }

    /// Report path: explicit `output_path`, else `$CORRQPT_OUT_DIR` (or the
    /// working directory) joined with `corrqpt_<mode>_seed<seed>.json`.
    pub fn default_output_path(&self, mode: Mode) -> PathBuf {
        if let Some(p) = &self.output_path {
            return p.clone();
        }
        let dir = std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        dir.join(format!("corrqpt_{}_seed{}.json", mode.as_str(), self.seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceChecks {
    pub total_trace: f64,
    pub output_contraction_error: f64,
    pub hermitian_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    /// ‖M_reconstructed − M_analytic‖_F; null outside tomography mode.
    #[serde(deserialize_with = "Option::deserialize")]
    pub reconstruction_error: Option<f64>,
    #[serde(rename = "norm_K")]
    pub norm_k: f64,
    #[serde(rename = "norm_Baff")]
    pub norm_baff: f64,
    pub norm_chi: f64,
    #[serde(rename = "min_eig_M")]
    pub min_eig_m: f64,
    #[serde(rename = "min_eig_B")]
    pub min_eig_b: f64,
    pub trace_checks: TraceChecks,
    /// Probability of each measurement arm of the preparation basis.
    pub p_list: Vec<f64>,
}

impl Metrics {
    fn non_finite_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut check = |name: &'static str, x: f64| {
            if !x.is_finite() {
                out.push(name);
            }
        };
        if let Some(e) = self.reconstruction_error {
            check("reconstruction_error", e);
        }
        check("norm_K", self.norm_k);
        check("norm_Baff", self.norm_baff);
        check("norm_chi", self.norm_chi);
        check("min_eig_M", self.min_eig_m);
        check("min_eig_B", self.min_eig_b);
        check("trace_checks.total_trace", self.trace_checks.total_trace);
        check(
            "trace_checks.output_contraction_error",
            self.trace_checks.output_contraction_error,
        );
        check(
            "trace_checks.hermitian_deviation",
            self.trace_checks.hermitian_deviation,
        );
        if self.p_list.iter().any(|p| !p.is_finite()) {
            out.push("p_list");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryDiagnostic {
    pub m: usize,
    pub n: usize,
    pub probability: f64,
    /// ‖recorded output − output predicted by the reconstructed M‖_F.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportError {
    pub kind: String,
    pub message: String,
}

impl ReportError {
    fn from_error(e: &Error) -> Self {
        let kind = match e {
            Error::Io(_) | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => "input",
            Error::Config(_) | Error::DimensionMismatch(_) => "config",
            Error::Verification(_)
            | Error::NotHermitian { .. }
            | Error::NotPsd { .. }
            | Error::NotUnitTrace { .. } => "invariant",
            _ => "pipeline",
        };
        ReportError {
            kind: kind.into(),
            message: e.to_string(),
        }
    }

    fn invariant(message: String) -> Self {
        ReportError {
            kind: "invariant".into(),
            message,
        }
    }
}

/// Field order is the serialization order; `wall_time_s` is last so reports
/// from identical runs differ only on their final line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub config: ExperimentConfig,
    #[serde(deserialize_with = "Option::deserialize")]
    pub metrics: Option<Metrics>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub diagnostics: Option<Vec<EntryDiagnostic>>,
    #[serde(deserialize_with = "Option::deserialize")]
    pub scan: Option<Vec<ScanRow>>,
    pub errors: Vec<ReportError>,
    pub tool_version: String,
    pub wall_time_s: f64,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, report.to_json()?)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<Report> {
    Report::from_json(&std::fs::read_to_string(path)?)
}

/// Builds the configured instance.
pub fn load_scenario(config: &ExperimentConfig) -> Result<ScenarioInstance> {
    let fixed_qubits = |label: &str| -> Result<()> {
        if (config.d_s, config.d_e) != (2, 2) {
            return Err(Error::Config(format!(
                "scenario `{label}` is two-qubit, config asks for d_s={} d_e={}",
                config.d_s, config.d_e
            )));
        }
        Ok(())
    };
    match &config.scenario {
        ScenarioSpec::CnotBell => {
            fixed_qubits("cnot_bell")?;
            canonical_cnot_bell()
        }
        ScenarioSpec::VanishingMemory => {
            fixed_qubits("vanishing_memory")?;
            vanishing_memory_instance(config.seed)
        }
        ScenarioSpec::Product => product_instance(config.d_s, config.d_e, config.seed),
        ScenarioSpec::RandomCorrelated { weight } => {
            random_instance(config.d_s, config.d_e, *weight, config.seed)
        }
        ScenarioSpec::Files { unitary, state } => {
            let (u, ud_s, ud_e) = UnitaryMatrix::from_text(&std::fs::read_to_string(unitary)?)?;
            let state = BipartiteState::from_text(&std::fs::read_to_string(state)?)?;
            let dims = [(ud_s, ud_e), (state.d_s(), state.d_e())];
            if dims.iter().any(|&d| d != (config.d_s, config.d_e)) {
                return Err(Error::Config(format!(
                    "file dimensions {dims:?} do not match config d_s={} d_e={}",
                    config.d_s, config.d_e
                )));
            }
            ScenarioInstance::new("files", u, state, config.seed, [])
        }
    }
}

fn check_constructed(m: &MMap, errors: &mut Vec<ReportError>) -> Result<()> {
    let inv = m.invariants()?;
    if !inv.holds(m.d_s()) {
        errors.push(ReportError::invariant(format!(
            "M-map invariants violated: {inv:?}"
        )));
    }
    Ok(())
}

/// Metrics of `m`; for tomography `m` is the reconstruction, so the trace
/// checks carry the noise level and are reported rather than enforced.
fn decomposition_metrics(
    m: &MMap,
    state: &BipartiteState,
    reconstruction_error: Option<f64>,
    p_list: Vec<f64>,
) -> Result<Metrics> {
    let inv = m.invariants()?;
    let (_, k) = memory_of(m);
    let b = assemble_b(m);
    let min_eig_m = cp_check(m.tensor(), Grouping::MMapForm)?.min_eigenvalue;
    let min_eig_b = cp_check(&b.choi_style().hermitize(), Grouping::MapForm)?.min_eigenvalue;
    let (_, _, chi) = split_correlations(state);
    Ok(Metrics {
        reconstruction_error,
        norm_k: k.frobenius_norm(),
        norm_baff: b.affine.frobenius_norm(),
        norm_chi: chi.frobenius_norm(),
        min_eig_m,
        min_eig_b,
        trace_checks: TraceChecks {
            total_trace: inv.total_trace,
            output_contraction_error: inv.output_contraction_error,
            hermitian_deviation: inv.hermitian_deviation,
        },
        p_list,
    })
}

struct Outcome {
    metrics: Option<Metrics>,
    diagnostics: Option<Vec<EntryDiagnostic>>,
    scan: Option<Vec<ScanRow>>,
}

fn run_analytic(config: &ExperimentConfig, errors: &mut Vec<ReportError>) -> Result<Outcome> {
    let inst = load_scenario(config)?;
    let m = build_mmap(&inst.u, &inst.state)?;
    let rho_s = inst.state.rho_s();
    let p_list = preparation_basis(inst.d_s())
        .projectors()
        .iter()
        .map(|p| p.hs_inner(rho_s.matrix()).re)
        .collect();
    check_constructed(&m, errors)?;
    let metrics = decomposition_metrics(&m, &inst.state, None, p_list)?;
    Ok(Outcome {
        metrics: Some(metrics),
        diagnostics: None,
        scan: None,
    })
}

fn run_tomography(config: &ExperimentConfig, errors: &mut Vec<ReportError>) -> Result<Outcome> {
    let inst = load_scenario(config)?;
    let sigma = config.noise_sigma.unwrap_or(0.0);
    let (basis, record) =
        tomography_with_fallback(&inst.u, &inst.state, sigma, config.seed, FALLBACK_ROTATIONS)?;
    let m_rec = reconstruct_mmap(&record, &basis)?;
    let m_true = build_mmap(&inst.u, &inst.state)?;
    check_constructed(&m_true, errors)?;
    let error = (m_rec.tensor() - m_true.tensor()).frobenius_norm();
    let metrics =
        decomposition_metrics(&m_rec, &inst.state, Some(error), record.arm_probabilities())?;
    let diagnostics = config.diagnostics.then(|| {
        record
            .entries
            .iter()
            .zip(basis.preparations())
            .map(|(e, prep)| EntryDiagnostic {
                m: e.m,
                n: e.n,
                probability: e.probability,
                residual: (&m_rec.contract_aform(prep.aform()) - &e.unnormalized).frobenius_norm(),
            })
            .collect()
    });
    Ok(Outcome {
        metrics: Some(metrics),
        diagnostics,
        scan: None,
    })
}

fn run_scan(config: &ExperimentConfig) -> Result<Outcome> {
    let n = config.n_instances.unwrap_or(0);
    let table = ncp_scan(n, config.d_s, config.d_e, config.seed)?;
    Ok(Outcome {
        metrics: None,
        diagnostics: None,
        scan: Some(table.rows),
    })
}

/// Runs the configured pipeline. Failures and invariant violations become
/// entries of `Report::errors`; the function itself does not fail.
pub fn run_experiment(config: &ExperimentConfig) -> Report {
    let start = Instant::now();
    let mut errors = Vec::new();
    let outcome = config.validate().and_then(|mode| match mode {
        Mode::Analytic => run_analytic(config, &mut errors),
        Mode::Tomography => run_tomography(config, &mut errors),
        Mode::Scan => run_scan(config),
    });
    let (metrics, diagnostics, scan) = match outcome {
        Ok(o) => (o.metrics, o.diagnostics, o.scan),
        Err(e) => {
            errors.push(ReportError::from_error(&e));
            (None, None, None)
        }
    };
    if let Some(m) = &metrics {
        for field in m.non_finite_fields() {
            errors.push(ReportError::invariant(format!(
                "metric `{field}` is not finite"
            )));
        }
    }
    if let Some(rows) = &scan {
        if rows
            .iter()
            .any(|r| !(r.norm_chi.is_finite() && r.norm_k.is_finite() && r.min_eig_b.is_finite()))
        {
            errors.push(ReportError::invariant(
                "scan table has non-finite entries".into(),
            ));
        }
    }
    Report {
        config: config.clone(),
        metrics,
        diagnostics,
        scan,
        errors,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(mode: Mode, scenario: ScenarioSpec) -> ExperimentConfig {
        ExperimentConfig::new(mode, 2, 2, scenario, 3)
    }

    #[test]
    fn analytic_cnot_bell() {
        let r = run_experiment(&config(Mode::Analytic, ScenarioSpec::CnotBell));
        assert!(r.ok(), "{:?}", r.errors);
        let m = r.metrics.unwrap();
        assert!(m.norm_k > 0.1);
        assert!(m.min_eig_b < 0.0);
        assert!(m.reconstruction_error.is_none());
        assert_eq!(m.p_list.len(), 4);
    }

    #[test]
    fn analytic_product() {
        let r = run_experiment(&config(
            Mode::Analytic,
            ScenarioSpec::RandomCorrelated { weight: 0.0 },
        ));
        let m = r.metrics.unwrap();
        assert!(m.norm_k <= 1e-10 && m.min_eig_b >= -1e-10);
        let r = run_experiment(&config(Mode::Analytic, ScenarioSpec::Product));
        assert!(r.metrics.unwrap().norm_k <= 1e-10);
    }

    #[test]
    fn tomography_noiseless_is_exact() {
        for seed in [0, 1, 2] {
            let mut c = config(
                Mode::Tomography,
                ScenarioSpec::RandomCorrelated { weight: 0.5 },
            );
            c.seed = seed;
            c.diagnostics = true;
            let r = run_experiment(&c);
            assert!(r.ok(), "{:?}", r.errors);
            assert!(r.metrics.unwrap().reconstruction_error.unwrap() <= 1e-9);
            assert_eq!(r.diagnostics.unwrap().len(), 16);
        }
    }

    #[test]
    fn scan_mode_embeds_table() {
        let mut c = config(Mode::Scan, ScenarioSpec::CnotBell);
        c.n_instances = Some(4);
        let r = run_experiment(&c);
        assert!(r.ok());
        assert_eq!(r.scan.unwrap().len(), 4);
        assert!(r.metrics.is_none());
    }

    #[test]
    fn config_errors_become_report_entries() {
        let mut c = config(Mode::Tomography, ScenarioSpec::CnotBell);
        c.noise_sigma = None;
        let r = run_experiment(&c);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].kind, "config");
        let c = ExperimentConfig::new(Mode::Analytic, 2, 3, ScenarioSpec::CnotBell, 0);
        assert!(!run_experiment(&c).ok());
        let c = config(
            Mode::Analytic,
            ScenarioSpec::Files {
                unitary: "/nonexistent/u.txt".into(),
                state: "/nonexistent/s.txt".into(),
            },
        );
        let r = run_experiment(&c);
        assert_eq!(r.errors[0].kind, "input");
    }

    #[test]
    fn report_round_trip_and_schema_check() {
        let r = run_experiment(&config(Mode::Analytic, ScenarioSpec::CnotBell));
        let text = r.to_json().unwrap();
        assert_eq!(Report::from_json(&text).unwrap(), r);
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["metrics"].as_object_mut().unwrap().remove("norm_K");
        let err = Report::from_json(&value.to_string())
            .unwrap_err()
            .to_string();
        assert!(err.contains("norm_K"), "{err}");
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value.as_object_mut().unwrap().remove("diagnostics");
        let err = Report::from_json(&value.to_string())
            .unwrap_err()
            .to_string();
        assert!(err.contains("diagnostics"), "{err}");
        assert!(text
            .trim_end()
            .trim_end_matches('}')
            .trim_end()
            .lines()
            .last()
            .unwrap()
            .contains("wall_time_s"));
    }

    #[test]
    fn config_json_parsing() {
        let c = ExperimentConfig::from_json(
            r#"{"mode":"tomography","d_s":2,"d_e":3,"scenario":{"kind":"random_correlated","weight":0.25},"seed":9,"noise_sigma":1e-6}"#,
        )
        .unwrap();
        assert_eq!(c.validate().unwrap(), Mode::Tomography);
        assert_eq!(c.scenario, ScenarioSpec::RandomCorrelated { weight: 0.25 });
        assert!(ExperimentConfig::from_json(r#"{"d_s":2,"d_e":2,"bogus":1}"#).is_err());
        let c = ExperimentConfig::from_json(r#"{"d_s":2,"d_e":2}"#).unwrap();
        assert_eq!(c.scenario, ScenarioSpec::CnotBell);
        assert!(c.validate().is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let mut c = config(
            Mode::Tomography,
            ScenarioSpec::RandomCorrelated { weight: 0.4 },
        );
        c.noise_sigma = Some(1e-6);
        let mut a = run_experiment(&c);
        let mut b = run_experiment(&c);
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}
