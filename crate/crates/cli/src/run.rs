//! Experiment orchestration: build models, run the numerics, check
//! certificates and write artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gapbound::banding::BandError;
use gapbound::dynamics::{
    analytic_four_level, analytic_two_level, asymptotic_bound, check_universal_bound, error_decomposition,
    jump_time, BoundCheck, DynamicsError,
};
use gapbound::manybody::{
    default_fit_window, fit_growth, lr_transition_time, rescaled_collapse, run_pxp_single, Changepoint,
    ManyBodyError,
};
use gapbound::models::{build_four_level, build_pxp_parent, build_random_banded, build_two_level, ModelError};
use gapbound::swt::{certify_generator, certify_remainder, transform_model, SwtError};
use gapbound::{Certificate, ErrorTrace, GrowthFit, ModelInstance, ModelParameters};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig, RunPlan, Slack};
use crate::output::{rescaled_csv, trace_csv, NonFiniteValue};

pub const SCHEMA_VERSION: u32 = 1;

/// Chains up to this length also get the full SWT decomposition.
pub const DECOMPOSITION_MAX_LENGTH: usize = 8;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::InvalidModel(_) | Self::Io { .. } => 1,
            Self::Numerical(_) => 3,
        }
    }
}

fn band_is_config_problem(e: &BandError) -> bool {
    matches!(
        e,
        BandError::EmptyBand | BandError::NotIsolated { .. } | BandError::NotContiguous | BandError::IndexOutOfRange { .. }
    )
}

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidParameter { .. } | ModelError::DimensionBudgetExceeded { .. } => {
                Self::InvalidModel(e.to_string())
            }
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<SwtError> for RunError {
    fn from(e: SwtError) -> Self {
        match &e {
            SwtError::Band(b) if band_is_config_problem(b) => Self::InvalidModel(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<DynamicsError> for RunError {
    fn from(e: DynamicsError) -> Self {
        Self::Numerical(e.to_string())
    }
}

impl From<ManyBodyError> for RunError {
    fn from(e: ManyBodyError) -> Self {
        match e {
            ManyBodyError::Model(m) => m.into(),
            ManyBodyError::Band(ref b) if band_is_config_problem(b) => Self::InvalidModel(e.to_string()),
            ManyBodyError::RegimeViolation { .. } => Self::InvalidModel(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<NonFiniteValue> for RunError {
    fn from(e: NonFiniteValue) -> Self {
        Self::Numerical(e.to_string())
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Norms {
    pub norm_v: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_v_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_v_prime: Option<f64>,
    pub delta0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

/// Results for one trace.
#[derive(Clone, Debug, Serialize)]
pub struct TraceReport {
    pub label: String,
    pub csv: String,
    pub params: ModelParameters,
    pub norms: Norms,
    pub certificates: Vec<Certificate>,
    /// Checks skipped because their hypotheses do not hold.
    pub not_applicable: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_check: Option<BoundCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_fit: Option<GrowthFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub changepoint: Option<Changepoint>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CollapseSummary {
    pub csv: String,
    pub delta0_values: Vec<f64>,
    pub window: [f64; 2],
    pub dispersion: f64,
    pub dispersion_time: f64,
    /// Fitted `c2·Δ₀` per trace (null where the fit failed).
    pub c2_times_delta0: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2_times_delta0_ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub config: ExperimentConfig,
    pub grid: GridEcho,
    pub slack: Slack,
    pub traces: Vec<TraceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse: Option<CollapseSummary>,
    pub warnings: Vec<String>,
    /// Names of failed certificates, `label/certificate`.
    pub failures: Vec<String>,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridEcho {
    pub t_start: f64,
    pub t_end: f64,
    pub n_points: usize,
}

impl RunSummary {
    pub fn certificates_hold(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Validates the config, runs the experiment and writes CSV + JSON into the
/// output directory.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary, RunError> {
    let start = Instant::now();
    let plan = RunPlan::from_config(config)?;
    std::fs::create_dir_all(&plan.out_dir).map_err(|source| RunError::Io {
        path: plan.out_dir.clone(),
        source,
    })?;
    let mut artifacts = Vec::new();
    let mut collapse = None;
    let traces = match plan.experiment {
        Experiment::TwoLevel | Experiment::FourLevel | Experiment::RandomBanded => {
            let model = match plan.experiment {
                Experiment::TwoLevel => build_two_level(plan.delta0s[0], plan.omega)?,
                Experiment::FourLevel => build_four_level(plan.delta0s[0], plan.omega)?,
                _ => {
                    let mut m = build_random_banded(plan.seed, plan.n_bands, plan.levels_per_band, plan.gap_ratio)?;
                    if let Some(band) = &plan.band {
                        m.band = band.clone();
                    }
                    m
                }
            };
            let label = match plan.experiment {
                Experiment::RandomBanded => format!("random_banded_seed{}", plan.seed),
                other => other.name().to_string(),
            };
            let (report, trace) = few_body(&model, &label, &plan)?;
            write_trace(&plan.out_dir, &report.csv, &trace, &mut artifacts)?;
            vec![report]
        }
        Experiment::Pxp => {
            let (reports, traces) = pxp(&plan)?;
            for (report, trace) in reports.iter().zip(&traces) {
                write_trace(&plan.out_dir, &report.csv, trace, &mut artifacts)?;
            }
            if traces.len() >= 2 {
                let summary = collapse_summary(&traces, &reports, &plan)?;
                write_text(&plan.out_dir.join(&summary.0.csv), &summary.1, &mut artifacts)?;
                collapse = Some(summary.0);
            }
            reports
        }
    };

    let failures = traces
        .iter()
        .flat_map(|r| {
            r.certificates
                .iter()
                .filter(|c| !c.holds)
                .map(move |c| format!("{}/{}", r.label, c.name))
        })
        .collect();
    let summary_path = plan.out_dir.join(format!("{}_summary.json", plan.experiment.name()));
    artifacts.push(summary_path.display().to_string());
    let mut summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        experiment: plan.experiment,
        config: config.clone(),
        grid: GridEcho {
            t_start: plan.grid.t_start,
            t_end: plan.grid.t_end,
            n_points: plan.grid.n_points,
        },
        slack: plan.slack,
        traces,
        collapse,
        warnings: plan.warnings.iter().map(ToString::to_string).collect(),
        failures,
        artifacts,
        wall_clock_seconds: 0.0,
    };
    summary.wall_clock_seconds = start.elapsed().as_secs_f64();
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, json + "\n").map_err(|source| RunError::Io {
        path: summary_path.clone(),
        source,
    })?;
    Ok(summary)
}

fn write_text(path: &Path, text: &str, artifacts: &mut Vec<String>) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(|source| RunError::Io {
        path: path.to_owned(),
        source,
    })?;
    artifacts.push(path.display().to_string());
    Ok(())
}

fn write_trace(dir: &Path, name: &str, trace: &ErrorTrace, artifacts: &mut Vec<String>) -> Result<(), RunError> {
    let csv = trace_csv(trace)?;
    write_text(&dir.join(name), &csv, artifacts)
}

fn max_over(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, f64::max)
}

/// SWT, decomposition, bounds and certificates for a model small enough
/// for full-space matrices.
pub fn few_body(model: &ModelInstance, label: &str, plan: &RunPlan) -> Result<(TraceReport, ErrorTrace), RunError> {
    let grid = &plan.grid;
    let m = transform_model(model)?;
    let delta0 = m.partition.delta0();
    let norm_v = m.norm_v;
    let swt = &m.swt;
    let mut certificates = vec![
        Certificate::new("weyl_gap", m.gap.weyl_lower, m.gap.delta, 1e-9),
        Certificate::new(
            "sylvester_residual",
            swt.sylvester_residual,
            1e-10 * norm_v.max(gapbound::linalg::ABS_FLOOR),
            0.0,
        ),
        certify_generator(swt, &m.gap),
    ];
    let mut not_applicable = Vec::new();
    match certify_remainder(swt, delta0, norm_v, plan.slack.remainder) {
        Ok(c) => certificates.push(c),
        Err(SwtError::RegimeViolation { .. }) => not_applicable.push("remainder_norm".to_string()),
        Err(e) => return Err(e.into()),
    }

    let mut trace = error_decomposition(model, &m.partition, swt, grid)?;
    let bound = asymptotic_bound(norm_v, delta0, grid);
    trace.attach_bound(&bound);
    let bound_check = if bound.in_regime {
        let check = check_universal_bound(&trace, norm_v, delta0, plan.slack.bound, plan.slack.horizon);
        certificates.push(Certificate::new("universal_bound", check.max_ratio, 1.0, 0.0));
        Some(check)
    } else {
        not_applicable.push("universal_bound".to_string());
        None
    };
    certificates.extend(decomposition_certificates(&trace, swt.norm_t, swt.norm_v_prime));

    if let Some(exact) = analytic_curve(model) {
        let deviation = max_over(trace.times.iter().zip(&trace.epsilon).map(|(&t, &e)| (e - exact(t)).abs()));
        certificates.push(Certificate::new("analytic_match", deviation, 1e-10, 0.0));
    }

    let mut notes = Vec::new();
    let jump = match jump_time(&trace, delta0) {
        Ok(t) => Some(t),
        Err(e) => {
            notes.push(format!("jump_time: {e}"));
            None
        }
    };
    let report = TraceReport {
        label: label.to_string(),
        csv: format!("{label}.csv"),
        params: model.params.clone(),
        norms: Norms {
            norm_v,
            norm_v_star: None,
            norm_t: Some(swt.norm_t),
            norm_v_prime: Some(swt.norm_v_prime),
            delta0,
            delta: Some(m.gap.delta),
        },
        certificates,
        not_applicable,
        bound_check,
        jump_time: jump,
        growth_fit: None,
        changepoint: None,
        notes,
    };
    Ok((report, trace))
}

fn analytic_curve(model: &ModelInstance) -> Option<Box<dyn Fn(f64) -> f64>> {
    let (delta0, omega) = (model.params.delta0, model.params.omega?);
    match model.kind {
        gapbound::ModelKind::TwoLevel => Some(Box::new(move |t| analytic_two_level(delta0, omega, t))),
        gapbound::ModelKind::FourLevel => Some(Box::new(move |t| analytic_four_level(delta0, omega, t))),
        _ => None,
    }
}

/// Triangle inequality and the two term bounds, as worst-case margins.
pub fn decomposition_certificates(trace: &ErrorTrace, norm_t: f64, norm_v_prime: f64) -> Vec<Certificate> {
    let (Some(ts), Some(tl), Some(tsh)) = (&trace.term_s, &trace.term_l, &trace.term_sh1) else {
        return Vec::new();
    };
    let n = trace.len();
    let triangle = max_over((0..n).map(|i| trace.epsilon[i] - ts[i] - tl[i] - tsh[i]));
    let conjugation = max_over(ts.iter().chain(tsh.iter()).copied());
    let echo = max_over((0..n).map(|i| tl[i] - 2.0 * norm_v_prime * trace.times[i]));
    vec![
        Certificate::new("triangle", triangle, 0.0, 1e-9),
        Certificate::new("conjugation_terms", conjugation, 2.0 * norm_t, 1e-9),
        Certificate::new("loschmidt_term", echo, 0.0, 1e-9),
    ]
}

fn pxp(plan: &RunPlan) -> Result<(Vec<TraceReport>, Vec<ErrorTrace>), RunError> {
    let mut reports = Vec::new();
    let mut traces = Vec::new();
    for &delta0 in &plan.delta0s {
        let label = format!("pxp_L{}_delta0_{:.3}", plan.length, delta0);
        let (mut report, trace) = if plan.length <= DECOMPOSITION_MAX_LENGTH {
            let (model, lattice) = build_pxp_parent(plan.length, delta0, plan.omega)?;
            let norm_v_star = lattice.local_interaction_strength()?;
            if delta0 < 10.0 * norm_v_star {
                return Err(ManyBodyError::RegimeViolation { delta0, norm_v_star }.into());
            }
            let (mut report, mut trace) = few_body(&model, &label, plan)?;
            report.norms.norm_v_star = Some(norm_v_star);
            trace.metadata.insert("norm_v_star".into(), norm_v_star);
            (report, trace)
        } else {
            let mut trace = run_pxp_single(plan.length, plan.omega, delta0, &plan.grid)?;
            let norm_v = trace.meta("norm_v").unwrap_or(f64::NAN);
            trace.attach_bound(&asymptotic_bound(norm_v, delta0, &plan.grid));
            let report = TraceReport {
                label: label.clone(),
                csv: format!("{label}.csv"),
                params: ModelParameters {
                    delta0,
                    omega: Some(plan.omega),
                    length: Some(plan.length),
                    ..Default::default()
                },
                norms: Norms {
                    norm_v,
                    norm_v_star: trace.meta("norm_v_star"),
                    delta0,
                    ..Default::default()
                },
                certificates: Vec::new(),
                not_applicable: vec!["swt_certificates (chain longer than decomposition limit)".into()],
                bound_check: None,
                jump_time: None,
                growth_fit: None,
                changepoint: None,
                notes: Vec::new(),
            };
            (report, trace)
        };
        growth_analysis(&mut report, &trace, delta0);
        reports.push(report);
        traces.push(trace);
    }
    Ok((reports, traces))
}

/// Changepoint and growth fit, both starting past the initial jump.
fn growth_analysis(report: &mut TraceReport, trace: &ErrorTrace, delta0: f64) {
    let t_lo = 10.0 * std::f64::consts::PI / delta0;
    let changepoint = match lr_transition_time(trace, t_lo) {
        Ok(cp) => Some(cp),
        Err(e) => {
            report.notes.push(format!("changepoint: {e}"));
            None
        }
    };
    let window = default_fit_window(trace, delta0, changepoint.map(|c| c.t_star));
    match fit_growth(trace, window) {
        Ok(fit) => report.growth_fit = Some(fit),
        Err(e) => report.notes.push(format!("growth fit: {e}")),
    }
    report.changepoint = changepoint;
}

fn collapse_summary(
    traces: &[ErrorTrace],
    reports: &[TraceReport],
    plan: &RunPlan,
) -> Result<(CollapseSummary, String), RunError> {
    let min_delta0 = plan.delta0s.iter().copied().fold(f64::INFINITY, f64::min);
    let window = [2.0 * std::f64::consts::PI / min_delta0, plan.grid.t_end];
    let report = rescaled_collapse(traces, window)?;
    let c2: Vec<Option<f64>> = reports
        .iter()
        .zip(&plan.delta0s)
        .map(|(r, d)| r.growth_fit.as_ref().map(|f| f.quadratic.c2 * d))
        .collect();
    let ratio = c2_ratio(&c2);
    let csv_name = format!("pxp_L{}_rescaled.csv", plan.length);
    let csv = rescaled_csv(&report);
    Ok((
        CollapseSummary {
            csv: csv_name,
            delta0_values: report.delta0_values,
            window: report.window,
            dispersion: report.dispersion,
            dispersion_time: report.dispersion_time,
            c2_times_delta0: c2,
            c2_times_delta0_ratio: ratio,
        },
        csv,
    ))
}

/// `max/min` of the scaled coefficients when all are present and positive.
pub fn c2_ratio(values: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    let v = v?;
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    (lo > 0.0).then(|| hi / lo)
}
