//! Experiment configuration: TOML file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use gapbound::dynamics::{TimeGrid, BOUND_SLACK, HORIZON_FACTOR};
use gapbound::models::MAX_CHAIN_LENGTH;
use gapbound::swt::REMAINDER_SLACK;
use gapbound::BandSelector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    TwoLevel,
    FourLevel,
    RandomBanded,
    Pxp,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [Self::TwoLevel, Self::FourLevel, Self::RandomBanded, Self::Pxp];

    pub fn name(self) -> &'static str {
        match self {
            Self::TwoLevel => "two_level",
            Self::FourLevel => "four_level",
            Self::RandomBanded => "random_banded",
            Self::Pxp => "pxp",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::TwoLevel => "driven two-level atom, band = ground level, O = sigma^x",
            Self::FourLevel => "two atoms, first one driven, band = {|ge>, |eg>}, O = flip-flop",
            Self::RandomBanded => "random banded spectrum with GUE perturbation and observable",
            Self::Pxp => "Rydberg chain (PXP parent), band = blockaded subspace, O = sigma^y on site 0",
        }
    }

    /// Default `(t_end, n_points)`; for `pxp` the end time is `12/Ω`.
    pub fn default_grid(self, omega: Option<f64>) -> (f64, usize) {
        match self {
            Self::TwoLevel => (4.0, 400),
            Self::FourLevel => (20.0, 400),
            Self::RandomBanded => (4.0, 801),
            Self::Pxp => (12.0 / omega.unwrap_or(2.0), 81),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
}

/// Raw configuration as read from file and flags. Every field is optional
/// here; [`validate`] reports what is missing for the chosen experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta0_log10: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "L", alias = "length", skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bands: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels_per_band: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_slack: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remainder_slack: Option<f64>,
    #[serde(default, skip_serializing_if = "grid_is_empty")]
    pub grid: GridConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<BandSelector>,
}

fn grid_is_empty(g: &GridConfig) -> bool {
    g.t_end.is_none() && g.n_points.is_none()
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration:\n{}", format_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Values set in `other` replace those in `self`.
    pub fn overridden_by(mut self, other: ExperimentConfig) -> Self {
        macro_rules! take {
            ($($field:ident).+) => {
                if other.$($field).+.is_some() {
                    self.$($field).+ = other.$($field).+;
                }
            };
        }
        take!(experiment);
        take!(delta0);
        take!(delta0_log10);
        take!(omega);
        take!(seed);
        take!(length);
        take!(n_bands);
        take!(levels_per_band);
        take!(gap_ratio);
        take!(out_dir);
        take!(bound_slack);
        take!(horizon_factor);
        take!(remainder_slack);
        take!(grid.t_end);
        take!(grid.n_points);
        take!(band);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn error(field: &str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            field: Some(field.into()),
            message: message.into(),
        }
    }

    fn warning(field: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            field: field.map(Into::into),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.field {
            Some(field) => write!(f, "{level}: {field}: {}", self.message),
            None => write!(f, "{level}: {}", self.message),
        }
    }
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

/// Regime warning emitted whenever the asymptotic bound is not checked.
pub const REGIME_WARNING: &str = "Δ₀ < 10‖V‖: asymptotic bound checks disabled";

/// All problems with `config`, without running anything. An empty list
/// means the config is runnable with no caveats.
pub fn validate(config: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let Some(experiment) = config.experiment else {
        out.push(Diagnostic::error("experiment", "missing; expected one of two_level, four_level, random_banded, pxp"));
        return out;
    };

    let positive = |out: &mut Vec<Diagnostic>, name: &str, value: Option<f64>, required: bool| {
        match value {
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                out.push(Diagnostic::error(name, format!("must be positive and finite, got {v}")))
            }
            None if required => out.push(Diagnostic::error(name, format!("missing; required by {experiment}"))),
            _ => {}
        }
    };

    positive(&mut out, "grid.t_end", config.grid.t_end, false);
    if let Some(n) = config.grid.n_points {
        if n < 2 {
            out.push(Diagnostic::error("grid.n_points", format!("need at least 2 points, got {n}")));
        }
    }
    for (name, value) in [("bound_slack", config.bound_slack), ("remainder_slack", config.remainder_slack)] {
        if let Some(v) = value {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(Diagnostic::error(name, format!("must be non-negative and finite, got {v}")));
            }
        }
    }
    positive(&mut out, "horizon_factor", config.horizon_factor, false);
    if config.band.is_some() && experiment != Experiment::RandomBanded {
        out.push(Diagnostic::error("band", format!("band override is only supported for random_banded, not {experiment}")));
    }
    if config.delta0_log10.is_some() && experiment != Experiment::Pxp {
        out.push(Diagnostic::error("delta0_log10", "only used by pxp; give delta0 instead"));
    }

    match experiment {
        Experiment::TwoLevel | Experiment::FourLevel => {
            positive(&mut out, "delta0", config.delta0, true);
            positive(&mut out, "omega", config.omega, true);
            if let (Some(d), Some(w)) = (config.delta0, config.omega) {
                if d > 0.0 && w > 0.0 && d < 10.0 * w / 2.0 {
                    out.push(Diagnostic::warning(None, REGIME_WARNING));
                }
            }
        }
        Experiment::RandomBanded => {
            if config.seed.is_none() {
                out.push(Diagnostic::error("seed", "missing; required by random_banded"));
            }
            if let Some(n) = config.n_bands {
                if n < 2 {
                    out.push(Diagnostic::error("n_bands", format!("need at least 2 bands, got {n}")));
                }
            }
            if config.levels_per_band == Some(0) {
                out.push(Diagnostic::error("levels_per_band", "need at least 1 level per band"));
            }
            match config.gap_ratio {
                Some(g) if !(g > 2.0 && g.is_finite()) => {
                    out.push(Diagnostic::error("gap_ratio", format!("must exceed 2 so bands stay separated, got {g}")))
                }
                // ‖V‖ = 1 and the measured gap is at least gap_ratio.
                Some(g) if g < 10.0 => out.push(Diagnostic::warning(None, REGIME_WARNING)),
                _ => {}
            }
            if config.delta0.is_some() || config.omega.is_some() {
                out.push(Diagnostic::warning(
                    None,
                    "delta0 and omega are ignored by random_banded (the gap is measured, ‖V‖ = 1)",
                ));
            }
        }
        Experiment::Pxp => {
            match config.length {
                None => out.push(Diagnostic::error("L", "missing; required by pxp")),
                Some(l) if l < 2 => out.push(Diagnostic::error("L", format!("chain needs at least 2 sites, got {l}"))),
                Some(l) if l > MAX_CHAIN_LENGTH => out.push(Diagnostic::error(
                    "L",
                    format!(
                        "L = {l} exceeds the dense-diagonalization budget of {MAX_CHAIN_LENGTH} sites (dimension 2^{l})"
                    ),
                )),
                _ => {}
            }
            positive(&mut out, "omega", config.omega, true);
            match (config.delta0, &config.delta0_log10) {
                (Some(_), Some(_)) => out.push(Diagnostic::error("delta0", "give either delta0 or delta0_log10, not both")),
                (None, None) => out.push(Diagnostic::error("delta0", "missing; pxp needs delta0 or delta0_log10")),
                (Some(d), None) => positive(&mut out, "delta0", Some(d), true),
                (None, Some(list)) if list.is_empty() => {
                    out.push(Diagnostic::error("delta0_log10", "list is empty"))
                }
                (None, Some(list)) => {
                    if let Some(bad) = list.iter().find(|x| !x.is_finite()) {
                        out.push(Diagnostic::error("delta0_log10", format!("non-finite entry {bad}")));
                    }
                }
            }
            if let Some(omega) = config.omega.filter(|w| *w > 0.0) {
                let norm_v_star = omega / 2.0;
                for d in pxp_delta0s(config) {
                    if d.is_finite() && d > 0.0 && d < 10.0 * norm_v_star {
                        out.push(Diagnostic::error(
                            "delta0",
                            format!("Δ₀ = {d} is below 10‖V‖⋆ = {}", 10.0 * norm_v_star),
                        ));
                    }
                }
            }
        }
    }
    out
}

fn pxp_delta0s(config: &ExperimentConfig) -> Vec<f64> {
    match (&config.delta0_log10, config.delta0) {
        (Some(list), _) => list.iter().map(|x| 10f64.powf(*x)).collect(),
        (None, Some(d)) => vec![d],
        (None, None) => Vec::new(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Slack {
    /// `c` in the universal bound factor `(1 + c‖V‖/Δ₀)`.
    pub bound: f64,
    /// `k` in the horizon `t ≤ k·Δ₀/‖V‖²`.
    pub horizon: f64,
    /// `c` in the remainder certificate `(1 + c‖V‖/Δ₀)`.
    pub remainder: f64,
}

/// Fully specified run, produced from a config without errors.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub experiment: Experiment,
    pub delta0s: Vec<f64>,
    pub omega: f64,
    pub seed: u64,
    pub length: usize,
    pub n_bands: usize,
    pub levels_per_band: usize,
    pub gap_ratio: f64,
    pub grid: TimeGrid,
    pub band: Option<BandSelector>,
    pub out_dir: PathBuf,
    pub slack: Slack,
    pub warnings: Vec<Diagnostic>,
}

impl RunPlan {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self, ConfigError> {
        let diagnostics = validate(config);
        let (errors, warnings): (Vec<_>, Vec<_>) =
            diagnostics.into_iter().partition(|d| d.severity == Severity::Error);
        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        let experiment = config.experiment.expect("validated");
        let (t_end, n_points) = experiment.default_grid(config.omega);
        let grid = TimeGrid::up_to(config.grid.t_end.unwrap_or(t_end), config.grid.n_points.unwrap_or(n_points))
            .map_err(|e| ConfigError::Invalid(vec![Diagnostic::error("grid", e.to_string())]))?;
        let delta0s = match experiment {
            Experiment::Pxp => pxp_delta0s(config),
            _ => config.delta0.into_iter().collect(),
        };
        Ok(Self {
            experiment,
            delta0s,
            omega: config.omega.unwrap_or(0.0),
            seed: config.seed.unwrap_or(0),
            length: config.length.unwrap_or(0),
            n_bands: config.n_bands.unwrap_or(3),
            levels_per_band: config.levels_per_band.unwrap_or(4),
            gap_ratio: config.gap_ratio.unwrap_or(10.0),
            grid,
            band: config.band.clone(),
            out_dir: config.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
            slack: Slack {
                bound: config.bound_slack.unwrap_or(BOUND_SLACK),
                horizon: config.horizon_factor.unwrap_or(HORIZON_FACTOR),
                remainder: config.remainder_slack.unwrap_or(REMAINDER_SLACK),
            },
            warnings,
        })
    }
}
