//! Rydberg-chain experiment: error traces across a sweep of `Δ₀`, growth
//! fits, the `Δ₀ε(t)` collapse and the Lieb-Robinson changepoint.

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use serde::Serialize;
use thiserror::Error;

use crate::banding::{band_partition, detect_band, BandError};
use crate::dynamics::{median, DynamicsError, ErrorEvaluator, ErrorTrace, TimeGrid};
use crate::linalg::{eig_hermitian, LinalgError};
use crate::models::{build_pxp_parent, reflection_sectors, ModelError};

/// Spatial dimension of the chain; growth is expected with degree `d + 1`.
pub const CHAIN_DIMENSION: usize = 1;

/// Minimum number of samples in a fit window.
pub const MIN_FIT_POINTS: usize = 10;

/// Relative rms improvement a changepoint must deliver over one global fit.
pub const MIN_CHANGEPOINT_IMPROVEMENT: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManyBodyError {
    #[error("delta0 = {delta0} is below 10 * |V|_* = {}", 10.0 * norm_v_star)]
    RegimeViolation { delta0: f64, norm_v_star: f64 },
    #[error("fit window [{lo}, {hi}] holds {points} samples, need at least {required}")]
    WindowTooNarrow {
        lo: f64,
        hi: f64,
        points: usize,
        required: usize,
    },
    #[error("traces do not share a time grid")]
    GridMismatch,
    #[error("collapse needs at least two traces, got {0}")]
    TooFewTraces(usize),
    #[error("trace is missing metadata field {0:?}")]
    MissingMetadata(&'static str),
    #[error("no changepoint: split fit improves rms by {improvement:.3} (< {threshold})")]
    NoTransition { improvement: f64, threshold: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Band(#[from] BandError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

type Result<T, E = ManyBodyError> = std::result::Result<T, E>;

/// One error trace per `Δ₀` for the open chain of `length` sites, driven
/// at Rabi frequency `omega`, observing `σ^y` on the first site.
///
/// Sweeps run one after another; each holds a few dense copies of the
/// `2^L`-dimensional Hamiltonian, and the time loop is already parallel.
pub fn run_pxp_experiment(length: usize, omega: f64, delta0_list: &[f64], grid: &TimeGrid) -> Result<Vec<ErrorTrace>> {
    delta0_list
        .iter()
        .map(|&delta0| run_pxp_single(length, omega, delta0, grid))
        .collect()
}

/// A single member of [`run_pxp_experiment`].
pub fn run_pxp_single(length: usize, omega: f64, delta0: f64, grid: &TimeGrid) -> Result<ErrorTrace> {
    let (model, lattice) = build_pxp_parent(length, delta0, omega)?;
    let norm_v_star = lattice.local_interaction_strength()?;
    if delta0 < 10.0 * norm_v_star {
        return Err(ManyBodyError::RegimeViolation { delta0, norm_v_star });
    }
    let partition = {
        let spec0 = eig_hermitian(&model.h0)?;
        let indices = detect_band(&spec0, &model.band)?;
        band_partition(&spec0, &indices)?
    };
    let evaluator = {
        let h = model.hamiltonian();
        let sectors = reflection_sectors(length)?;
        ErrorEvaluator::with_sectors(&h, partition.basis(), &model.observable, &sectors)?
    };
    let epsilon = evaluator.trace(grid)?;
    let mut trace = ErrorTrace {
        times: grid.times().to_vec(),
        epsilon,
        ..Default::default()
    };
    let meta = &mut trace.metadata;
    meta.insert("delta0".into(), delta0);
    meta.insert("omega".into(), omega);
    meta.insert("length".into(), length as f64);
    meta.insert("band_dim".into(), partition.rank() as f64);
    meta.insert("norm_v_star".into(), norm_v_star);
    // Commuting single-site drives: the top eigenvalue of Σσ^x is L.
    meta.insert("norm_v".into(), length as f64 * omega / 2.0);
    meta.insert("spatial_dim".into(), CHAIN_DIMENSION as f64);
    Ok(trace)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadraticFit {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub rms_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthLaw {
    Linear,
    Quadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthFit {
    pub window: [f64; 2],
    pub n_points: usize,
    pub linear: LinearFit,
    pub quadratic: QuadraticFit,
    pub preferred: GrowthLaw,
}

/// Least-squares polynomial coefficients (constant term first) and the
/// rms residual.
pub fn polyfit(t: &[f64], y: &[f64], degree: usize) -> (Vec<f64>, f64) {
    let n = t.len();
    let a = Mat::<f64>::from_fn(n, degree + 1, |i, j| t[i].powi(j as i32));
    let b = Mat::<f64>::from_fn(n, 1, |i, _| y[i]);
    let x = a.qr().solve_lstsq(&b);
    let coeffs: Vec<f64> = (0..=degree).map(|j| x[(j, 0)]).collect();
    let sse: f64 = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| {
            let fit = coeffs.iter().rev().fold(0.0, |acc, &c| acc * ti + c);
            (yi - fit).powi(2)
        })
        .sum();
    (coeffs, (sse / n as f64).sqrt())
}

fn window_samples(trace: &ErrorTrace, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    trace
        .times
        .iter()
        .zip(&trace.epsilon)
        .filter(|(&t, _)| t >= lo && t <= hi)
        .map(|(&t, &e)| (t, e))
        .unzip()
}

/// Linear and quadratic least-squares fits of `ε(t)` on `[lo, hi]`.
pub fn fit_growth(trace: &ErrorTrace, window: [f64; 2]) -> Result<GrowthFit> {
    let [lo, hi] = window;
    let (t, y) = window_samples(trace, lo, hi);
    if t.len() < MIN_FIT_POINTS {
        return Err(ManyBodyError::WindowTooNarrow {
            lo,
            hi,
            points: t.len(),
            required: MIN_FIT_POINTS,
        });
    }
    let scale = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
    // Residuals at round-off level count as exact, so exact lines stay linear.
    let floor = |r: f64| if r <= 1e-12 * scale { 0.0 } else { r };
    let (lin, lin_rms) = polyfit(&t, &y, 1);
    let (quad, quad_rms) = polyfit(&t, &y, 2);
    let linear = LinearFit {
        slope: lin[1],
        intercept: lin[0],
        rms_residual: floor(lin_rms),
    };
    let quadratic = QuadraticFit {
        c2: quad[2],
        c1: quad[1],
        c0: quad[0],
        rms_residual: floor(quad_rms),
    };
    let preferred = if quadratic.rms_residual < linear.rms_residual {
        GrowthLaw::Quadratic
    } else {
        GrowthLaw::Linear
    };
    Ok(GrowthFit {
        window,
        n_points: t.len(),
        linear,
        quadratic,
        preferred,
    })
}

/// `[10π/Δ₀, 0.8·t*]`, falling back to the end of the trace when no
/// changepoint is known.
pub fn default_fit_window(trace: &ErrorTrace, delta0: f64, t_star: Option<f64>) -> [f64; 2] {
    let end = trace.times.last().copied().unwrap_or(0.0);
    let hi = t_star.map_or(end, |t| (0.8 * t).min(end));
    [10.0 * std::f64::consts::PI / delta0, hi]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollapseReport {
    pub delta0_values: Vec<f64>,
    pub times: Vec<f64>,
    /// `Δ₀ε(t)` per trace, on the shared grid.
    pub rescaled_traces: Vec<Vec<f64>>,
    /// Samples with `t` in this range enter the dispersion.
    pub window: [f64; 2],
    /// Largest `(max − min)/median` of `Δ₀ε(t)` across traces.
    pub dispersion: f64,
    pub dispersion_time: f64,
}

/// Rescales each trace by its `Δ₀` (metadata key `delta0`) and measures the
/// spread across traces at each `t` in `window`.
pub fn rescaled_collapse(traces: &[ErrorTrace], window: [f64; 2]) -> Result<CollapseReport> {
    if traces.len() < 2 {
        return Err(ManyBodyError::TooFewTraces(traces.len()));
    }
    let times = traces[0].times.clone();
    if traces.iter().any(|tr| tr.times != times || tr.epsilon.len() != times.len()) {
        return Err(ManyBodyError::GridMismatch);
    }
    let delta0_values = traces
        .iter()
        .map(|tr| tr.meta("delta0").ok_or(ManyBodyError::MissingMetadata("delta0")))
        .collect::<Result<Vec<f64>>>()?;
    let rescaled_traces: Vec<Vec<f64>> = traces
        .iter()
        .zip(&delta0_values)
        .map(|(tr, &d)| tr.epsilon.iter().map(|e| d * e).collect())
        .collect();
    let mut dispersion: f64 = 0.0;
    let mut dispersion_time = f64::NAN;
    for (i, &t) in times.iter().enumerate() {
        if t < window[0] || t > window[1] {
            continue;
        }
        let mut column: Vec<f64> = rescaled_traces.iter().map(|r| r[i]).collect();
        let med = median(&mut column);
        let spread = column[column.len() - 1] - column[0];
        if spread == 0.0 {
            continue;
        }
        let relative = if med > 0.0 { spread / med } else { f64::INFINITY };
        if relative > dispersion || dispersion_time.is_nan() {
            dispersion = dispersion.max(relative);
            dispersion_time = t;
        }
    }
    Ok(CollapseReport {
        delta0_values,
        times,
        rescaled_traces,
        window,
        dispersion,
        dispersion_time,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Changepoint {
    pub t_star: f64,
    /// rms of the quadratic-then-linear split fit.
    pub split_rms: f64,
    /// rms of one quadratic fit over the whole range.
    pub global_rms: f64,
    /// `1 − split_rms/global_rms`.
    pub improvement: f64,
}

/// Changepoint between quadratic growth before and linear growth after,
/// scanned over grid points with `t ≥ t_min`.
pub fn lr_transition_time(trace: &ErrorTrace, t_min: f64) -> Result<Changepoint> {
    let (t, y) = window_samples(trace, t_min, f64::INFINITY);
    let n = t.len();
    let min_side = 5;
    if n < 2 * min_side {
        return Err(ManyBodyError::WindowTooNarrow {
            lo: t_min,
            hi: trace.times.last().copied().unwrap_or(t_min),
            points: n,
            required: 2 * min_side,
        });
    }
    let (_, global_rms) = polyfit(&t, &y, 2);
    let mut best: Option<(f64, f64)> = None;
    for k in min_side..=n - min_side {
        let (_, before) = polyfit(&t[..k], &y[..k], 2);
        let (_, after) = polyfit(&t[k..], &y[k..], 1);
        let sse = before * before * k as f64 + after * after * (n - k) as f64;
        let rms = (sse / n as f64).sqrt();
        if best.map_or(true, |(b, _)| rms < b) {
            best = Some((rms, t[k]));
        }
    }
    let (split_rms, t_star) = best.expect("scan is non-empty");
    let scale = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let improvement = if global_rms <= 1e-12 * scale {
        0.0
    } else {
        1.0 - split_rms / global_rms
    };
    if improvement < MIN_CHANGEPOINT_IMPROVEMENT {
        return Err(ManyBodyError::NoTransition {
            improvement,
            threshold: MIN_CHANGEPOINT_IMPROVEMENT,
        });
    }
    Ok(Changepoint {
        t_star,
        split_rms,
        global_rms,
        improvement,
    })
}
