//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 2 5`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use gapbound::dynamics::{
    analytic_four_level, analytic_two_level, check_universal_bound, error_decomposition, error_trace, jump_time,
    ErrorEvaluator, BOUND_SLACK, HORIZON_FACTOR,
};
use gapbound::linalg::operator_norm;
use gapbound::manybody::{fit_growth, lr_transition_time, polyfit, rescaled_collapse, run_pxp_single};
use gapbound::models::{build_four_level, build_pxp_parent, build_random_banded, build_two_level};
use gapbound::swt::{certify_generator, transform_model, v_prime_series};
use gapbound::{ErrorTrace, ModelInstance, TimeGrid};
use gapbound_cli::run::decomposition_certificates;

const SEEDS: std::ops::RangeInclusive<u64> = 1..=50;
const RANDOM_T_END: f64 = 4.0;
const RANDOM_POINTS: usize = 801;

const PXP_LENGTH: usize = 12;
const PXP_OMEGA: f64 = 2.0;
const PXP_LOG10_DELTA0: [f64; 4] = [1.0, 1.5, 2.0, 2.5];
/// Ω·dt = 0.15. A step of 0.1 puts Δ₀·dt near a multiple of π for
/// Δ₀ = 10^1.5 and 10^2.5, which aliases the fast oscillation.
const PXP_DT: f64 = 0.075;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn(&mut Shared) -> Result<Outcome>,
}

/// PXP traces are expensive and shared by criteria 8 to 10.
#[derive(Default)]
struct Shared {
    pxp: Option<PxpTraces>,
}

struct PxpTraces {
    /// Grid to Ωt = 12, one trace per Δ₀.
    short: Vec<ErrorTrace>,
    /// Δ₀ = 100 to Ωt = 24.
    long: ErrorTrace,
}

fn max_abs_deviation(trace: &ErrorTrace, exact: impl Fn(f64) -> f64) -> f64 {
    trace
        .times
        .iter()
        .zip(&trace.epsilon)
        .map(|(&t, &e)| (e - exact(t)).abs())
        .fold(0.0, f64::max)
}

fn direct_trace(model: &ModelInstance, grid: &TimeGrid) -> Result<ErrorTrace> {
    let m = transform_model(model)?;
    Ok(error_trace(model, &m.partition, grid)?)
}

fn random_model(seed: u64) -> Result<ModelInstance> {
    Ok(build_random_banded(seed, 3, 4, 10.0)?)
}

fn criterion_1(_: &mut Shared) -> Result<Outcome> {
    let model = build_two_level(10.0, 1.0)?;
    let grid = TimeGrid::up_to(4.0, 400)?;
    let m = transform_model(&model)?;
    let trace = error_trace(&model, &m.partition, &grid)?;
    let deviation = max_abs_deviation(&trace, |t| analytic_two_level(10.0, 1.0, t));

    // ε has period 2π/√101; locate the first maximum.
    let t_peak = PI / 101f64.sqrt();
    let (i_max, _) = trace
        .epsilon
        .iter()
        .enumerate()
        .take_while(|(i, _)| trace.times[*i] <= 2.0 * t_peak)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .context("empty trace")?;
    let peak_offset = (trace.times[i_max] - t_peak).abs();
    let global_max = trace.epsilon.iter().copied().fold(0.0, f64::max);
    let at_peak = ErrorEvaluator::new(&model.hamiltonian(), m.partition.basis(), &model.observable)?.epsilon(t_peak)?;
    let peak_error = (at_peak - 20.0 / 101.0).abs();

    let pass = deviation <= 1e-10
        && peak_offset <= grid.dt()
        && peak_error <= 1e-10
        && global_max <= 20.0 / 101.0 + 1e-10;
    Ok(Outcome::new(
        pass,
        format!(
            "max |eps - exact| = {deviation:.2e}; first peak offset {peak_offset:.2e} (dt {:.2e}); \
             |eps(pi/sqrt101) - 20/101| = {peak_error:.2e}; grid max {global_max:.6}",
            grid.dt()
        ),
    ))
}

fn criterion_2(_: &mut Shared) -> Result<Outcome> {
    let model = build_four_level(10.0, 1.0)?;
    let grid = TimeGrid::up_to(20.0, 400)?;
    let trace = direct_trace(&model, &grid)?;
    let deviation = max_abs_deviation(&trace, |t| analytic_four_level(10.0, 1.0, t));

    let (t, y): (Vec<f64>, Vec<f64>) = trace
        .times
        .iter()
        .zip(&trace.epsilon)
        .filter(|(&t, _)| t >= 2.0)
        .map(|(&t, &e)| (t, e))
        .unzip();
    let (coeffs, _) = polyfit(&t, &y, 1);
    let expected = 2.0 * 0.5f64.powi(2) / 10.0;
    let rel = (coeffs[1] - expected).abs() / expected;
    Ok(Outcome::new(
        deviation <= 1e-10 && rel <= 0.2,
        format!(
            "max |eps - exact| = {deviation:.2e}; slope {:.4} vs {expected} ({:.1}% off)",
            coeffs[1],
            100.0 * rel
        ),
    ))
}

/// Models for criteria 3 and 4 with their grids.
fn decomposition_cases() -> Result<Vec<(String, ModelInstance, TimeGrid)>> {
    let mut cases = vec![
        ("two_level".to_string(), build_two_level(10.0, 1.0)?, TimeGrid::up_to(4.0, 400)?),
        ("four_level".to_string(), build_four_level(10.0, 1.0)?, TimeGrid::up_to(20.0, 400)?),
    ];
    for seed in 1..=5 {
        cases.push((
            format!("random_seed{seed}"),
            random_model(seed)?,
            TimeGrid::up_to(RANDOM_T_END, RANDOM_POINTS)?,
        ));
    }
    let (pxp, _) = build_pxp_parent(8, 40.0, 1.0)?;
    cases.push(("pxp_L8".to_string(), pxp, TimeGrid::up_to(12.0, 61)?));
    Ok(cases)
}

fn criterion_3(_: &mut Shared) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (label, model, grid) in decomposition_cases()? {
        let m = transform_model(&model)?;
        let trace = error_decomposition(&model, &m.partition, &m.swt, &grid)
            .with_context(|| format!("decomposition of {label}"))?;
        let rewritten = trace.rewritten.as_ref().context("rewritten column")?;
        let defect = rewritten
            .iter()
            .zip(&trace.epsilon)
            .map(|(r, e)| (r - e).abs())
            .fold(0.0, f64::max);
        worst = worst.max(defect);
        lines.push(format!("{label} {defect:.1e}"));
    }
    Ok(Outcome::new(
        worst <= 1e-8,
        format!("max |direct - rewritten| = {worst:.2e} [{}]", lines.join(", ")),
    ))
}

fn criterion_4(_: &mut Shared) -> Result<Outcome> {
    let mut failed = Vec::new();
    let mut worst_margin = f64::INFINITY;
    for (label, model, grid) in decomposition_cases()? {
        let m = transform_model(&model)?;
        let trace = error_decomposition(&model, &m.partition, &m.swt, &grid)?;
        let certificates = decomposition_certificates(&trace, m.swt.norm_t, m.swt.norm_v_prime);
        ensure!(certificates.len() == 3, "missing decomposition columns for {label}");
        for c in certificates {
            worst_margin = worst_margin.min(c.margin());
            if !c.holds {
                failed.push(format!("{label}/{}", c.name));
            }
        }
    }
    Ok(Outcome::new(
        failed.is_empty(),
        if failed.is_empty() {
            format!("triangle and term bounds hold on 8 models; smallest margin {worst_margin:.2e}")
        } else {
            format!("violated: {}", failed.join(", "))
        },
    ))
}

fn criterion_5(_: &mut Shared) -> Result<Outcome> {
    let mut failed = Vec::new();
    let mut worst_residual: f64 = 0.0;
    let mut worst_series: f64 = 0.0;
    for seed in SEEDS {
        let model = random_model(seed)?;
        let m = transform_model(&model)?;
        let swt = &m.swt;
        let residual_ok = swt.sylvester_residual <= 1e-10 * m.norm_v;
        let generator_ok = certify_generator(swt, &m.gap).holds;
        let weyl_ok = m.gap.delta >= m.gap.delta0 - 2.0 * m.norm_v - 1e-9;
        let series = v_prime_series(&swt.generator, &m.blocks.v_off, 20)?;
        let series_error = operator_norm(&(&series - &swt.v_prime))?;
        worst_residual = worst_residual.max(swt.sylvester_residual / m.norm_v);
        worst_series = worst_series.max(series_error);
        if !(residual_ok && generator_ok && weyl_ok && series_error <= 1e-10) {
            failed.push(seed);
        }
    }
    Ok(Outcome::new(
        failed.is_empty(),
        format!(
            "{} seeds; max residual/|V| {worst_residual:.1e}; max series error {worst_series:.1e}; failing seeds {failed:?}",
            SEEDS.count()
        ),
    ))
}

fn criterion_6(_: &mut Shared) -> Result<Outcome> {
    let mut cases: Vec<(String, ModelInstance, TimeGrid)> = vec![
        ("two_level".into(), build_two_level(10.0, 1.0)?, TimeGrid::up_to(4.0, 400)?),
        ("four_level".into(), build_four_level(10.0, 1.0)?, TimeGrid::up_to(20.0, 400)?),
    ];
    for seed in SEEDS {
        cases.push((
            format!("seed{seed}"),
            random_model(seed)?,
            TimeGrid::up_to(RANDOM_T_END, RANDOM_POINTS)?,
        ));
    }
    let mut failed = Vec::new();
    let mut min_margin = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    for (label, model, grid) in &cases {
        let m = transform_model(model)?;
        let delta0 = m.partition.delta0();
        ensure!(delta0 >= 10.0 * m.norm_v, "{label} is outside the large-gap regime");
        let trace = error_trace(model, &m.partition, grid)?;
        let check = check_universal_bound(&trace, m.norm_v, delta0, BOUND_SLACK, HORIZON_FACTOR);
        ensure!(check.checked_points > 1, "{label}: no grid points below the horizon");
        min_margin = min_margin.min(check.min_margin);
        max_ratio = max_ratio.max(check.max_ratio);
        if !check.holds {
            failed.push(format!("{label} (margin {:.2e})", check.min_margin));
        }
    }
    Ok(Outcome::new(
        failed.is_empty(),
        format!(
            "{} models; min margin {min_margin:.3e}; max eps/bound {max_ratio:.3}; violations {failed:?}",
            cases.len()
        ),
    ))
}

fn criterion_7(_: &mut Shared) -> Result<Outcome> {
    let grid = TimeGrid::up_to(RANDOM_T_END, RANDOM_POINTS)?;
    let mut early = 0;
    let mut late = Vec::new();
    for seed in SEEDS {
        let model = random_model(seed)?;
        let m = transform_model(&model)?;
        let delta0 = m.partition.delta0();
        let trace = error_trace(&model, &m.partition, &grid)?;
        let t_jump = jump_time(&trace, delta0)?;
        if t_jump <= 2.0 * PI / delta0 {
            early += 1;
        } else {
            late.push(seed);
        }
    }
    let total = SEEDS.count();
    let fraction = early as f64 / total as f64;
    Ok(Outcome::new(
        fraction >= 0.9,
        format!("{early}/{total} seeds jump within 2pi/delta0; late seeds {late:?}"),
    ))
}

fn pxp_delta0s() -> Vec<f64> {
    PXP_LOG10_DELTA0.iter().map(|e| 10f64.powf(*e)).collect()
}

fn pxp_traces(shared: &mut Shared) -> Result<&PxpTraces> {
    if shared.pxp.is_none() {
        let long_points = (24.0 / PXP_OMEGA / PXP_DT).round() as usize + 1;
        let long_grid = TimeGrid::up_to(24.0 / PXP_OMEGA, long_points)?;
        let short_grid = long_grid.truncated((long_points - 1) / 2 + 1)?;
        let mut short = Vec::new();
        let mut long = None;
        for delta0 in pxp_delta0s() {
            if (delta0 - 100.0).abs() < 1e-9 {
                let trace = run_pxp_single(PXP_LENGTH, PXP_OMEGA, delta0, &long_grid)?;
                let mut head = trace.clone();
                head.times.truncate(short_grid.n_points);
                head.epsilon.truncate(short_grid.n_points);
                short.push(head);
                long = Some(trace);
            } else {
                short.push(run_pxp_single(PXP_LENGTH, PXP_OMEGA, delta0, &short_grid)?);
            }
        }
        shared.pxp = Some(PxpTraces {
            short,
            long: long.context("sweep lacks delta0 = 100")?,
        });
    }
    Ok(shared.pxp.as_ref().expect("just filled"))
}

fn criterion_window() -> [f64; 2] {
    [1.0 / PXP_OMEGA, 10.0 / PXP_OMEGA]
}

fn criterion_8(shared: &mut Shared) -> Result<Outcome> {
    let traces = pxp_traces(shared)?;
    let mut pass = true;
    let mut parts = Vec::new();
    for trace in &traces.short {
        let fit = fit_growth(trace, criterion_window())?;
        pass &= fit.quadratic.rms_residual < fit.linear.rms_residual;
        parts.push(format!(
            "d0={:.1}: quad {:.2e} < lin {:.2e}",
            trace.meta("delta0").unwrap_or(f64::NAN),
            fit.quadratic.rms_residual,
            fit.linear.rms_residual
        ));
    }
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn criterion_9(shared: &mut Shared) -> Result<Outcome> {
    let traces = pxp_traces(shared)?;
    let mut scaled = Vec::new();
    for trace in &traces.short {
        let fit = fit_growth(trace, criterion_window())?;
        scaled.push(fit.quadratic.c2 * trace.meta("delta0").context("delta0 metadata")?);
    }
    let hi = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };

    let min_delta0 = pxp_delta0s().into_iter().fold(f64::INFINITY, f64::min);
    let t_end = *traces.short[0].times.last().context("empty trace")?;
    let report = rescaled_collapse(&traces.short, [2.0 * PI / min_delta0, t_end])?;
    let shown: Vec<String> = scaled.iter().map(|c| format!("{c:.3}")).collect();
    Ok(Outcome::new(
        spread < 2.0 && report.dispersion <= 1.0,
        format!(
            "c2*delta0 = [{}], max/min {spread:.3}; dispersion {:.3} at t = {:.3}",
            shown.join(", "),
            report.dispersion,
            report.dispersion_time
        ),
    ))
}

fn criterion_10(shared: &mut Shared) -> Result<Outcome> {
    let traces = pxp_traces(shared)?;
    let delta0 = 100.0;
    let cp = lr_transition_time(&traces.long, 10.0 * PI / delta0)?;
    let omega_t = PXP_OMEGA * cp.t_star;
    Ok(Outcome::new(
        (8.0..=16.0).contains(&omega_t),
        format!(
            "Omega t* = {omega_t:.2} (split rms {:.2e}, global quadratic rms {:.2e})",
            cp.split_rms, cp.global_rms
        ),
    ))
}

fn run_binary(dir: &Path, args: &[&str]) -> Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_gapbound"))
        .args(args)
        .current_dir(dir)
        .stdout(std::process::Stdio::null())
        .status()?;
    ensure!(status.success(), "gapbound {} exited with {status}", args.join(" "));
    Ok(())
}

fn criterion_11(_: &mut Shared) -> Result<Outcome> {
    let runs: [&[&str]; 4] = [
        &["run", "two_level", "--delta0", "10", "--omega", "1"],
        &["run", "four_level", "--delta0", "10", "--omega", "1"],
        &["run", "random_banded", "--seed", "7"],
        &["run", "pxp", "--L", "6", "--omega", "1", "--delta0-log10", "1.5,2"],
    ];
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    for dir in &dirs {
        for args in runs {
            run_binary(dir.path(), args)?;
        }
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for entry in fs::read_dir(dirs[0].path().join("out"))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().context("file name")?;
            let other = dirs[1].path().join("out").join(name);
            if fs::read(&path)? != fs::read(&other)? {
                differing.push(name.to_string_lossy().into_owned());
            }
            compared += 1;
        }
    }
    Ok(Outcome::new(
        compared >= 5 && differing.is_empty(),
        format!("{compared} CSVs compared; differing {differing:?}"),
    ))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "two-level exact solution", budget: Duration::from_secs(1), check: criterion_1 },
        Criterion { id: 2, name: "four-level exact solution", budget: Duration::from_secs(1), check: criterion_2 },
        Criterion { id: 3, name: "rewriting identity", budget: Duration::from_secs(120), check: criterion_3 },
        Criterion { id: 4, name: "triangle decomposition", budget: Duration::from_secs(120), check: criterion_4 },
        Criterion { id: 5, name: "Sylvester and SWT certificates", budget: Duration::from_secs(30), check: criterion_5 },
        Criterion { id: 6, name: "universal bound", budget: Duration::from_secs(60), check: criterion_6 },
        Criterion { id: 7, name: "initial jump", budget: Duration::MAX, check: criterion_7 },
        Criterion { id: 8, name: "PXP quadratic growth", budget: Duration::from_secs(600), check: criterion_8 },
        Criterion { id: 9, name: "PXP collapse", budget: Duration::MAX, check: criterion_9 },
        Criterion { id: 10, name: "PXP changepoint", budget: Duration::MAX, check: criterion_10 },
        Criterion { id: 11, name: "determinism", budget: Duration::MAX, check: criterion_11 },
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if let Ok(threads) = std::env::var(gapbound_cli::THREADS_ENV) {
        if let Ok(n) = threads.parse() {
            let _ = gapbound::configure_threads(n);
        }
    }

    let mut shared = Shared::default();
    let mut failures = 0;
    for c in &criteria {
        if !selected.is_empty() && !selected.contains(&c.id) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.check)(&mut shared).unwrap_or_else(|e| Outcome::new(false, format!("error: {e:#}")));
        let elapsed = start.elapsed();
        let in_budget = elapsed <= c.budget;
        let pass = outcome.pass && in_budget;
        if !pass {
            failures += 1;
        }
        let budget = if c.budget == Duration::MAX {
            String::new()
        } else if in_budget {
            format!(", budget {:?}", c.budget)
        } else {
            format!(", OVER budget {:?}", c.budget)
        };
        println!(
            "criterion {:>2} {} {}: {} ({:.2} s{budget})",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            outcome.detail,
            elapsed.as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
