//! Error between full and band-constrained Heisenberg evolution,
//! `ε(t) = ‖P(e^{iHt}Oe^{−iHt} − e^{iH_Pt}Oe^{−iH_Pt})P‖`, together with
//! its bounds and the SWT-based decomposition.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::banding::{BandError, BandPartition};
use crate::linalg::{
    c64, eig_hermitian, operator_norm, propagator, ComplexMatrix, HermitianOperator, LinalgError,
    SparseIsometry, SpectralDecomposition, SplitMatrix, ABS_FLOOR,
};
use crate::models::ModelInstance;
use crate::swt::SwtResult;

/// Slack constant `c` in `(1 + c‖V‖/Δ₀)` for the universal bound check.
pub const BOUND_SLACK: f64 = 8.0;

/// Validity horizon factor: the bound is checked for `t ≤ k·Δ₀/‖V‖²`.
pub const HORIZON_FACTOR: f64 = 0.1;

/// Largest allowed gap between the direct and rewritten error.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("grid step {dt:e} does not resolve 1/delta0 (need <= {required:e})")]
    GridTooCoarse { dt: f64, required: f64 },
    #[error("window [{lo}, {hi}] contains no grid points")]
    WindowNotCovered { lo: f64, hi: f64 },
    #[error("error trace is identically zero; no jump to locate")]
    NoJump,
    #[error("rewritten error differs from the direct one by {defect:e} at t = {t}")]
    IdentityViolation { t: f64, defect: f64 },
    #[error("symmetry sectors are coupled by H or split the band (defect {defect:e})")]
    SectorCoupling { defect: f64 },
    #[error(transparent)]
    Band(#[from] BandError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

type Result<T, E = DynamicsError> = std::result::Result<T, E>;

/// Uniform grid `t_start, …, t_end` with `n_points` samples.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_points: usize,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(DynamicsError::InvalidGrid(format!("n_points = {n_points} < 2")));
        }
        if !(t_start.is_finite() && t_end.is_finite() && t_end > t_start) {
            return Err(DynamicsError::InvalidGrid(format!("need t_end > t_start, got [{t_start}, {t_end}]")));
        }
        let span = t_end - t_start;
        let last = (n_points - 1) as f64;
        let times = (0..n_points)
            .map(|i| if i + 1 == n_points { t_end } else { t_start + span * (i as f64 / last) })
            .collect();
        Ok(Self {
            t_start,
            t_end,
            n_points,
            times,
        })
    }

    /// Grid starting at zero.
    pub fn up_to(t_end: f64, n_points: usize) -> Result<Self> {
        Self::new(0.0, t_end, n_points)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / (self.n_points - 1) as f64
    }

    /// The first `n_points` samples of this grid, bit-identical to it.
    pub fn truncated(&self, n_points: usize) -> Result<Self> {
        if n_points < 2 || n_points > self.n_points {
            return Err(DynamicsError::InvalidGrid(format!(
                "cannot keep {n_points} of {} points",
                self.n_points
            )));
        }
        let times = self.times[..n_points].to_vec();
        Ok(Self {
            t_start: self.t_start,
            t_end: times[n_points - 1],
            n_points,
            times,
        })
    }
}

/// Sampled error and, when available, its bound and decomposition.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ErrorTrace {
    pub times: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub bound: Option<Vec<f64>>,
    pub term_s: Option<Vec<f64>>,
    pub term_l: Option<Vec<f64>>,
    pub term_sh1: Option<Vec<f64>>,
    pub rewritten: Option<Vec<f64>>,
    pub metadata: BTreeMap<String, f64>,
}

impl ErrorTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Uniform step, taken from the first two samples.
    pub fn dt(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }

    /// Fills the `bound` column when the large-gap regime holds.
    pub fn attach_bound(&mut self, bound: &AsymptoticBound) {
        self.bound = bound.in_regime.then(|| bound.values.clone());
        self.metadata.insert("bound_horizon".into(), bound.horizon);
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.metadata.get(key).copied()
    }
}

/// Evaluates `ε(t)` from one eigendecomposition of `H` per symmetry sector
/// and one of the band block of `H`.
///
/// With `H = U λ U†` and band isometry `Π`, the full term in band
/// coordinates is `G Õ G†` where `G = Π†U e^{iλt}` and `Õ = U†OU`. The
/// constrained term is `e^{iht} (Π†OΠ) e^{−iht}` with `h = Π†HΠ`. When `H`
/// and the band are block diagonal over sectors, `U` and `G` are too and
/// only the sector blocks are formed.
pub struct ErrorEvaluator {
    sectors: Vec<Sector>,
    /// `Õ_{kl}` for sectors `k, l`, stored row-major; `None` when either
    /// sector has no band states.
    rotated_observable: Vec<Option<SplitMatrix>>,
    band_spec: SpectralDecomposition,
    band_observable: ComplexMatrix,
    rank: usize,
    hermitian: bool,
}

struct Sector {
    energies: Vec<f64>,
    /// `Π_k†U_k`.
    band_rows: ComplexMatrix,
    offset: usize,
}

impl ErrorEvaluator {
    pub fn new(h: &HermitianOperator, basis: &ComplexMatrix, observable: &ComplexMatrix) -> Result<Self> {
        Self::with_sectors(h, basis, observable, &[SparseIsometry::identity(h.dim())])
    }

    /// `sectors` are isometries with orthogonal ranges spanning the whole
    /// space; `H` and the band projector must not couple them.
    pub fn with_sectors(
        h: &HermitianOperator,
        basis: &ComplexMatrix,
        observable: &ComplexMatrix,
        sectors: &[SparseIsometry],
    ) -> Result<Self> {
        let n = h.dim();
        let covered: usize = sectors.iter().map(SparseIsometry::ncols).sum();
        if basis.nrows() != n || observable.shape() != (n, n) || covered != n {
            return Err(LinalgError::DimensionMismatch {
                left: (n, covered),
                right: observable.shape(),
            }
            .into());
        }
        if sectors.iter().any(|s| s.nrows() != n) {
            return Err(LinalgError::DimensionMismatch {
                left: (n, n),
                right: (sectors.iter().map(SparseIsometry::nrows).max().unwrap_or(0), n),
            }
            .into());
        }
        let scale = h.matrix().max_abs().max(ABS_FLOOR);
        for (k, a) in sectors.iter().enumerate() {
            for b in &sectors[k + 1..] {
                let leak = a.compress(h.matrix(), b).max_abs();
                if leak > 1e-12 * scale {
                    return Err(DynamicsError::SectorCoupling { defect: leak / scale });
                }
            }
        }

        let rank = basis.ncols();
        let mut blocks = Vec::with_capacity(sectors.len());
        let mut offset = 0;
        for s in sectors {
            let h_k = HermitianOperator::from_hermitian_part(&s.compress(h.matrix(), s))?;
            let spec = eig_hermitian(&h_k)?;
            let coords = s.adjoint_apply(basis);
            let band = if sectors.len() == 1 {
                coords
            } else {
                sector_band(&coords)?
            };
            let u = SplitMatrix::new(spec.eigenvectors());
            let band_rows = SplitMatrix::new(&band).adjoint().mul(u.view());
            let r = band.ncols();
            blocks.push((spec, h_k, u, band, band_rows, offset));
            offset += r;
        }
        if offset != rank {
            return Err(DynamicsError::SectorCoupling {
                defect: (rank as f64 - offset as f64).abs(),
            });
        }

        let m = sectors.len();
        let mut rotated_observable = Vec::with_capacity(m * m);
        let mut band_observable = ComplexMatrix::zeros(rank, rank);
        let mut h_band = ComplexMatrix::zeros(rank, rank);
        for (k, (_, h_k, u_k, band_k, _, off_k)) in blocks.iter().enumerate() {
            for (l, (_, _, u_l, band_l, _, off_l)) in blocks.iter().enumerate() {
                if band_k.ncols() == 0 || band_l.ncols() == 0 {
                    rotated_observable.push(None);
                    continue;
                }
                let o_kl = sectors[k].compress(observable, &sectors[l]);
                let ou = SplitMatrix::new(&SplitMatrix::new(&o_kl).mul(u_l));
                rotated_observable.push(Some(SplitMatrix::new(&u_k.adjoint().mul(ou.view()))));
                let block = band_k.adjoint_matmul(&(&o_kl * band_l));
                copy_block(&mut band_observable, &block, *off_k, *off_l);
            }
            if band_k.ncols() > 0 {
                copy_block(&mut h_band, &band_k.adjoint_matmul(&(h_k.matrix() * band_k)), *off_k, *off_k);
            }
        }
        let band_spec = eig_hermitian(&HermitianOperator::from_hermitian_part(&h_band)?)?;
        let hermitian = (&observable.adjoint() - observable).max_abs() <= 1e-14 * observable.max_abs().max(1.0);
        let sectors = blocks
            .into_iter()
            .map(|(spec, _, _, _, band_rows, offset)| Sector {
                energies: spec.eigenvalues().to_vec(),
                band_rows,
                offset,
            })
            .collect();
        Ok(Self {
            sectors,
            rotated_observable,
            band_spec,
            band_observable,
            rank,
            hermitian,
        })
    }

    pub fn band_rank(&self) -> usize {
        self.rank
    }

    /// `Π†(e^{iHt}Oe^{−iHt} − e^{iH_Pt}Oe^{−iH_Pt})Π` in an orthonormal band
    /// basis adapted to the sectors.
    pub fn band_difference(&self, t: f64) -> ComplexMatrix {
        let m = self.sectors.len();
        let g: Vec<Option<SplitMatrix>> = self
            .sectors
            .iter()
            .map(|s| {
                (s.band_rows.nrows() > 0).then(|| {
                    let phases: Vec<c64> = s.energies.iter().map(|&l| c64::cis(l * t)).collect();
                    SplitMatrix::new(&s.band_rows.scale_columns(&phases))
                })
            })
            .collect();
        let mut full = ComplexMatrix::zeros(self.rank, self.rank);
        for k in 0..m {
            for l in 0..m {
                let (Some(gk), Some(gl), Some(o)) = (&g[k], &g[l], &self.rotated_observable[k * m + l]) else {
                    continue;
                };
                let (ok, ol) = (self.sectors[k].offset, self.sectors[l].offset);
                if self.hermitian && l < k {
                    // Filled from the (l, k) block below.
                    continue;
                }
                let block = SplitMatrix::new(&gk.mul(o)).mul(gl.adjoint());
                if self.hermitian && l > k {
                    copy_block(&mut full, &block.adjoint(), ol, ok);
                }
                copy_block(&mut full, &block, ok, ol);
            }
        }
        let forward = self.band_spec.apply(|e| c64::cis(e * t));
        let constrained = (&forward * &self.band_observable).matmul_adjoint(&forward);
        &full - &constrained
    }

    pub fn epsilon(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let diff = self.band_difference(t);
        let norm = if self.hermitian {
            HermitianOperator::from_hermitian_part(&diff)?.norm()?
        } else {
            operator_norm(&diff)?
        };
        Ok(norm)
    }

    /// `ε` on every grid point, in grid order.
    pub fn trace(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        grid.times().par_iter().map(|&t| self.epsilon(t)).collect()
    }
}

/// Orthonormal basis of the part of the band inside one sector, given the
/// band basis in sector coordinates. The band must split cleanly.
fn sector_band(coords: &ComplexMatrix) -> Result<ComplexMatrix> {
    let gram = HermitianOperator::from_hermitian_part(&coords.adjoint_matmul(coords))?;
    let spec = eig_hermitian(&gram)?;
    let mut keep = Vec::new();
    for (j, &w) in spec.eigenvalues().iter().enumerate() {
        let defect = w.abs().min((w - 1.0).abs());
        if defect > 1e-9 {
            return Err(DynamicsError::SectorCoupling { defect });
        }
        if w > 0.5 {
            keep.push(j);
        }
    }
    Ok(coords * &spec.eigenvectors().select_columns(&keep))
}

fn copy_block(dst: &mut ComplexMatrix, block: &ComplexMatrix, row: usize, col: usize) {
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            dst[(row + i, col + j)] = block[(i, j)];
        }
    }
}

/// Direct evaluation of `ε(t)` on a grid.
pub fn error_trace(model: &ModelInstance, partition: &BandPartition, grid: &TimeGrid) -> Result<ErrorTrace> {
    let evaluator = ErrorEvaluator::new(&model.hamiltonian(), partition.basis(), &model.observable)?;
    let epsilon = evaluator.trace(grid)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("delta0".into(), partition.delta0());
    metadata.insert("band_dim".into(), partition.rank() as f64);
    Ok(ErrorTrace {
        times: grid.times().to_vec(),
        epsilon,
        metadata,
        ..Default::default()
    })
}

/// `4‖V‖/Δ₀ + 2‖V‖²t/Δ₀` on the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AsymptoticBound {
    pub values: Vec<f64>,
    pub intercept: f64,
    pub slope: f64,
    /// `Δ₀/‖V‖²`.
    pub horizon: f64,
    /// `Δ₀ ≥ 10‖V‖`.
    pub in_regime: bool,
}

pub fn asymptotic_bound(norm_v: f64, delta0: f64, grid: &TimeGrid) -> AsymptoticBound {
    let intercept = 4.0 * norm_v / delta0;
    let slope = 2.0 * norm_v * norm_v / delta0;
    AsymptoticBound {
        values: grid.times().iter().map(|&t| intercept + slope * t).collect(),
        intercept,
        slope,
        horizon: if norm_v > 0.0 { delta0 / (norm_v * norm_v) } else { f64::INFINITY },
        in_regime: delta0 >= 10.0 * norm_v,
    }
}

/// Outcome of checking `ε(t) ≤ bound(t)·(1 + c‖V‖/Δ₀)` up to
/// `t ≤ min(2/‖V‖, k·Δ₀/‖V‖²)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub t_limit: f64,
    pub checked_points: usize,
    /// Smallest `slackened bound − ε` over the checked points.
    pub min_margin: f64,
    /// Largest `ε / slackened bound`.
    pub max_ratio: f64,
    pub holds: bool,
}

pub fn check_universal_bound(
    trace: &ErrorTrace,
    norm_v: f64,
    delta0: f64,
    slack: f64,
    horizon_factor: f64,
) -> BoundCheck {
    let t_limit = if norm_v > 0.0 {
        (2.0 / norm_v).min(horizon_factor * delta0 / (norm_v * norm_v))
    } else {
        f64::INFINITY
    };
    let intercept = 4.0 * norm_v / delta0;
    let slope = 2.0 * norm_v * norm_v / delta0;
    let factor = 1.0 + slack * norm_v / delta0;
    let mut min_margin = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    let mut checked_points = 0;
    for (&t, &eps) in trace.times.iter().zip(&trace.epsilon) {
        if t > t_limit {
            continue;
        }
        let b = (intercept + slope * t) * factor;
        min_margin = min_margin.min(b - eps);
        if b > 0.0 {
            max_ratio = max_ratio.max(eps / b);
        } else if eps > 0.0 {
            max_ratio = f64::INFINITY;
        }
        checked_points += 1;
    }
    BoundCheck {
        t_limit,
        checked_points,
        min_margin,
        max_ratio,
        holds: min_margin >= 0.0,
    }
}

/// `(Δ₀Ω/Δ²)|1 − cos Δt|` with `Δ = √(Δ₀² + Ω²)`.
pub fn analytic_two_level(delta0: f64, omega: f64, t: f64) -> f64 {
    let delta_sq = delta0 * delta0 + omega * omega;
    delta0 * omega / delta_sq * (1.0 - (delta_sq.sqrt() * t).cos()).abs()
}

/// `|[cos(Δt/2) + i(Δ₀/Δ) sin(Δt/2)]² − e^{iΔ₀t}|`.
pub fn analytic_four_level(delta0: f64, omega: f64, t: f64) -> f64 {
    let delta = delta0.hypot(omega);
    let half = 0.5 * delta * t;
    let a = c64::new(half.cos(), delta0 / delta * half.sin());
    (a * a - c64::cis(delta0 * t)).norm()
}

/// Direct error, the rewritten error and the three triangle terms
/// `‖SOS† − O‖`, `‖LOL† − O‖`, `‖S_{H₁}†OS_{H₁} − O‖` on the grid, with
/// `L(t) = e^{−iH₁t}e^{i(H₁+V′)t}` and `S_{H₁}(t) = e^{−iH₁t}Se^{iH₁t}`.
///
/// Works on full-space matrices; meant for dimensions up to a few hundred.
pub fn error_decomposition(
    model: &ModelInstance,
    partition: &BandPartition,
    swt: &SwtResult,
    grid: &TimeGrid,
) -> Result<ErrorTrace> {
    let mut trace = error_trace(model, partition, grid)?;
    let o = &model.observable;
    let s = &swt.unitary;
    let basis = partition.basis();
    let n = model.dim();
    let identity = ComplexMatrix::identity(n);
    let h1_spec = eig_hermitian(&swt.h1)?;
    let dressed = HermitianOperator::from_hermitian_part(&(swt.h1.matrix() + &swt.v_prime))?;
    let dressed_spec = eig_hermitian(&dressed)?;
    let rotated = (&(s * o)).matmul_adjoint(s);
    let term_s = operator_norm(&(&rotated - o))?;

    struct Point {
        rewritten: f64,
        term_l: f64,
        term_sh1: f64,
        unitarity: f64,
    }
    let points: Vec<Point> = grid
        .times()
        .par_iter()
        .map(|&t| -> Result<Point> {
            let (echo, s_h1) = if t == 0.0 {
                (identity.clone(), s.clone())
            } else {
                let back = propagator(&h1_spec, t);
                let echo = &back * &propagator(&dressed_spec, -t);
                let s_h1 = (&back * s).matmul_adjoint(&back);
                (echo, s_h1)
            };
            let term_l = operator_norm(&(&(&echo * o).matmul_adjoint(&echo) - o))?;
            let term_sh1 = operator_norm(&(&s_h1.adjoint_matmul(&(o * &s_h1)) - o))?;
            let inner = (&echo * &rotated).matmul_adjoint(&echo);
            let full = s_h1.adjoint_matmul(&(&inner * &s_h1));
            let diff = &full - o;
            let rewritten = operator_norm(&basis.adjoint_matmul(&(&diff * basis)))?;
            let unitarity = operator_norm(&(&echo.adjoint_matmul(&echo) - &identity))?
                .max(operator_norm(&(&s_h1.adjoint_matmul(&s_h1) - &identity))?);
            Ok(Point {
                rewritten,
                term_l,
                term_sh1,
                unitarity,
            })
        })
        .collect::<Result<_>>()?;

    for (point, (&t, &eps)) in points.iter().zip(trace.times.iter().zip(&trace.epsilon)) {
        let defect = (point.rewritten - eps).abs();
        if defect > IDENTITY_TOLERANCE {
            return Err(DynamicsError::IdentityViolation { t, defect });
        }
    }
    let worst = |f: fn(&Point) -> f64| points.iter().map(f).fold(0.0, f64::max);
    trace.metadata.insert("max_unitarity_defect".into(), worst(|p| p.unitarity));
    trace.metadata.insert(
        "max_rewriting_defect".into(),
        points
            .iter()
            .zip(&trace.epsilon)
            .map(|(p, &e)| (p.rewritten - e).abs())
            .fold(0.0, f64::max),
    );
    trace.metadata.insert("norm_t".into(), swt.norm_t);
    trace.metadata.insert("norm_v_prime".into(), swt.norm_v_prime);
    trace.term_s = Some(vec![term_s; points.len()]);
    trace.term_l = Some(points.iter().map(|p| p.term_l).collect());
    trace.term_sh1 = Some(points.iter().map(|p| p.term_sh1).collect());
    trace.rewritten = Some(points.iter().map(|p| p.rewritten).collect());
    Ok(trace)
}

/// Earliest time where `ε` reaches half the median of `ε` over
/// `[2π/Δ₀, 10π/Δ₀]`.
pub fn jump_time(trace: &ErrorTrace, delta0: f64) -> Result<f64> {
    let required = 0.1 / delta0;
    let dt = trace.dt().ok_or_else(|| DynamicsError::InvalidGrid("fewer than two samples".into()))?;
    if dt > required * (1.0 + 1e-12) {
        return Err(DynamicsError::GridTooCoarse { dt, required });
    }
    let (lo, hi) = (2.0 * std::f64::consts::PI / delta0, 10.0 * std::f64::consts::PI / delta0);
    let mut window: Vec<f64> = trace
        .times
        .iter()
        .zip(&trace.epsilon)
        .filter(|(&t, _)| t >= lo && t <= hi)
        .map(|(_, &e)| e)
        .collect();
    if window.is_empty() {
        return Err(DynamicsError::WindowNotCovered { lo, hi });
    }
    let reference = median(&mut window);
    let scale = trace.epsilon.iter().fold(0.0, |a: f64, &e| a.max(e.abs()));
    if reference <= 1e-12 * scale.max(1.0) {
        return Err(DynamicsError::NoJump);
    }
    let threshold = 0.5 * reference;
    trace
        .times
        .iter()
        .zip(&trace.epsilon)
        .find(|(_, &e)| e >= threshold)
        .map(|(&t, _)| t)
        .ok_or(DynamicsError::NoJump)
}

/// Median of a non-empty slice (mean of the two central values for even
/// lengths). Reorders the input.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
