//! Isolated-band bookkeeping: band selection on the unperturbed spectrum,
//! projectors, block decomposition of the perturbation and the gap
//! certificate for the block-diagonal Hamiltonian.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    c64, operator_norm, ComplexMatrix, HermitianOperator, LinalgError, SpectralDecomposition,
    ABS_FLOOR,
};

/// Relative tolerance for deciding that an outside level touches the band.
pub const ISOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BandError {
    #[error("band selection is empty")]
    EmptyBand,
    #[error("band is not isolated: level {level} at energy {energy} lies within {tolerance:e} of the band range [{lo}, {hi}]")]
    NotIsolated {
        level: usize,
        energy: f64,
        lo: f64,
        hi: f64,
        tolerance: f64,
    },
    #[error("band indices must form a contiguous run of sorted eigenindices")]
    NotContiguous,
    #[error("index {index} out of range for a spectrum of {dim} levels")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("H1 is not block diagonal: off-diagonal block norm {defect:e} exceeds {tolerance:e}")]
    NotBlockDiagonal { defect: f64, tolerance: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// How the isolated band is picked out of the sorted spectrum of `H₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandSelector {
    /// Inclusive run of eigenindices `lo..=hi` (ascending energy order).
    IndexRange { lo: usize, hi: usize },
    /// All levels with `lo ≤ E ≤ hi`.
    EnergyWindow { lo: f64, hi: f64 },
    /// All levels with `|E| ≤ 1e-9 · ‖H₀‖`.
    ZeroSubspace,
}

fn spectral_norm(eigs: &[f64]) -> f64 {
    eigs.iter().fold(0.0, |acc, l| acc.max(l.abs()))
}

fn check_isolated(eigs: &[f64], lo: usize, hi: usize) -> Result<(), BandError> {
    let tolerance = ISOLATION_TOL * spectral_norm(eigs).max(ABS_FLOOR);
    let (e_lo, e_hi) = (eigs[lo], eigs[hi]);
    for (level, &energy) in eigs.iter().enumerate() {
        if (lo..=hi).contains(&level) {
            continue;
        }
        if energy >= e_lo - tolerance && energy <= e_hi + tolerance {
            return Err(BandError::NotIsolated {
                level,
                energy,
                lo: e_lo,
                hi: e_hi,
                tolerance,
            });
        }
    }
    Ok(())
}

/// Resolves a selector to a sorted, contiguous, isolated run of eigenindices.
pub fn detect_band(spec: &SpectralDecomposition, selector: &BandSelector) -> Result<Vec<usize>, BandError> {
    let eigs = spec.eigenvalues();
    let n = eigs.len();
    let indices: Vec<usize> = match *selector {
        BandSelector::IndexRange { lo, hi } => {
            if lo > hi {
                return Err(BandError::EmptyBand);
            }
            if hi >= n {
                return Err(BandError::IndexOutOfRange { index: hi, dim: n });
            }
            (lo..=hi).collect()
        }
        BandSelector::EnergyWindow { lo, hi } => {
            (0..n).filter(|&i| eigs[i] >= lo && eigs[i] <= hi).collect()
        }
        BandSelector::ZeroSubspace => {
            let tol = ISOLATION_TOL * spectral_norm(eigs).max(ABS_FLOOR);
            (0..n).filter(|&i| eigs[i].abs() <= tol).collect()
        }
    };
    let (&first, &last) = match (indices.first(), indices.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(BandError::EmptyBand),
    };
    check_isolated(eigs, first, last)?;
    Ok(indices)
}

/// An isolated band of `H₀`: its eigenbasis, projectors and gaps.
#[derive(Debug)]
pub struct BandPartition {
    indices: Vec<usize>,
    basis: ComplexMatrix,
    h0_vectors: ComplexMatrix,
    delta_up: f64,
    delta_down: f64,
    projector: OnceLock<ComplexMatrix>,
    complement: OnceLock<ComplexMatrix>,
}

/// `V = V_P + V_Q + V_off` with `V_diag = V_P + V_Q`.
#[derive(Clone, Debug)]
pub struct PerturbationBlocks {
    pub v_p: ComplexMatrix,
    pub v_q: ComplexMatrix,
    pub v_off: ComplexMatrix,
    pub v_diag: ComplexMatrix,
}

impl PerturbationBlocks {
    /// `P V Q` alone.
    pub fn upper_off(&self, partition: &BandPartition) -> ComplexMatrix {
        &(partition.projector() * &self.v_off) * &partition.complement_projector()
    }
}

/// Builds the partition for a contiguous run of eigenindices of `H₀`.
pub fn band_partition(spec: &SpectralDecomposition, band_indices: &[usize]) -> Result<BandPartition, BandError> {
    let eigs = spec.eigenvalues();
    let n = eigs.len();
    let (&lo, &hi) = match (band_indices.first(), band_indices.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(BandError::EmptyBand),
    };
    if band_indices.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(BandError::NotContiguous);
    }
    if hi >= n {
        return Err(BandError::IndexOutOfRange { index: hi, dim: n });
    }
    check_isolated(eigs, lo, hi)?;
    let delta_down = if lo == 0 { f64::INFINITY } else { eigs[lo] - eigs[lo - 1] };
    let delta_up = if hi + 1 == n { f64::INFINITY } else { eigs[hi + 1] - eigs[hi] };
    let vectors = spec.eigenvectors();
    Ok(BandPartition {
        indices: band_indices.to_vec(),
        basis: vectors.select_columns(band_indices),
        h0_vectors: vectors.clone(),
        delta_up,
        delta_down,
        projector: OnceLock::new(),
        complement: OnceLock::new(),
    })
}

impl BandPartition {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of levels in the band (`tr P`).
    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    /// Full Hilbert-space dimension.
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn delta_up(&self) -> f64 {
        self.delta_up
    }

    pub fn delta_down(&self) -> f64 {
        self.delta_down
    }

    /// `Δ₀ = min{Δ_u, Δ_d}`.
    pub fn delta0(&self) -> f64 {
        self.delta_up.min(self.delta_down)
    }

    /// Orthonormal band eigenvectors of `H₀` as columns (`dim × rank`).
    pub fn basis(&self) -> &ComplexMatrix {
        &self.basis
    }

    /// Orthonormal eigenvectors of `H₀` outside the band.
    pub fn complement_basis(&self) -> &ComplexMatrix {
        self.complement.get_or_init(|| {
            let outside: Vec<usize> = (0..self.dim()).filter(|i| !self.indices.contains(i)).collect();
            self.h0_vectors.select_columns(&outside)
        })
    }

    pub fn projector(&self) -> &ComplexMatrix {
        self.projector.get_or_init(|| self.basis.matmul_adjoint(&self.basis))
    }

    pub fn complement_projector(&self) -> ComplexMatrix {
        &ComplexMatrix::identity(self.dim()) - self.projector()
    }

    /// `Π† M Π`: the band block of a full-space operator in band coordinates.
    pub fn restrict(&self, m: &ComplexMatrix) -> ComplexMatrix {
        self.basis.adjoint_matmul(&(m * &self.basis))
    }

    /// Band block of `M` as a full-space operator: `P M P`.
    pub fn sandwich(&self, m: &ComplexMatrix) -> ComplexMatrix {
        let p = self.projector();
        &(p * m) * p
    }

    pub fn decompose(&self, v: &HermitianOperator) -> PerturbationBlocks {
        let p = self.projector();
        let q = self.complement_projector();
        let v = v.matrix();
        let pv = p * v;
        let qv = &q * v;
        let v_p = &pv * p;
        let v_q = &qv * &q;
        let v_off = &(&pv * &q) + &(&qv * p);
        let v_diag = &v_p + &v_q;
        PerturbationBlocks { v_p, v_q, v_off, v_diag }
    }
}

/// `H_P = PHP` as a full-space operator (zero on the complement).
pub fn projected_hamiltonian(h: &HermitianOperator, p: &ComplexMatrix) -> Result<HermitianOperator, BandError> {
    let php = p.try_matmul(h.matrix())?.try_matmul(p)?;
    Ok(HermitianOperator::from_hermitian_part(&php)?)
}

/// Gap between the band and complement spectra of `H₁ = H₀ + V_diag`,
/// with the Weyl lower bound `Δ₀ − 2‖V‖`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapCertificate {
    pub delta: f64,
    pub delta0: f64,
    pub norm_v: f64,
    pub weyl_lower: f64,
    pub satisfied: bool,
}

/// Spectra of the two diagonal blocks of a block-diagonal `H₁`, each in
/// ascending order together with eigenvectors expressed in the full space.
#[derive(Clone, Debug)]
pub struct BlockSpectra {
    pub band_energies: Vec<f64>,
    pub band_vectors: ComplexMatrix,
    pub complement_energies: Vec<f64>,
    pub complement_vectors: ComplexMatrix,
}

impl BlockSpectra {
    /// Smallest `|E_p − E_q|` over band/complement pairs.
    pub fn gap(&self) -> f64 {
        let q = &self.complement_energies;
        self.band_energies
            .iter()
            .map(|&e| {
                let k = q.partition_point(|&x| x < e);
                let above = q.get(k).map_or(f64::INFINITY, |&x| x - e);
                let below = k.checked_sub(1).map_or(f64::INFINITY, |j| e - q[j]);
                above.min(below)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Diagonalizes the band and complement blocks of `H₁` after checking that
/// the off-diagonal block vanishes to `1e-8 · ‖H₁‖`.
pub fn block_spectra(h1: &HermitianOperator, partition: &BandPartition) -> Result<BlockSpectra, BandError> {
    let pi = partition.basis();
    let pi_q = partition.complement_basis();
    let h1m = h1.matrix();
    let off = pi.adjoint_matmul(&(h1m * pi_q));
    let defect = operator_norm(&off)?;
    let tolerance = 1e-8 * h1.norm()?.max(ABS_FLOOR);
    if defect > tolerance {
        return Err(BandError::NotBlockDiagonal { defect, tolerance });
    }
    let block = |basis: &ComplexMatrix| -> Result<(Vec<f64>, ComplexMatrix), BandError> {
        if basis.ncols() == 0 {
            return Ok((Vec::new(), ComplexMatrix::zeros(basis.nrows(), 0)));
        }
        let local = basis.adjoint_matmul(&(h1m * basis));
        let spec = crate::linalg::eig_hermitian(&HermitianOperator::from_hermitian_part(&local)?)?;
        Ok((spec.eigenvalues().to_vec(), basis * spec.eigenvectors()))
    };
    let (band_energies, band_vectors) = block(pi)?;
    let (complement_energies, complement_vectors) = block(pi_q)?;
    Ok(BlockSpectra {
        band_energies,
        band_vectors,
        complement_energies,
        complement_vectors,
    })
}

/// Gap certificate for `H₁` relative to the partition.
pub fn block_spectral_gap(
    h1: &HermitianOperator,
    partition: &BandPartition,
    norm_v: f64,
) -> Result<GapCertificate, BandError> {
    let delta = block_spectra(h1, partition)?.gap();
    Ok(gap_certificate(delta, partition.delta0(), norm_v))
}

pub(crate) fn gap_certificate(delta: f64, delta0: f64, norm_v: f64) -> GapCertificate {
    let weyl_lower = delta0 - 2.0 * norm_v;
    GapCertificate {
        delta,
        delta0,
        norm_v,
        weyl_lower,
        satisfied: delta >= weyl_lower - 1e-9,
    }
}

/// Rounded `tr P` as an integer.
pub fn projector_rank(p: &ComplexMatrix) -> usize {
    let tr: c64 = p.trace();
    tr.re.round() as usize
}
