//! Hamiltonians, perturbations and observables for the few-level,
//! random-band and Rydberg-chain experiments.
//!
//! Spin-1/2 sites use the ordered basis `(|g⟩, |e⟩)` with `σ^z|e⟩ = +|e⟩`,
//! so `(1 + σ^z)/2` counts excitations. On a chain, site 0 is the most
//! significant tensor factor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::banding::BandSelector;
use crate::linalg::{
    c64, commutator, hermitian_norm, operator_norm, pauli, ComplexMatrix, HermitianOperator,
    LinalgError, SparseIsometry,
};

/// Largest chain length handled by dense diagonalization.
pub const MAX_CHAIN_LENGTH: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("chain length {length} exceeds the dense-diagonalization budget of {max} sites")]
    DimensionBudgetExceeded { length: usize, max: usize },
    #[error("sampled bands {lower} and {upper} overlap")]
    BandOverlap { lower: usize, upper: usize },
    #[error("local term {label:?}: {reason}")]
    InvalidTerm { label: String, reason: String },
    #[error("unperturbed terms {first:?} and {second:?} do not commute (defect {defect:e})")]
    NonCommuting {
        first: String,
        second: String,
        defect: f64,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

type Result<T, E = ModelError> = std::result::Result<T, E>;

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TwoLevel,
    FourLevel,
    RandomBanded,
    Pxp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [Self::TwoLevel, Self::FourLevel, Self::RandomBanded, Self::Pxp];

    pub fn name(self) -> &'static str {
        match self {
            Self::TwoLevel => "two_level",
            Self::FourLevel => "four_level",
            Self::RandomBanded => "random_banded",
            Self::Pxp => "pxp",
        }
    }
}

/// Parameter record carried along with every model for reporting.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ModelParameters {
    /// Gap of the selected band in the sampled `H₀` spectrum.
    pub delta0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bands: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels_per_band: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_ratio: Option<f64>,
}

/// `H = H₀ + V` together with a unit-norm observable and the band to
/// constrain to.
#[derive(Clone, Debug)]
pub struct ModelInstance {
    pub kind: ModelKind,
    pub h0: HermitianOperator,
    pub v: HermitianOperator,
    pub observable: ComplexMatrix,
    pub band: BandSelector,
    pub params: ModelParameters,
}

impl ModelInstance {
    pub fn hamiltonian(&self) -> HermitianOperator {
        &self.h0 + &self.v
    }

    pub fn dim(&self) -> usize {
        self.h0.dim()
    }

    /// True when the observable equals its adjoint entrywise.
    pub fn observable_is_hermitian(&self) -> bool {
        let o = &self.observable;
        (&o.adjoint() - o).max_abs() <= 1e-14 * o.max_abs().max(1.0)
    }
}

/// An operator acting on an ordered set of sites.
#[derive(Clone, Debug)]
pub struct LocalTerm {
    support: Vec<usize>,
    operator: ComplexMatrix,
    label: String,
}

impl LocalTerm {
    /// `support` must be strictly increasing, nonempty and inside `0..length`;
    /// `operator` must be `2^|support|` square.
    pub fn new(support: Vec<usize>, operator: ComplexMatrix, label: impl Into<String>, length: usize) -> Result<Self> {
        let label = label.into();
        let invalid = |reason: String| ModelError::InvalidTerm {
            label: label.clone(),
            reason,
        };
        if support.is_empty() {
            return Err(invalid("empty support".into()));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("support must be strictly increasing".into()));
        }
        if let Some(&s) = support.iter().find(|&&s| s >= length) {
            return Err(invalid(format!("site {s} outside a chain of {length}")));
        }
        let local = 1usize << support.len();
        if operator.shape() != (local, local) {
            return Err(invalid(format!("operator is {:?}, expected {local}x{local}", operator.shape())));
        }
        Ok(Self { support, operator, label })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn operator(&self) -> &ComplexMatrix {
        &self.operator
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Adds this term, embedded on a chain of `length` sites, into `full`.
    pub fn add_embedded(&self, full: &mut ComplexMatrix, length: usize) {
        let n = 1usize << length;
        assert_eq!(full.shape(), (n, n));
        let k = self.support.len();
        let bit = |site: usize| length - 1 - site;
        let mask: usize = self.support.iter().map(|&s| 1usize << bit(s)).sum();
        let deposit = |local: usize| -> usize {
            (0..k)
                .filter(|&m| local >> (k - 1 - m) & 1 == 1)
                .map(|m| 1usize << bit(self.support[m]))
                .sum()
        };
        let extract = |state: usize| -> usize {
            (0..k).fold(0, |acc, m| (acc << 1) | (state >> bit(self.support[m]) & 1))
        };
        let images: Vec<usize> = (0..1usize << k).map(deposit).collect();
        for col in 0..n {
            let b = extract(col);
            let rest = col & !mask;
            for (a, &image) in images.iter().enumerate() {
                let value = self.operator[(a, b)];
                if value != c64::new(0.0, 0.0) {
                    full[(rest | image, col)] += value;
                }
            }
        }
    }

    /// The term as a dense operator on `length` sites.
    pub fn embed(&self, length: usize) -> ComplexMatrix {
        let n = 1usize << length;
        let mut full = ComplexMatrix::zeros(n, n);
        self.add_embedded(&mut full, length);
        full
    }
}

/// Sum of local terms as a dense operator.
pub fn assemble(terms: &[LocalTerm], length: usize) -> ComplexMatrix {
    let n = 1usize << length;
    let mut full = ComplexMatrix::zeros(n, n);
    for term in terms {
        term.add_embedded(&mut full, length);
    }
    full
}

/// Norm of `[A, B]` evaluated on the union of the two supports.
fn local_commutator_norm(a: &LocalTerm, b: &LocalTerm) -> Result<f64> {
    if a.support.iter().all(|s| !b.support.contains(s)) {
        return Ok(0.0);
    }
    let mut union: Vec<usize> = a.support.iter().chain(&b.support).copied().collect();
    union.sort_unstable();
    union.dedup();
    let relabel = |t: &LocalTerm| -> Result<LocalTerm> {
        let support = t
            .support
            .iter()
            .map(|s| union.iter().position(|u| u == s).expect("site in union"))
            .collect();
        LocalTerm::new(support, t.operator.clone(), t.label.clone(), union.len())
    };
    let (ea, eb) = (relabel(a)?.embed(union.len()), relabel(b)?.embed(union.len()));
    Ok(operator_norm(&commutator(&ea, &eb)?)?)
}

/// A spin-1/2 chain with `H₀` and `V` given as sums of local terms.
#[derive(Clone, Debug)]
pub struct LatticeModel {
    pub length: usize,
    pub local_dim: usize,
    pub h0_terms: Vec<LocalTerm>,
    pub v_terms: Vec<LocalTerm>,
}

impl LatticeModel {
    /// Checks that all `H₀` terms pairwise commute to within `1e-10`.
    pub fn new_commuting(length: usize, h0_terms: Vec<LocalTerm>, v_terms: Vec<LocalTerm>) -> Result<Self> {
        for (i, a) in h0_terms.iter().enumerate() {
            for b in &h0_terms[i + 1..] {
                let defect = local_commutator_norm(a, b)?;
                if defect > 1e-10 {
                    return Err(ModelError::NonCommuting {
                        first: a.label.clone(),
                        second: b.label.clone(),
                        defect,
                    });
                }
            }
        }
        Ok(Self {
            length,
            local_dim: 2,
            h0_terms,
            v_terms,
        })
    }

    pub fn h0(&self) -> ComplexMatrix {
        assemble(&self.h0_terms, self.length)
    }

    pub fn v(&self) -> ComplexMatrix {
        assemble(&self.v_terms, self.length)
    }

    pub fn local_interaction_strength(&self) -> Result<f64> {
        local_interaction_strength(&self.v_terms, self.length)
    }
}

/// `‖V‖⋆ = max_j Σ_{A ∋ j} ‖V_A‖`.
pub fn local_interaction_strength(terms: &[LocalTerm], length: usize) -> Result<f64> {
    let mut per_site = vec![0.0; length];
    for term in terms {
        let norm = operator_norm(term.operator())?;
        for &s in term.support() {
            if s >= length {
                return Err(ModelError::InvalidTerm {
                    label: term.label.clone(),
                    reason: format!("site {s} outside a chain of {length}"),
                });
            }
            per_site[s] += norm;
        }
    }
    Ok(per_site.into_iter().fold(0.0, f64::max))
}

/// Driven two-level atom: `H₀ = (Δ₀/2)σ^z`, `V = (Ω/2)σ^x`, `O = σ^x`,
/// band = ground level.
pub fn build_two_level(delta0: f64, omega: f64) -> Result<ModelInstance> {
    positive("delta0", delta0)?;
    positive("omega", omega)?;
    Ok(ModelInstance {
        kind: ModelKind::TwoLevel,
        h0: HermitianOperator::new(pauli::z().scale_real(delta0 / 2.0))?,
        v: HermitianOperator::new(pauli::x().scale_real(omega / 2.0))?,
        observable: pauli::x(),
        band: BandSelector::IndexRange { lo: 0, hi: 0 },
        params: ModelParameters {
            delta0,
            omega: Some(omega),
            ..Default::default()
        },
    })
}

/// Two atoms with only the first one driven:
/// `H₀ = (Δ₀/2)(σ^z₁ + σ^z₂)`, `V = (Ω/2)σ^x₁`,
/// `O = (σ^x₁σ^x₂ + σ^y₁σ^y₂)/2`, band = `{|ge⟩, |eg⟩}`.
pub fn build_four_level(delta0: f64, omega: f64) -> Result<ModelInstance> {
    positive("delta0", delta0)?;
    positive("omega", omega)?;
    let id = pauli::identity();
    let h0 = &pauli::z().kron(&id) + &id.kron(&pauli::z());
    let v = pauli::x().kron(&id);
    let o = &pauli::x().kron(&pauli::x()) + &pauli::y().kron(&pauli::y());
    Ok(ModelInstance {
        kind: ModelKind::FourLevel,
        h0: HermitianOperator::new(h0.scale_real(delta0 / 2.0))?,
        v: HermitianOperator::new(v.scale_real(omega / 2.0))?,
        observable: o.scale_real(0.5),
        band: BandSelector::IndexRange { lo: 1, hi: 2 },
        params: ModelParameters {
            delta0,
            omega: Some(omega),
            ..Default::default()
        },
    })
}

/// Draws from the Gaussian unitary ensemble, `(G + G†)/2` with i.i.d.
/// standard complex Gaussian entries.
pub fn gue_sample(rng: &mut impl Rng, dim: usize) -> Result<HermitianOperator> {
    let g = ComplexMatrix::from_fn(dim, dim, |_, _| {
        c64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    Ok(HermitianOperator::from_hermitian_part(&g)?)
}

fn unit_norm(h: HermitianOperator) -> Result<HermitianOperator> {
    let norm = hermitian_norm(&h)?;
    Ok(HermitianOperator::from_hermitian_part(&h.matrix().scale_real(1.0 / norm))?)
}

/// In-band level spread of the random model, in units of `‖V‖`.
pub const RANDOM_BAND_WIDTH: f64 = 1.0;

/// Random banded model: diagonal `H₀` with `n_bands` bands of
/// `levels_per_band` uniform levels of width 1 centred at
/// `k (gap_ratio + 1)`, unit-norm GUE `V` and `O`, middle band selected.
pub fn build_random_banded(seed: u64, n_bands: usize, levels_per_band: usize, gap_ratio: f64) -> Result<ModelInstance> {
    if n_bands < 2 {
        return Err(ModelError::InvalidParameter {
            name: "n_bands",
            value: n_bands as f64,
            reason: "need at least two bands",
        });
    }
    if levels_per_band < 1 {
        return Err(ModelError::InvalidParameter {
            name: "levels_per_band",
            value: levels_per_band as f64,
            reason: "need at least one level per band",
        });
    }
    if !(gap_ratio > 2.0 && gap_ratio.is_finite()) {
        return Err(ModelError::InvalidParameter {
            name: "gap_ratio",
            value: gap_ratio,
            reason: "must exceed 2 so perturbed bands stay separated",
        });
    }
    let w = RANDOM_BAND_WIDTH;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bands: Vec<Vec<f64>> = (0..n_bands)
        .map(|k| {
            let centre = k as f64 * (gap_ratio + w);
            let mut levels: Vec<f64> = (0..levels_per_band)
                .map(|_| centre + w * (rng.gen::<f64>() - 0.5))
                .collect();
            levels.sort_by(f64::total_cmp);
            levels
        })
        .collect();
    for k in 1..n_bands {
        if bands[k][0] <= bands[k - 1][levels_per_band - 1] {
            return Err(ModelError::BandOverlap { lower: k - 1, upper: k });
        }
    }
    let middle = n_bands / 2;
    let gap_below = bands[middle][0] - bands[middle - 1][levels_per_band - 1];
    let gap_above = bands
        .get(middle + 1)
        .map_or(f64::INFINITY, |b| b[0] - bands[middle][levels_per_band - 1]);
    let dim = n_bands * levels_per_band;
    let diag: Vec<f64> = bands.concat();
    let v = unit_norm(gue_sample(&mut rng, dim)?)?;
    let o = unit_norm(gue_sample(&mut rng, dim)?)?;
    Ok(ModelInstance {
        kind: ModelKind::RandomBanded,
        h0: HermitianOperator::new(ComplexMatrix::from_real_diagonal(&diag))?,
        v,
        observable: o.into_matrix(),
        band: BandSelector::IndexRange {
            lo: middle * levels_per_band,
            hi: (middle + 1) * levels_per_band - 1,
        },
        params: ModelParameters {
            delta0: gap_below.min(gap_above),
            seed: Some(seed),
            n_bands: Some(n_bands),
            levels_per_band: Some(levels_per_band),
            gap_ratio: Some(gap_ratio),
            ..Default::default()
        },
    })
}

fn check_chain_length(length: usize) -> Result<()> {
    if length > MAX_CHAIN_LENGTH {
        return Err(ModelError::DimensionBudgetExceeded {
            length,
            max: MAX_CHAIN_LENGTH,
        });
    }
    Ok(())
}

/// Rydberg chain with open boundaries:
/// `H₀ = (Δ₀/4) Σ_{j<L} (σ^z_j + 1)(σ^z_{j+1} + 1)`, `V = (Ω/2) Σ_j σ^x_j`,
/// `O = σ^y` on the first site, band = zero-energy subspace of `H₀`.
pub fn build_pxp_parent(length: usize, delta0: f64, omega: f64) -> Result<(ModelInstance, LatticeModel)> {
    if length < 2 {
        return Err(ModelError::InvalidParameter {
            name: "L",
            value: length as f64,
            reason: "chain needs at least two sites",
        });
    }
    check_chain_length(length)?;
    positive("delta0", delta0)?;
    positive("omega", omega)?;
    let id = pauli::identity();
    let excitation = &pauli::z() + &id;
    let pair = excitation.kron(&excitation).scale_real(delta0 / 4.0);
    let h0_terms = (0..length - 1)
        .map(|j| LocalTerm::new(vec![j, j + 1], pair.clone(), format!("blockade({j},{})", j + 1), length))
        .collect::<Result<Vec<_>>>()?;
    let drive = pauli::x().scale_real(omega / 2.0);
    let v_terms = (0..length)
        .map(|j| LocalTerm::new(vec![j], drive.clone(), format!("drive({j})"), length))
        .collect::<Result<Vec<_>>>()?;
    let lattice = LatticeModel::new_commuting(length, h0_terms, v_terms)?;
    let observable = LocalTerm::new(vec![0], pauli::y(), "sigma_y(0)", length)?.embed(length);
    let model = ModelInstance {
        kind: ModelKind::Pxp,
        h0: HermitianOperator::new(lattice.h0())?,
        v: HermitianOperator::new(lattice.v())?,
        observable,
        band: BandSelector::ZeroSubspace,
        params: ModelParameters {
            delta0,
            omega: Some(omega),
            length: Some(length),
            ..Default::default()
        },
    };
    Ok((model, lattice))
}

/// Even and odd sectors of the site reflection `j → L−1−j`, as isometries
/// on the computational basis.
pub fn reflection_sectors(length: usize) -> Result<[SparseIsometry; 2]> {
    check_chain_length(length)?;
    let dim = 1usize << length;
    let reflect = |s: usize| s.reverse_bits() >> (usize::BITS as usize - length);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut even = Vec::new();
    let mut odd = Vec::new();
    for s in 0..dim {
        let r = reflect(s);
        if r == s {
            even.push(vec![(s, c64::new(1.0, 0.0))]);
        } else if s < r {
            even.push(vec![(s, c64::new(h, 0.0)), (r, c64::new(h, 0.0))]);
            odd.push(vec![(s, c64::new(h, 0.0)), (r, c64::new(-h, 0.0))]);
        }
    }
    Ok([SparseIsometry::new(dim, even)?, SparseIsometry::new(dim, odd)?])
}

fn no_adjacent_excitations(state: usize) -> bool {
    state & (state >> 1) == 0
}

/// Diagonal projector onto basis states without adjacent excitations.
pub fn pxp_constraint_projector(length: usize) -> Result<ComplexMatrix> {
    check_chain_length(length)?;
    let diag: Vec<f64> = (0..1usize << length)
        .map(|s| if no_adjacent_excitations(s) { 1.0 } else { 0.0 })
        .collect();
    Ok(ComplexMatrix::from_real_diagonal(&diag))
}

/// Number of length-`L` bit strings without adjacent ones.
pub fn constrained_dimension(length: usize) -> usize {
    (0..1usize << length).filter(|&s| no_adjacent_excitations(s)).count()
}
