//! Schrieffer-Wolff block diagonalization.
//!
//! The generator `T` is anti-Hermitian and block-off-diagonal and solves
//! `T H_Q − H_P T = −PVQ` with `H₁ = H₀ + V_diag`. Then
//! `e^T H e^{−T} = H₁ + V′`, where the remainder has the series
//! `V′ = Σ_{n≥1} n/(n+1)! ad_T^n V_off`.

use serde::Serialize;
use thiserror::Error;

use crate::banding::{
    band_partition, block_spectra, block_spectral_gap, detect_band, BandError, BandPartition, GapCertificate,
    PerturbationBlocks,
};
use crate::linalg::{
    commutator, eig_hermitian, exp_antihermitian, operator_norm, ComplexMatrix, HermitianOperator,
    LinalgError, ABS_FLOOR,
};
use crate::models::ModelInstance;

/// Default slack `c` in `‖V′‖ ≤ ‖T‖‖V‖ (1 + c‖V‖/Δ₀)`.
pub const REMAINDER_SLACK: f64 = 4.0;

/// The remainder check only applies for `Δ₀ ≥ 10‖V‖`.
pub const LARGE_GAP_RATIO: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwtError {
    #[error("resonant Sylvester denominator |E_p - E_q| = {gap:e} (band level {band}, complement level {complement})")]
    ZeroGap { gap: f64, band: usize, complement: usize },
    #[error("large-gap regime violated: delta0 = {delta0} < {ratio} * |V| = {}", ratio * norm_v)]
    RegimeViolation { delta0: f64, norm_v: f64, ratio: f64 },
    #[error(transparent)]
    Band(#[from] BandError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

type Result<T, E = SwtError> = std::result::Result<T, E>;

/// One side-by-side inequality check, `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Certificate {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            holds: lhs <= rhs + tolerance,
        }
    }

    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Clone, Debug)]
pub struct SwtResult {
    /// `H₁ = H₀ + V_diag`.
    pub h1: HermitianOperator,
    pub generator: ComplexMatrix,
    pub unitary: ComplexMatrix,
    pub v_prime: ComplexMatrix,
    pub norm_t: f64,
    pub norm_v_prime: f64,
    pub norm_pvq: f64,
    pub norm_v_off: f64,
    /// Block gap `Δ` of `H₁` used in the generator bound.
    pub delta: f64,
    /// `‖PVQ‖ / Δ`.
    pub bound_t: f64,
    /// `‖T‖ ‖V‖`.
    pub bound_v_prime: f64,
    /// `‖T H_Q − H_P T + PVQ‖`.
    pub sylvester_residual: f64,
    /// `‖e^T H e^{−T} − H₁ − V′‖`.
    pub identity_defect: f64,
}

/// Solves the Sylvester equation in the eigenbases of the two diagonal
/// blocks of `H₁`. The PQ block is `(PVQ)_{pq} / (E_p − E_q)`; the QP block
/// follows from anti-Hermiticity.
pub fn solve_sylvester(h1: &HermitianOperator, partition: &BandPartition, v_off: &ComplexMatrix) -> Result<ComplexMatrix> {
    let blocks = block_spectra(h1, partition)?;
    let tolerance = 1e-12 * h1.norm()?.max(ABS_FLOOR);
    let xp = &blocks.band_vectors;
    let xq = &blocks.complement_vectors;
    let coupling = xp.adjoint_matmul(&(v_off * xq));
    let mut scaled = coupling;
    for (p, &ep) in blocks.band_energies.iter().enumerate() {
        for (q, &eq) in blocks.complement_energies.iter().enumerate() {
            let denom = ep - eq;
            if denom.abs() <= tolerance {
                return Err(SwtError::ZeroGap {
                    gap: denom.abs(),
                    band: p,
                    complement: q,
                });
            }
            scaled[(p, q)] = scaled[(p, q)] / denom;
        }
    }
    let upper = (xp * &scaled).matmul_adjoint(xq);
    Ok(&upper - &upper.adjoint())
}

/// `‖T H_Q − H_P T + PVQ‖` with the blocks taken as full-space operators.
pub fn sylvester_residual(
    t: &ComplexMatrix,
    h1: &HermitianOperator,
    partition: &BandPartition,
    v_off: &ComplexMatrix,
) -> Result<f64> {
    let p = partition.projector();
    let q = partition.complement_projector();
    let h = h1.matrix();
    let h_p = &(p * h) * p;
    let h_q = &(&q * h) * &q;
    let pvq = &(p * v_off) * &q;
    let t_pq = &(p * t) * &q;
    let residual = &(&(&t_pq * &h_q) - &(&h_p * &t_pq)) + &pvq;
    Ok(operator_norm(&residual)?)
}

/// `V′ = e^T H e^{−T} − H₁`, returned as its Hermitian part.
pub fn v_prime_exact(h: &HermitianOperator, h1: &HermitianOperator, t: &ComplexMatrix) -> Result<ComplexMatrix> {
    let s = exp_antihermitian(t)?;
    let rotated = crate::linalg::conjugate(&s, h.matrix())?;
    Ok((&rotated - h1.matrix()).hermitian_part())
}

/// Partial sum `Σ_{n=1}^{N} n/(n+1)! ad_T^n V_off`.
pub fn v_prime_series(t: &ComplexMatrix, v_off: &ComplexMatrix, order: usize) -> Result<ComplexMatrix> {
    let mut term = v_off.clone();
    let mut sum = ComplexMatrix::zeros(v_off.nrows(), v_off.ncols());
    let mut factorial = 1.0; // (n+1)!
    for n in 1..=order {
        factorial *= (n + 1) as f64;
        term = commutator(t, &term)?;
        sum = &sum + &term.scale_real(n as f64 / factorial);
    }
    Ok(sum)
}

/// `Σ_{n>N} n/(n+1)! (2‖T‖)^n ‖V_off‖`, the tail left by [`v_prime_series`].
pub fn series_tail_bound(norm_t: f64, norm_v_off: f64, order: usize) -> f64 {
    let x = 2.0 * norm_t;
    let mut coeff = 1.0; // x^n / (n+1)!
    let mut tail = 0.0;
    for n in 1..=order + 200 {
        coeff *= x / (n + 1) as f64;
        if n > order {
            let term = n as f64 * coeff;
            tail += term;
            if term < 1e-18 * tail.max(1e-300) {
                break;
            }
        }
    }
    tail * norm_v_off
}

/// Full transformation for `H = H₁ + V_off`, given the partition, the
/// perturbation blocks and the block gap.
pub fn schrieffer_wolff(
    h: &HermitianOperator,
    partition: &BandPartition,
    blocks: &PerturbationBlocks,
    gap: &GapCertificate,
) -> Result<SwtResult> {
    let h1 = HermitianOperator::from_hermitian_part(&(h.matrix() - &blocks.v_off))?;
    let generator = solve_sylvester(&h1, partition, &blocks.v_off)?;
    let unitary = exp_antihermitian(&generator)?;
    let rotated = crate::linalg::conjugate(&unitary, h.matrix())?;
    let v_prime = (&rotated - h1.matrix()).hermitian_part();
    let identity_defect = operator_norm(&(&(&rotated - h1.matrix()) - &v_prime))?;
    let norm_t = operator_norm(&generator)?;
    let norm_v_prime = HermitianOperator::new(v_prime.clone())?.norm()?;
    let norm_pvq = operator_norm(&blocks.upper_off(partition))?;
    let norm_v_off = HermitianOperator::from_hermitian_part(&blocks.v_off)?.norm()?;
    let sylvester_residual = sylvester_residual(&generator, &h1, partition, &blocks.v_off)?;
    Ok(SwtResult {
        h1,
        generator,
        unitary,
        v_prime,
        norm_t,
        norm_v_prime,
        norm_pvq,
        norm_v_off,
        delta: gap.delta,
        bound_t: if gap.delta > 0.0 { norm_pvq / gap.delta } else { f64::INFINITY },
        bound_v_prime: norm_t * gap.norm_v,
        sylvester_residual,
        identity_defect,
    })
}

/// Everything needed to transform one model: its band partition, the
/// blocks of `V`, the gap certificate and the transformation itself.
#[derive(Debug)]
pub struct ModelSwt {
    pub partition: BandPartition,
    pub blocks: PerturbationBlocks,
    pub norm_v: f64,
    pub gap: GapCertificate,
    pub swt: SwtResult,
}

/// Diagonalizes `H₀`, resolves the model's band and runs
/// [`schrieffer_wolff`].
pub fn transform_model(model: &ModelInstance) -> Result<ModelSwt> {
    let spec = eig_hermitian(&model.h0)?;
    let indices = detect_band(&spec, &model.band)?;
    let partition = band_partition(&spec, &indices)?;
    let blocks = partition.decompose(&model.v);
    let norm_v = model.v.norm()?;
    let h1 = HermitianOperator::from_hermitian_part(&(model.h0.matrix() + &blocks.v_diag))?;
    let gap = block_spectral_gap(&h1, &partition, norm_v)?;
    let swt = schrieffer_wolff(&model.hamiltonian(), &partition, &blocks, &gap)?;
    Ok(ModelSwt {
        partition,
        blocks,
        norm_v,
        gap,
        swt,
    })
}

/// `‖T‖ ≤ ‖PVQ‖ / Δ`.
pub fn certify_generator(swt: &SwtResult, gap: &GapCertificate) -> Certificate {
    let rhs = if gap.delta > 0.0 { swt.norm_pvq / gap.delta } else { f64::INFINITY };
    Certificate::new("generator_norm", swt.norm_t, rhs, 1e-9)
}

/// `‖V′‖ ≤ ‖T‖‖V‖ (1 + c‖V‖/Δ₀)` in the large-gap regime `Δ₀ ≥ 10‖V‖`.
pub fn certify_remainder(swt: &SwtResult, delta0: f64, norm_v: f64, slack: f64) -> Result<Certificate> {
    if delta0 < LARGE_GAP_RATIO * norm_v {
        return Err(SwtError::RegimeViolation {
            delta0,
            norm_v,
            ratio: LARGE_GAP_RATIO,
        });
    }
    let correction = if norm_v == 0.0 { 1.0 } else { 1.0 + slack * norm_v / delta0 };
    Ok(Certificate::new(
        "remainder_norm",
        swt.norm_v_prime,
        swt.norm_t * norm_v * correction,
        1e-12,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::banding::{band_partition, block_spectral_gap, detect_band};
    use crate::linalg::{eig_hermitian, pauli};
    use crate::models::{build_two_level, ModelInstance};
    use approx::assert_abs_diff_eq;

    struct Setup {
        h: HermitianOperator,
        partition: BandPartition,
        blocks: PerturbationBlocks,
        gap: GapCertificate,
        norm_v: f64,
    }

    fn setup(model: &ModelInstance) -> Setup {
        let spec = eig_hermitian(&model.h0).unwrap();
        let indices = detect_band(&spec, &model.band).unwrap();
        let partition = band_partition(&spec, &indices).unwrap();
        let blocks = partition.decompose(&model.v);
        let norm_v = model.v.norm().unwrap();
        let h1 = HermitianOperator::from_hermitian_part(&(model.h0.matrix() + &blocks.v_diag)).unwrap();
        let gap = block_spectral_gap(&h1, &partition, norm_v).unwrap();
        Setup {
            h: model.hamiltonian(),
            partition,
            blocks,
            gap,
            norm_v,
        }
    }

    #[test]
    fn scalar_sylvester() {
        // H_P = (0), H_Q = (Δ₀), PVQ = (v)  ⇒  T_pq = −v/Δ₀.
        let (delta0, v) = (4.0, 0.3);
        let h0 = HermitianOperator::new(ComplexMatrix::from_real_diagonal(&[0.0, delta0])).unwrap();
        let spec = eig_hermitian(&h0).unwrap();
        let partition = band_partition(&spec, &[0]).unwrap();
        let v_off = pauli::x().scale_real(v);
        let t = solve_sylvester(&h0, &partition, &v_off).unwrap();
        assert_abs_diff_eq!(t[(0, 1)].re, -v / delta0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[(1, 0)].re, v / delta0, epsilon = 1e-15);
        assert!(sylvester_residual(&t, &h0, &partition, &v_off).unwrap() < 1e-10 * v);
    }

    #[test]
    fn two_level_generator_closed_form() {
        let (delta0, omega) = (10.0, 1.0);
        let s = setup(&build_two_level(delta0, omega).unwrap());
        let swt = schrieffer_wolff(&s.h, &s.partition, &s.blocks, &s.gap).unwrap();
        // T = −(Ω/2Δ₀)(|g⟩⟨e| − |e⟩⟨g|)
        let a = omega / (2.0 * delta0);
        assert_abs_diff_eq!(swt.generator[(0, 1)].re, -a, epsilon = 1e-15);
        assert_abs_diff_eq!(swt.generator[(1, 0)].re, a, epsilon = 1e-15);
        assert_abs_diff_eq!(swt.norm_t, a, epsilon = 1e-15);
        assert!(swt.sylvester_residual <= 1e-10 * s.norm_v);

        let cert = certify_generator(&swt, &s.gap);
        assert_abs_diff_eq!(cert.lhs, a, epsilon = 1e-15);
        assert_abs_diff_eq!(cert.rhs, a, epsilon = 1e-15);
        assert!(cert.holds);

        // ‖ad_T‖ ≤ 2‖T‖: ‖V′‖ ≤ Σ n/(n+1)! (2‖T‖)^n ‖V‖ ≤ 2‖T‖‖V‖/(1 − 2‖T‖).
        let x = 2.0 * swt.norm_t;
        assert!(swt.norm_v_prime <= x * s.norm_v / (1.0 - x));

        let rem = certify_remainder(&swt, delta0, s.norm_v, REMAINDER_SLACK).unwrap();
        // 1/20 · 1/2 · (1 + 4 · 0.5/10)
        assert_abs_diff_eq!(rem.rhs, 0.03, epsilon = 1e-15);
        assert!(rem.holds);
        assert!(swt.identity_defect <= 1e-10 * s.h.norm().unwrap());
    }

    #[test]
    fn series_converges_to_exact_remainder() {
        let s = setup(&build_two_level(10.0, 1.0).unwrap());
        let swt = schrieffer_wolff(&s.h, &s.partition, &s.blocks, &s.gap).unwrap();
        let exact = v_prime_exact(&s.h, &swt.h1, &swt.generator).unwrap();
        assert!(operator_norm(&(&exact - &swt.v_prime)).unwrap() < 1e-14);

        let first = v_prime_series(&swt.generator, &s.blocks.v_off, 1).unwrap();
        let half = commutator(&swt.generator, &s.blocks.v_off).unwrap().scale_real(0.5);
        assert!(operator_norm(&(&first - &half)).unwrap() < 1e-16);

        let mut previous = f64::INFINITY;
        for n in 1..=20 {
            let approx = v_prime_series(&swt.generator, &s.blocks.v_off, n).unwrap();
            let err = operator_norm(&(&approx - &exact)).unwrap();
            let tail = series_tail_bound(swt.norm_t, swt.norm_v_off, n);
            assert!(err <= tail + 1e-10, "order {n}: {err} > {tail}");
            if n > 3 {
                assert!(err <= previous + 1e-12);
            }
            previous = err;
        }
        assert!(previous <= 1e-12);
    }

    #[test]
    fn zero_perturbation_gives_zero_generator() {
        let h0 = HermitianOperator::new(ComplexMatrix::from_real_diagonal(&[-5.0, 0.0, 5.0])).unwrap();
        let spec = eig_hermitian(&h0).unwrap();
        let partition = band_partition(&spec, &[1]).unwrap();
        let zero = HermitianOperator::new(ComplexMatrix::zeros(3, 3)).unwrap();
        let blocks = partition.decompose(&zero);
        let gap = block_spectral_gap(&h0, &partition, 0.0).unwrap();
        let swt = schrieffer_wolff(&h0, &partition, &blocks, &gap).unwrap();
        assert_eq!(swt.norm_t, 0.0);
        assert!(certify_generator(&swt, &gap).holds);
        let rem = certify_remainder(&swt, 5.0, 0.0, REMAINDER_SLACK).unwrap();
        assert_eq!((rem.lhs, rem.rhs), (0.0, 0.0));
        assert!(rem.holds);
        let series = v_prime_series(&swt.generator, &blocks.v_off, 7).unwrap();
        assert_eq!(series.max_abs(), 0.0);
        // no rotation: V′ = H − H₁ = V_off
        let vp = v_prime_exact(&h0, &h0, &ComplexMatrix::zeros(3, 3)).unwrap();
        assert_eq!(vp.max_abs(), 0.0);
    }

    #[test]
    fn unrotated_remainder_is_v_off() {
        let s = setup(&build_two_level(10.0, 1.0).unwrap());
        let h1 = HermitianOperator::from_hermitian_part(&(s.h.matrix() - &s.blocks.v_off)).unwrap();
        let vp = v_prime_exact(&s.h, &h1, &ComplexMatrix::zeros(2, 2)).unwrap();
        assert!(operator_norm(&(&vp - &s.blocks.v_off)).unwrap() < 1e-15);
    }

    #[test]
    fn resonance_is_an_error() {
        // Band level at 0 and a complement level at 0 after V_diag shifts.
        let h1 = HermitianOperator::new(ComplexMatrix::from_real_diagonal(&[0.0, 0.0])).unwrap();
        let h0 = HermitianOperator::new(ComplexMatrix::from_real_diagonal(&[0.0, 1.0])).unwrap();
        let spec = eig_hermitian(&h0).unwrap();
        let partition = band_partition(&spec, &[0]).unwrap();
        let v_off = pauli::x();
        assert!(matches!(
            solve_sylvester(&h1, &partition, &v_off),
            Err(SwtError::ZeroGap { .. })
        ));
    }

    #[test]
    fn remainder_check_outside_regime() {
        let s = setup(&build_two_level(3.0, 1.0).unwrap());
        let swt = schrieffer_wolff(&s.h, &s.partition, &s.blocks, &s.gap).unwrap();
        assert!(matches!(
            certify_remainder(&swt, 3.0, 1.0, REMAINDER_SLACK),
            Err(SwtError::RegimeViolation { .. })
        ));
    }

    #[test]
    fn generator_is_block_off_diagonal_and_antihermitian() {
        let s = setup(&crate::models::build_random_banded(3, 3, 4, 10.0).unwrap());
        let swt = schrieffer_wolff(&s.h, &s.partition, &s.blocks, &s.gap).unwrap();
        let t = &swt.generator;
        assert!(operator_norm(&(t + &t.adjoint())).unwrap() < 1e-14);
        let p = s.partition.projector();
        let q = s.partition.complement_projector();
        assert!(operator_norm(&(&(p * t) * p)).unwrap() <= 1e-12);
        assert!(operator_norm(&(&(&q * t) * &q)).unwrap() <= 1e-12);
        let gram = swt.unitary.adjoint_matmul(&swt.unitary);
        assert!(operator_norm(&(&gram - &ComplexMatrix::identity(12))).unwrap() < 1e-10);
    }
}
