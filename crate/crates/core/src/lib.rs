//! Numerics for band-projected quantum dynamics.
//!
//! Builds gapped Hamiltonians `H = H₀ + V`, block-diagonalizes them with a
//! Schrieffer-Wolff transformation, and measures how far the Heisenberg
//! evolution of an observable inside an isolated band of `H₀` drifts from
//! the evolution generated by the projected Hamiltonian `PHP`.

pub mod banding;
pub mod dynamics;
pub mod linalg;
pub mod manybody;
pub mod models;
pub mod swt;

pub use banding::{BandPartition, BandSelector, GapCertificate};
pub use dynamics::{ErrorTrace, TimeGrid};
pub use linalg::{c64, ComplexMatrix, HermitianOperator, SpectralDecomposition};
pub use manybody::{CollapseReport, GrowthFit};
pub use models::{ModelInstance, ModelKind, ModelParameters};
pub use swt::{Certificate, SwtResult};

/// Caps the worker threads used by the rayon pool and by the dense kernels.
///
/// Must run before any parallel work; the rayon global pool can only be
/// configured once per process.
pub fn configure_threads(threads: usize) -> Result<(), rayon::ThreadPoolBuildError> {
    let threads = threads.max(1);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    faer::set_global_parallelism(if threads == 1 { faer::Par::Seq } else { faer::Par::rayon(threads) });
    Ok(())
}
