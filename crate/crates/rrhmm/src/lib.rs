//! Spectral learning and inference for reduced-rank hidden Markov models.
//!
//! A reduced-rank HMM has `m` discrete states but a rank-`k` transition
//! matrix, so its belief dynamics evolve in a k-dimensional subspace. This
//! crate estimates a k-dimensional observable-operator model directly from
//! observation statistics (an SVD of the bigram co-occurrence matrix followed
//! by linear regressions), runs filtering, prediction, and simulation
//! entirely with the learned k x k operators, and verifies everything against
//! an exact forward-algorithm oracle on the generating model.
//!
//! The pipeline is: sample or load data ([`hmm`], [`io`]), accumulate moment
//! statistics ([`moments`]), learn the observable model ([`spectral`]), run
//! recursive inference ([`inference`] or, for real-valued observations,
//! [`kde`]), and measure recovery quality and theoretical diagnostics
//! ([`diagnostics`]).
//!
//! Data-parallel inner loops (sampling, counting, experiment trials) use
//! rayon when the default `parallel` feature is enabled and fall back to
//! sequential iteration without it; results are bit-identical either way.

pub mod builtin;
pub mod diagnostics;
pub mod error;
pub mod hmm;
pub mod inference;
pub mod io;
pub mod kde;
pub mod moments;
pub mod spectral;

pub mod rng;

mod linalg;

pub use error::{Error, Result};

/// Cap the global rayon thread pool from the `SPECTRAL_RRHMM_THREADS`
/// environment variable. A no-op when the variable is unset, invalid, or the
/// crate was built without the `parallel` feature. Returns the applied cap.
pub fn configure_threads_from_env() -> Option<usize> {
    let threads: usize = std::env::var("SPECTRAL_RRHMM_THREADS").ok()?.parse().ok()?;
    if threads == 0 {
        return None;
    }
    #[cfg(feature = "parallel")]
    {
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Some(threads)
}
