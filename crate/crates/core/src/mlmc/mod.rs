//! Randomized multilevel estimator.
//!
//! A single term samples `(l, p)`, runs Procedure 1 (at `l_min`) or
//! Procedure 2 (above it) for `T_p` iterations and returns the weighted
//! difference of iterates. Averaging independent terms estimates the
//! level-`L` maximizer.

mod randomization;
mod replicate;
mod term;

pub use randomization::{build_randomization, RandomizationScheme};
pub use replicate::{
    aggregate, mse_benchmark, reference_mle, run_replicates, run_terms, BenchmarkResult, BenchmarkRow,
    ReferenceEstimate, Replicates,
};
pub use term::{
    single_term, term_for, ConstantStub, EstimatorTerm, SaTermSource, TelescopingStub, TermSource, ThetaInit,
    MAX_RETRIES,
};

/// `M = max(floor, T)`.
pub fn filter_particles(floor: usize, horizon: usize) -> usize {
    floor.max(horizon)
}
