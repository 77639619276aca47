//! Exact reference computations for testing the estimator.
//!
//! [`kalman`] treats the interaction-free linear-Gaussian special case, where
//! the Euler scheme at level `l` is an exact linear state-space model and the
//! likelihood, its gradient and its maximizer are available in closed form.
//! [`enumerate_telescoping`] sums single estimator terms over the whole
//! randomization support. Nothing in the estimation code depends on this
//! crate.

pub mod kalman;
pub mod linear;

pub use kalman::{kalman_loglik, kalman_loglik_and_grad, kalman_mle, OracleError};
pub use linear::{LinearDrift, LinearGaussianSpec};

use pomv_core::mlmc::{term_for, RandomizationScheme, TelescopingStub};
use pomv_core::rng::StreamKey;

/// `Σ_{l,p} ℙ_L(l) ℙ_P(p) · term(l, p)` where the procedures are replaced
/// by `f(l, T)`. The telescoping sum should collapse to `f(L, T_{P_max})`.
pub fn enumerate_telescoping<F>(f: F, dim: usize, scheme: &RandomizationScheme) -> Vec<f64>
where
    F: Fn(u32, usize) -> Vec<f64> + Send + Sync,
{
    let stub = TelescopingStub { dim, f };
    let mut acc = vec![0.0; dim];
    for l in scheme.levels() {
        for p in 0..=scheme.p_max() {
            let t = term_for(&stub, scheme, l, p, &[], 0, StreamKey::new(0)).expect("stub terms cannot fail");
            let w = scheme.prob_l(l) * scheme.prob_p(p);
            for (a, v) in acc.iter_mut().zip(&t.theta_hat) {
                *a += w * v;
            }
        }
    }
    acc
}
