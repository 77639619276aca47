//! Conditional particle filter kernels on the level-`l` lattice.
//!
//! [`cpf_kernel`] draws from a Markov kernel whose invariant law is the
//! smoother of the particle-approximated model; [`ccpf_kernel`] couples two
//! such kernels at adjacent levels through shared Brownian increments and
//! maximally coupled resampling indices.

mod ccpf;
mod cpf;

pub use ccpf::ccpf_kernel;
pub use cpf::cpf_kernel;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PfConfig {
    /// Filter particles `M`, the last of which carries the reference.
    pub particles: usize,
}

impl PfConfig {
    pub fn new(particles: usize) -> Result<Self> {
        if particles < 2 {
            return Err(Error::config("pf.M", format!("need at least 2 filter particles, got {particles}")));
        }
        Ok(PfConfig { particles })
    }
}

/// Normalizes log weights with log-sum-exp. Entries are non-negative and
/// sum to one; a `-inf` entry maps to zero.
pub fn normalize_log_weights(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / logw.len() as f64; logw.len()];
    }
    let mut w: Vec<f64> = logw.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// `r_i ∝ G_θ(x_i, y)` over the `M` states in `xs` (flat).
pub fn normalized_weights(model: &dyn Model, theta: &[f64], xs: &[f64], y: &[f64]) -> Vec<f64> {
    let logw: Vec<f64> = xs
        .chunks_exact(model.dim_x())
        .map(|x| model.obs_logdensity(theta, x, y))
        .collect();
    normalize_log_weights(&logw)
}

pub(crate) fn categorical(w: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(w).expect("normalized weights are a valid mass function")
}

/// Maximal coupling of two mass functions on `{0, …, M−1}`: marginals are
/// exact and `P(I = J) = Σ_i min(r1_i, r2_i)`.
#[derive(Debug, Clone)]
pub struct MaximalCoupling {
    overlap_mass: f64,
    overlap: Option<WeightedIndex<f64>>,
    residual: Option<(WeightedIndex<f64>, WeightedIndex<f64>)>,
}

impl MaximalCoupling {
    pub fn new(r1: &[f64], r2: &[f64]) -> Result<Self> {
        if r1.len() != r2.len() || r1.is_empty() {
            return Err(Error::precondition(format!(
                "maximal coupling needs equal, non-empty supports, got {} and {}",
                r1.len(),
                r2.len()
            )));
        }
        let nu: Vec<f64> = r1.iter().zip(r2).map(|(a, b)| a.min(*b)).collect();
        let alpha: f64 = nu.iter().sum::<f64>().min(1.0);
        let overlap = (alpha > 0.0).then(|| categorical(&nu));
        let residual = if 1.0 - alpha > 1e-14 {
            let q1: Vec<f64> = r1.iter().zip(&nu).map(|(a, n)| (a - n).max(0.0)).collect();
            let q2: Vec<f64> = r2.iter().zip(&nu).map(|(a, n)| (a - n).max(0.0)).collect();
            match (WeightedIndex::new(&q1), WeightedIndex::new(&q2)) {
                (Ok(a), Ok(b)) => Some((a, b)),
                _ => None,
            }
        } else {
            None
        };
        let overlap_mass = if residual.is_none() { 1.0 } else { alpha };
        Ok(MaximalCoupling {
            overlap_mass,
            overlap,
            residual,
        })
    }

    /// `Σ_i min(r1_i, r2_i)`.
    pub fn meet_probability(&self) -> f64 {
        self.overlap_mass
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let u: f64 = rng.random();
        match (&self.overlap, &self.residual) {
            (Some(o), _) if u < self.overlap_mass => {
                let i = o.sample(rng);
                (i, i)
            }
            (_, Some((a, b))) => (a.sample(rng), b.sample(rng)),
            (Some(o), None) => {
                let i = o.sample(rng);
                (i, i)
            }
            (None, None) => unreachable!("a coupling always has overlap or residual mass"),
        }
    }
}

/// One draw from the maximal coupling of `r1` and `r2`.
pub fn maximal_coupling_sample<R: Rng + ?Sized>(r1: &[f64], r2: &[f64], rng: &mut R) -> Result<(usize, usize)> {
    Ok(MaximalCoupling::new(r1, r2)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lawsim::test_models::Drifted;
    use crate::rng::StreamKey;

    #[test]
    fn weights_examples() {
        let m = Drifted::constant(1.0, 1.0, 0.0);
        let w = normalized_weights(&m, &[0.0], &[0.4, 0.4, 0.4], &[0.0]);
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let w = normalize_log_weights(&[0.0, -1e9]);
        assert!((w[0] - 1.0).abs() < 1e-12 && w[1].abs() < 1e-12);
        let w = normalized_weights(&m, &[0.0], &[0.0, 1.0], &[0.0]);
        let e = (-0.5f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((w[0] - 0.6225).abs() < 1e-4 && (w[1] - 0.3775).abs() < 1e-4);
        // Far-away observations underflow in linear space but not here.
        let w = normalized_weights(&m, &[0.0], &[0.0, 1.0], &[1e3]);
        assert!(w.iter().all(|v| v.is_finite()) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coupling_examples() {
        let mut rng = StreamKey::new(1).rng();
        for _ in 0..1000 {
            let (i, j) = maximal_coupling_sample(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5], &mut rng).unwrap();
            assert_eq!(i, j);
            assert_eq!(maximal_coupling_sample(&[1.0, 0.0], &[0.0, 1.0], &mut rng).unwrap(), (0, 1));
        }
        let c = MaximalCoupling::new(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((c.meet_probability() - 0.75).abs() < 1e-15);
        let n = 100_000;
        let meets = (0..n).filter(|_| {
            let (i, j) = c.sample(&mut rng);
            i == j
        });
        let rate = meets.count() as f64 / n as f64;
        assert!((rate - 0.75).abs() < 0.01, "{rate}");
        assert!(maximal_coupling_sample(&[1.0], &[0.5, 0.5], &mut rng).is_err());
    }

    #[test]
    fn pf_config_needs_two_particles() {
        assert!(PfConfig::new(1).is_err());
        assert!(PfConfig::new(2).is_ok());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalized_weights_are_a_pmf(logw in proptest::collection::vec(-800.0f64..50.0, 1..64)) {
                let w = normalize_log_weights(&logw);
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0));
            }
        }
    }
}
