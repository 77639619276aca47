//! Model abstraction: drift, mean-field interaction, diffusion and
//! observation density of a partially observed McKean–Vlasov SDE
//!
//! ```text
//! dX_t = a_θ(X_t, ξ̄_θ(X_t, μ_t)) dt + σ̃(X_t) dW_t,   ξ̄_θ(x, μ) = ∫ ξ_θ(x, x′) μ(dx′)
//! Y_k | X_k ~ G_θ(X_k, ·),  k = 1..T
//! ```
//!
//! The diffusion is scalar times identity. States are flat `&[f64]` slices
//! of length [`Model::dim_x`]; clouds of `n` states are flat slices of length
//! `n * dim_x`.

mod kuramoto;
mod mfnn;
mod registry;

pub use kuramoto::{make_kuramoto, Kuramoto};
pub use mfnn::{make_mfnn, Activation, MeanFieldNn};
pub use registry::{ModelFactory, ModelParams, ModelRegistry};

use std::f64::consts::PI;
use std::fmt;

use rand::RngCore;

use crate::error::{Error, Result};

pub trait Model: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim_x(&self) -> usize;
    fn dim_theta(&self) -> usize;
    fn dim_obs(&self) -> usize;
    fn theta_box(&self) -> &ThetaBox;
    /// Fixed starting point.
    fn x0(&self) -> &[f64];

    /// `a_θ(x, ξ̄)` written into `out` (length `dim_x`).
    fn drift(&self, theta: &[f64], x: &[f64], xi_bar: f64, out: &mut [f64]);

    /// Partials of the drift at fixed `ξ̄`: `d_theta[i * dim_theta + j] =
    /// ∂a_i/∂θ_j` and `d_xi[i] = ∂a_i/∂ξ̄`. Returns `false` when the model
    /// does not supply them, in which case the gradient falls back to a
    /// finite difference of the whole drift.
    fn drift_partials(
        &self,
        _theta: &[f64],
        _x: &[f64],
        _xi_bar: f64,
        _d_theta: &mut [f64],
        _d_xi: &mut [f64],
    ) -> bool {
        false
    }

    /// `false` when `ξ ≡ 0`; law simulations then skip the mean-field sums.
    fn has_interaction(&self) -> bool {
        true
    }

    /// `ξ_θ(x, x′)`.
    fn interaction(&self, theta: &[f64], x: &[f64], other: &[f64]) -> f64;

    /// `out[i] = (1/N) Σ_j ξ_θ(target_i, cloud_j)` for every target state.
    ///
    /// Models may override this with an algebraically equivalent faster
    /// evaluation; cost accounting still charges `N` units per target.
    fn mean_field(&self, theta: &[f64], cloud: &[f64], targets: &[f64], out: &mut [f64]) {
        let d = self.dim_x();
        let n = cloud.len() / d;
        for (x, o) in targets.chunks_exact(d).zip(out.iter_mut()) {
            let s: f64 = cloud
                .chunks_exact(d)
                .map(|other| self.interaction(theta, x, other))
                .sum();
            *o = s / n as f64;
        }
    }

    /// `σ̃(x) > 0`.
    fn diffusion(&self, x: &[f64]) -> f64;

    /// Closed interval containing every value of [`Model::diffusion`].
    fn diffusion_bounds(&self) -> (f64, f64);

    /// `log G_θ(x, y)`.
    fn obs_logdensity(&self, theta: &[f64], x: &[f64], y: &[f64]) -> f64;

    /// `∇_θ log G_θ(x, y)` written into `out` (length `dim_theta`).
    fn obs_logdensity_grad(&self, theta: &[f64], x: &[f64], y: &[f64], out: &mut [f64]);

    fn obs_sample(&self, theta: &[f64], x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]);
}

/// Gaussian log density with mean `x` and covariance `τ² I`.
pub fn obs_loglik_gaussian(x: &[f64], y: &[f64], tau: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum();
    let var = tau * tau;
    -sq / (2.0 * var) - 0.5 * x.len() as f64 * (2.0 * PI * var).ln()
}

/// Coordinatewise closed box for the parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config(
                "model.theta_box",
                format!("bounds have lengths {} and {}", lo.len(), hi.len()),
            ));
        }
        for (j, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::config(
                    "model.theta_box",
                    format!("coordinate {j} has empty interior [{a}, {b}]"),
                ));
            }
        }
        Ok(ThetaBox { lo, hi })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (a, b))| (a..=b).contains(&t))
    }

    /// Clamps in place; returns whether any coordinate moved.
    pub fn clamp(&self, theta: &mut [f64]) -> bool {
        let mut moved = false;
        for (t, (a, b)) in theta.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            let c = t.clamp(*a, *b);
            if c != *t {
                moved = true;
                *t = c;
            }
        }
        moved
    }
}

/// Observations `Y_1..Y_T` at unit times, flat with stride `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    dim: usize,
    ys: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(dim: usize, ys: Vec<f64>) -> Result<Self> {
        if dim == 0 || ys.is_empty() || !ys.len().is_multiple_of(dim) {
            return Err(Error::precondition(format!(
                "observation series needs T >= 1 rows of dimension {dim}, got {} values",
                ys.len()
            )));
        }
        Ok(ObservationSeries { dim, ys })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Horizon `T`.
    pub fn horizon(&self) -> usize {
        self.ys.len() / self.dim
    }

    /// `Y_t`, `t` in `1..=T`.
    pub fn get(&self, t: usize) -> &[f64] {
        &self.ys[(t - 1) * self.dim..t * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }
}
