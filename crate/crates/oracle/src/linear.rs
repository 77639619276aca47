use rand::RngCore;

use pomv_core::model::obs_loglik_gaussian;
use pomv_core::{Model, ThetaBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearDrift {
    /// `a_θ(x) = −θx`.
    Reverting,
    /// `a_θ(x) = θ`.
    Constant,
}

/// One-dimensional `dX = a_θ(X) dt + σ dW`, `Y_t ~ N(X_t, τ²)`, no
/// interaction, discretized at `level`.
#[derive(Debug, Clone)]
pub struct LinearGaussianSpec {
    pub drift: LinearDrift,
    pub sigma: f64,
    pub tau: f64,
    pub x0: f64,
    pub level: u32,
    x0_buf: [f64; 1],
    theta_box: ThetaBox,
}

impl LinearGaussianSpec {
    pub fn new(drift: LinearDrift, sigma: f64, tau: f64, x0: f64, level: u32) -> Self {
        LinearGaussianSpec {
            drift,
            sigma,
            tau,
            x0,
            level,
            x0_buf: [x0],
            theta_box: ThetaBox::uniform(1, -10.0, 10.0).expect("valid box"),
        }
    }

    /// One Euler step `x ↦ φx + c + N(0, q)` at this level.
    pub fn transition(&self, theta: f64) -> (f64, f64, f64) {
        let dt = (-(self.level as f64)).exp2();
        let q = self.sigma * self.sigma * dt;
        match self.drift {
            LinearDrift::Reverting => (1.0 - theta * dt, 0.0, q),
            LinearDrift::Constant => (1.0, theta * dt, q),
        }
    }

    /// `(∂φ/∂θ, ∂c/∂θ)`.
    pub fn transition_grad(&self) -> (f64, f64) {
        let dt = (-(self.level as f64)).exp2();
        match self.drift {
            LinearDrift::Reverting => (-dt, 0.0),
            LinearDrift::Constant => (0.0, dt),
        }
    }
}

impl Model for LinearGaussianSpec {
    fn name(&self) -> &str {
        match self.drift {
            LinearDrift::Reverting => "linear-reverting",
            LinearDrift::Constant => "linear-constant",
        }
    }
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_theta(&self) -> usize {
        1
    }
    fn dim_obs(&self) -> usize {
        1
    }
    fn theta_box(&self) -> &ThetaBox {
        &self.theta_box
    }
    fn x0(&self) -> &[f64] {
        &self.x0_buf
    }
    fn drift(&self, theta: &[f64], x: &[f64], _xi: f64, out: &mut [f64]) {
        out[0] = match self.drift {
            LinearDrift::Reverting => -theta[0] * x[0],
            LinearDrift::Constant => theta[0],
        };
    }
    fn drift_partials(&self, _theta: &[f64], x: &[f64], _xi: f64, d_theta: &mut [f64], d_xi: &mut [f64]) -> bool {
        d_theta[0] = match self.drift {
            LinearDrift::Reverting => -x[0],
            LinearDrift::Constant => 1.0,
        };
        d_xi[0] = 0.0;
        true
    }
    fn has_interaction(&self) -> bool {
        false
    }
    fn interaction(&self, _theta: &[f64], _x: &[f64], _other: &[f64]) -> f64 {
        0.0
    }
    fn diffusion(&self, _x: &[f64]) -> f64 {
        self.sigma
    }
    fn diffusion_bounds(&self) -> (f64, f64) {
        (self.sigma, self.sigma)
    }
    fn obs_logdensity(&self, _theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
        obs_loglik_gaussian(x, y, self.tau)
    }
    fn obs_logdensity_grad(&self, _theta: &[f64], _x: &[f64], _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn obs_sample(&self, _theta: &[f64], x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        // Box–Muller keeps this crate free of a distributions dependency.
        let u1 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let z = (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        out[0] = x[0] + self.tau * z;
    }
}
