//! Mean-field neural activations:
//!
//! ```text
//! dX^(j) = { α( (1/d) Σ_i ∫ f(x) μ^(i)(dx) − f(X^(j)) ) + β( w̄ X^(j) − b ) } dt + σ dW^(j)
//! ```
//!
//! `θ = (α, β)`. The interaction `ξ(x, x′) = (1/d) Σ_i f(x′_i)` does not
//! depend on `x` or `θ`.

use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{obs_loglik_gaussian, Model, ThetaBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeanFieldNn {
    dim: usize,
    sigma: f64,
    tau: f64,
    bias: f64,
    weight: f64,
    activation: Activation,
    x0: Vec<f64>,
    theta_box: ThetaBox,
}

impl MeanFieldNn {
    pub fn new(dim: usize, sigma: f64, tau: f64, bias: f64, weight: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("model.d", "state dimension must be at least 1"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config("model.sigma", format!("must be positive, got {sigma}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::config("model.tau", format!("must be positive, got {tau}")));
        }
        Ok(MeanFieldNn {
            dim,
            sigma,
            tau,
            bias,
            weight,
            activation: Activation::Sigmoid,
            x0: vec![0.0; dim],
            theta_box: ThetaBox::uniform(2, -5.0, 5.0)?,
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.dim {
            return Err(Error::config(
                "model.x0",
                format!("expected {} coordinates, got {}", self.dim, x0.len()),
            ));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn with_theta_box(mut self, theta_box: ThetaBox) -> Result<Self> {
        if theta_box.dim() != 2 {
            return Err(Error::config("model.theta_box", "mfnn has two parameters (alpha, beta)"));
        }
        self.theta_box = theta_box;
        Ok(self)
    }

    fn mean_activation(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.activation.apply(v)).sum::<f64>() / self.dim as f64
    }
}

/// `θ = (α, β)` is supplied at evaluation time; the arguments here are the
/// fixed parts of the model.
pub fn make_mfnn(
    dim: usize,
    sigma: f64,
    tau: f64,
    bias_b: f64,
    weight_w: f64,
) -> Result<Arc<dyn Model>> {
    Ok(Arc::new(MeanFieldNn::new(dim, sigma, tau, bias_b, weight_w)?))
}

impl Model for MeanFieldNn {
    fn name(&self) -> &str {
        "mfnn"
    }

    fn dim_x(&self) -> usize {
        self.dim
    }

    fn dim_theta(&self) -> usize {
        2
    }

    fn dim_obs(&self) -> usize {
        self.dim
    }

    fn theta_box(&self) -> &ThetaBox {
        &self.theta_box
    }

    fn x0(&self) -> &[f64] {
        &self.x0
    }

    fn drift(&self, theta: &[f64], x: &[f64], xi_bar: f64, out: &mut [f64]) {
        let (alpha, beta) = (theta[0], theta[1]);
        for (o, &xj) in out.iter_mut().zip(x) {
            *o = alpha * (xi_bar - self.activation.apply(xj)) + beta * (self.weight * xj - self.bias);
        }
    }

    fn drift_partials(
        &self,
        theta: &[f64],
        x: &[f64],
        xi_bar: f64,
        d_theta: &mut [f64],
        d_xi: &mut [f64],
    ) -> bool {
        for (j, &xj) in x.iter().enumerate() {
            d_theta[2 * j] = xi_bar - self.activation.apply(xj);
            d_theta[2 * j + 1] = self.weight * xj - self.bias;
            d_xi[j] = theta[0];
        }
        true
    }

    fn interaction(&self, _theta: &[f64], _x: &[f64], other: &[f64]) -> f64 {
        self.mean_activation(other)
    }

    fn mean_field(&self, _theta: &[f64], cloud: &[f64], targets: &[f64], out: &mut [f64]) {
        let n = cloud.len() / self.dim;
        let m = cloud
            .chunks_exact(self.dim)
            .map(|c| self.mean_activation(c))
            .sum::<f64>()
            / n as f64;
        out[..targets.len() / self.dim].fill(m);
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
        out.fill(0.0);
    }

    fn obs_sample(&self, _theta: &[f64], x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
        for (o, &xj) in out.iter_mut().zip(x) {
            let z: f64 = StandardNormal.sample(rng);
            *o = xj + self.tau * z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn identical_cloud_cancels_mean_field_term() {
        let m = MeanFieldNn::new(3, 0.15, 1.0, 0.2, -1.0).unwrap();
        let x = [0.3, 0.3, 0.3];
        let cloud: Vec<f64> = x.iter().cycle().take(12).copied().collect();
        let mut xi = [0.0];
        m.mean_field(&[0.5, 0.35], &cloud, &x, &mut xi);
        let mut a = [0.0; 3];
        m.drift(&[0.5, 0.35], &x, xi[0], &mut a);
        for v in a {
            assert!((v - 0.35 * (-0.3 - 0.2)).abs() < 1e-15);
        }
    }

    #[test]
    fn fast_mean_field_matches_pairwise_sum() {
        let m = MeanFieldNn::new(2, 0.15, 1.0, 0.0, 1.0).unwrap();
        let cloud = [0.1, -0.4, 2.0, 0.3, -1.0, 0.0];
        let targets = [0.5, 0.5, -0.2, 0.9];
        let mut fast = [0.0; 2];
        m.mean_field(&[0.5, 0.35], &cloud, &targets, &mut fast);
        let slow: f64 = cloud
            .chunks(2)
            .map(|c| m.interaction(&[0.5, 0.35], &targets[..2], c))
            .sum::<f64>()
            / 3.0;
        assert!((fast[0] - slow).abs() < 1e-15 && (fast[1] - slow).abs() < 1e-15);
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let m = MeanFieldNn::new(2, 0.15, 1.0, 0.4, 0.7).unwrap();
        let theta = [0.5, 0.35];
        let x = [0.2, -1.3];
        let xi = 0.6;
        let mut dt = [0.0; 4];
        let mut dx = [0.0; 2];
        assert!(m.drift_partials(&theta, &x, xi, &mut dt, &mut dx));
        let h = 1e-6;
        let (mut up, mut dn) = ([0.0; 2], [0.0; 2]);
        for j in 0..2 {
            let mut tp = theta;
            let mut tm = theta;
            tp[j] += h;
            tm[j] -= h;
            m.drift(&tp, &x, xi, &mut up);
            m.drift(&tm, &x, xi, &mut dn);
            for i in 0..2 {
                assert!(((up[i] - dn[i]) / (2.0 * h) - dt[i * 2 + j]).abs() < 1e-8);
            }
        }
        m.drift(&theta, &x, xi + h, &mut up);
        m.drift(&theta, &x, xi - h, &mut dn);
        for i in 0..2 {
            assert!(((up[i] - dn[i]) / (2.0 * h) - dx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_zero_dimension() {
        assert!(MeanFieldNn::new(0, 0.15, 1.0, 0.0, 1.0).is_err());
    }
}
