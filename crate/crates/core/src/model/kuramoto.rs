//! Stochastic Kuramoto oscillators: `dX = (θ + ∫ sin(X − x) μ_t(dx)) dt + σ dW`.

use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{obs_loglik_gaussian, Model, ThetaBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Kuramoto {
    sigma: f64,
    tau: f64,
    x0: [f64; 1],
    theta_box: ThetaBox,
}

impl Kuramoto {
    pub fn new(sigma: f64, tau: f64, x0: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config("model.sigma", format!("must be positive, got {sigma}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::config("model.tau", format!("must be positive, got {tau}")));
        }
        Ok(Kuramoto {
            sigma,
            tau,
            x0: [x0],
            theta_box: ThetaBox::uniform(1, -5.0, 5.0)?,
        })
    }

    pub fn with_theta_box(mut self, theta_box: ThetaBox) -> Result<Self> {
        if theta_box.dim() != 1 {
            return Err(Error::config("model.theta_box", "kuramoto has one parameter"));
        }
        self.theta_box = theta_box;
        Ok(self)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

pub fn make_kuramoto(sigma: f64, tau: f64, x0: f64) -> Result<Arc<dyn Model>> {
    Ok(Arc::new(Kuramoto::new(sigma, tau, x0)?))
}

impl Model for Kuramoto {
    fn name(&self) -> &str {
        "kuramoto"
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
        &self.x0
    }

    fn drift(&self, theta: &[f64], _x: &[f64], xi_bar: f64, out: &mut [f64]) {
        out[0] = theta[0] + xi_bar;
    }

    fn drift_partials(
        &self,
        _theta: &[f64],
        _x: &[f64],
        _xi_bar: f64,
        d_theta: &mut [f64],
        d_xi: &mut [f64],
    ) -> bool {
        d_theta[0] = 1.0;
        d_xi[0] = 1.0;
        true
    }

    fn interaction(&self, _theta: &[f64], x: &[f64], other: &[f64]) -> f64 {
        (x[0] - other[0]).sin()
    }

    // sin(x − x′) = sin x cos x′ − cos x sin x′, so one pass over the cloud
    // serves every target.
    fn mean_field(&self, _theta: &[f64], cloud: &[f64], targets: &[f64], out: &mut [f64]) {
        let (mut s, mut c) = (0.0, 0.0);
        for &x in cloud {
            let (sx, cx) = x.sin_cos();
            s += sx;
            c += cx;
        }
        let n = cloud.len() as f64;
        let (s, c) = (s / n, c / n);
        for (&x, o) in targets.iter().zip(out.iter_mut()) {
            let (sx, cx) = x.sin_cos();
            *o = sx * c - cx * s;
        }
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
        let z: f64 = StandardNormal.sample(rng);
        out[0] = x[0] + self.tau * z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn model() -> Kuramoto {
        Kuramoto::new(0.15, 1.0, 1.5).unwrap()
    }

    #[test]
    fn drift_and_interaction_values() {
        let m = model();
        let mut a = [0.0];
        m.drift(&[0.5], &[3.0], 0.0, &mut a);
        assert_eq!(a[0], 0.5);
        assert_eq!(m.interaction(&[0.5], &[0.7], &[0.7]), 0.0);
        assert!((m.interaction(&[0.5], &[FRAC_PI_2], &[0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_noise() {
        assert!(Kuramoto::new(0.0, 1.0, 0.0).is_err());
        assert!(Kuramoto::new(0.1, -1.0, 0.0).is_err());
    }

    #[test]
    fn fast_mean_field_matches_pairwise_sum() {
        let m = model();
        let cloud = [0.1, -2.0, 3.3, 0.7, 1.5];
        let targets = [0.0, FRAC_PI_2, -1.2];
        let mut fast = [0.0; 3];
        m.mean_field(&[0.5], &cloud, &targets, &mut fast);
        for (x, f) in targets.iter().zip(fast) {
            let slow: f64 = cloud.iter().map(|c| (x - c).sin()).sum::<f64>() / cloud.len() as f64;
            assert!((slow - f).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_cloud_has_zero_mean_field() {
        let m = model();
        let x = 0.4;
        let cloud = [x - 0.3, x + 0.3, x - 1.1, x + 1.1, x];
        let mut out = [1.0];
        m.mean_field(&[0.5], &cloud, &[x], &mut out);
        assert!(out[0].abs() < 1e-15);
        m.mean_field(&[0.5], &[0.0, PI], &[FRAC_PI_2], &mut out);
        assert!(out[0].abs() < 1e-15);
    }

    #[test]
    fn obs_gradient_is_zero() {
        let mut g = [1.0];
        model().obs_logdensity_grad(&[0.5], &[1.0], &[2.0], &mut g);
        assert_eq!(g, [0.0]);
    }
}
