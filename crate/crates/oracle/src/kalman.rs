//! Kalman filter and Rauch–Tung–Striebel smoother on the level-`l` grid.
//!
//! Observations sit at every `2^l`-th grid point. The gradient uses Fisher's
//! identity: the score is the smoothed expectation of the complete-data
//! score, which needs the smoothed first and second moments and lag-one
//! cross moments of consecutive grid states.

use std::f64::consts::PI;

use pomv_core::ObservationSeries;
use thiserror::Error;

use crate::linear::LinearGaussianSpec;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("non-positive variance {0}")]
    NonPositiveVariance(f64),
    #[error("observations must be one-dimensional")]
    Dimension,
}

struct Pass {
    loglik: f64,
    /// Filtered and predicted moments, index `k = 0..=n`.
    mf: Vec<f64>,
    pf: Vec<f64>,
    mp: Vec<f64>,
    pp: Vec<f64>,
}

fn forward(spec: &LinearGaussianSpec, theta: f64, obs: &ObservationSeries) -> Result<Pass, OracleError> {
    if obs.dim() != 1 {
        return Err(OracleError::Dimension);
    }
    let (phi, c, q) = spec.transition(theta);
    let r = spec.tau * spec.tau;
    if q <= 0.0 || r <= 0.0 {
        return Err(OracleError::NonPositiveVariance(q.min(r)));
    }
    let s = 1usize << spec.level;
    let n = s * obs.horizon();
    let mut mf = vec![spec.x0; n + 1];
    let mut pf = vec![0.0; n + 1];
    let mut mp = vec![spec.x0; n + 1];
    let mut pp = vec![0.0; n + 1];
    let mut loglik = 0.0;
    for k in 1..=n {
        mp[k] = phi * mf[k - 1] + c;
        pp[k] = phi * phi * pf[k - 1] + q;
        if k % s == 0 {
            let y = obs.get(k / s)[0];
            let sv = pp[k] + r;
            let innov = y - mp[k];
            loglik += -0.5 * (2.0 * PI * sv).ln() - innov * innov / (2.0 * sv);
            let gain = pp[k] / sv;
            mf[k] = mp[k] + gain * innov;
            pf[k] = (1.0 - gain) * pp[k];
        } else {
            mf[k] = mp[k];
            pf[k] = pp[k];
        }
    }
    Ok(Pass { loglik, mf, pf, mp, pp })
}

/// `log p_θ(y_{1:T})` of the level-`l` discretization.
pub fn kalman_loglik(spec: &LinearGaussianSpec, theta: f64, obs: &ObservationSeries) -> Result<f64, OracleError> {
    Ok(forward(spec, theta, obs)?.loglik)
}

/// Log-likelihood and its θ-derivative.
pub fn kalman_loglik_and_grad(
    spec: &LinearGaussianSpec,
    theta: f64,
    obs: &ObservationSeries,
) -> Result<(f64, f64), OracleError> {
    let f = forward(spec, theta, obs)?;
    let (phi, c, q) = spec.transition(theta);
    let (dphi, dc) = spec.transition_grad();
    let n = f.mf.len() - 1;
    // Smoothed means, variances and lag-one covariances Cov(x_{k+1}, x_k).
    let mut ms = f.mf.clone();
    let mut ps = f.pf.clone();
    let mut cross = vec![0.0; n];
    for k in (0..n).rev() {
        let j = if f.pp[k + 1] > 0.0 { f.pf[k] * phi / f.pp[k + 1] } else { 0.0 };
        ms[k] = f.mf[k] + j * (ms[k + 1] - f.mp[k + 1]);
        ps[k] = f.pf[k] + j * j * (ps[k + 1] - f.pp[k + 1]);
        cross[k] = j * ps[k + 1];
    }
    let mut g = 0.0;
    for k in 0..n {
        let exx = ps[k] + ms[k] * ms[k];
        let ex1x = cross[k] + ms[k + 1] * ms[k];
        // E[(x_{k+1} − φx_k − c)(φ′x_k + c′)]
        g += dphi * (ex1x - phi * exx - c * ms[k]) + dc * (ms[k + 1] - phi * ms[k] - c);
    }
    Ok((f.loglik, g / q))
}

/// Golden-section maximizer of the exact likelihood on `[lo, hi]`.
pub fn kalman_mle(spec: &LinearGaussianSpec, obs: &ObservationSeries, lo: f64, hi: f64) -> Result<f64, OracleError> {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = kalman_loglik(spec, x1, obs)?;
    let mut f2 = kalman_loglik(spec, x2, obs)?;
    while b - a > 1e-12 * (1.0 + a.abs() + b.abs()) {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = kalman_loglik(spec, x2, obs)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = kalman_loglik(spec, x1, obs)?;
        }
    }
    Ok(0.5 * (a + b))
}
