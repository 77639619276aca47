use std::time::{Duration, Instant};

use log::warn;
use rand::Rng;

use super::RandomizationScheme;
use crate::error::{Error, Result};
use crate::model::{Model, ObservationSeries, ThetaBox};
use crate::pfilter::PfConfig;
use crate::rng::{Role, StreamKey};
use crate::sa::{procedure1_run, procedure2_run, CoupledSaConfig, GradientRule, SaConfig, StepSchedule};
use crate::Cost;

/// Produces the bracketed increment of one estimator term for given
/// `(l, p)`; the caller applies the weight.
pub trait TermSource: Send + Sync {
    fn name(&self) -> &str;

    /// Coordinates of the estimate.
    fn dim(&self) -> usize;

    /// `q_l(T_p) − q_l(T_{p−1})`, or `q_l(T_0)` when `p = 0`, where `q_{l_min}`
    /// is the single-level iterate and `q_l` for `l > l_min` the fine minus
    /// coarse iterate.
    fn increment(
        &self,
        scheme: &RandomizationScheme,
        l: u32,
        p: u32,
        theta0: &[f64],
        key: StreamKey,
    ) -> Result<(Vec<f64>, Cost)>;

    /// `weight × increment`.
    fn weighted(&self, weight: f64, increment: &[f64]) -> Vec<f64> {
        increment.iter().map(|v| weight * v).collect()
    }
}

/// Increments from Procedures 1 and 2 on a model and data set.
#[derive(Debug, Clone, Copy)]
pub struct SaTermSource<'a> {
    pub model: &'a dyn Model,
    pub obs: &'a ObservationSeries,
    /// `N_l = l · particle_factor`.
    pub particle_factor: usize,
    pub pf: PfConfig,
    pub schedule: StepSchedule,
}

impl SaTermSource<'_> {
    pub fn law_particles(&self, l: u32) -> usize {
        l as usize * self.particle_factor
    }
}

fn checkpoint_diff(at_tp: Vec<f64>, prev: Option<Vec<f64>>) -> Vec<f64> {
    match prev {
        Some(q) => at_tp.iter().zip(&q).map(|(a, b)| a - b).collect(),
        None => at_tp,
    }
}

impl TermSource for SaTermSource<'_> {
    fn name(&self) -> &str {
        "mlmc"
    }

    fn dim(&self) -> usize {
        self.model.dim_theta()
    }

    fn increment(
        &self,
        scheme: &RandomizationScheme,
        l: u32,
        p: u32,
        theta0: &[f64],
        key: StreamKey,
    ) -> Result<(Vec<f64>, Cost)> {
        let tp = RandomizationScheme::t_p(p);
        let prev = (p > 0).then(|| RandomizationScheme::t_p(p - 1));
        if l == scheme.l_min() {
            let cfg = SaConfig {
                law_particles: self.law_particles(l),
                pf: self.pf,
                schedule: self.schedule,
                iterations: tp,
            };
            let tr = procedure1_run(self.model, self.obs, l, &cfg, theta0, GradientRule::Girsanov, key)?;
            let q = |n: usize| tr.states[n].theta.clone();
            Ok((checkpoint_diff(q(tp), prev.map(q)), tr.last().cost))
        } else {
            let cfg = CoupledSaConfig {
                n_fine: self.law_particles(l),
                n_coarse: self.law_particles(l - 1),
                pf: self.pf,
                schedule: self.schedule,
                iterations: tp,
            };
            let tr = procedure2_run(self.model, self.obs, l, &cfg, theta0, GradientRule::Girsanov, key)?;
            let q = |n: usize| {
                let s = &tr.states[n];
                s.theta_fine.iter().zip(&s.theta_coarse).map(|(a, b)| a - b).collect::<Vec<f64>>()
            };
            Ok((checkpoint_diff(q(tp), prev.map(q)), tr.last().cost))
        }
    }
}

/// Deterministic procedures: `θ^{l,T}` is replaced by `f(l, T)`.
pub struct TelescopingStub<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> TermSource for TelescopingStub<F>
where
    F: Fn(u32, usize) -> Vec<f64> + Send + Sync,
{
    fn name(&self) -> &str {
        "telescoping"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn increment(
        &self,
        scheme: &RandomizationScheme,
        l: u32,
        p: u32,
        _theta0: &[f64],
        _key: StreamKey,
    ) -> Result<(Vec<f64>, Cost)> {
        let q = |t: usize| -> Vec<f64> {
            let fine = (self.f)(l, t);
            if l == scheme.l_min() {
                fine
            } else {
                fine.iter().zip((self.f)(l - 1, t)).map(|(a, b)| a - b).collect()
            }
        };
        let prev = (p > 0).then(|| q(RandomizationScheme::t_p(p - 1)));
        Ok((checkpoint_diff(q(RandomizationScheme::t_p(p)), prev), Cost::default()))
    }
}

/// Every weighted term equals `value`; used to exercise the pipeline.
#[derive(Debug, Clone)]
pub struct ConstantStub {
    pub value: Vec<f64>,
}

impl TermSource for ConstantStub {
    fn name(&self) -> &str {
        "stub"
    }

    fn dim(&self) -> usize {
        self.value.len()
    }

    fn increment(
        &self,
        scheme: &RandomizationScheme,
        l: u32,
        p: u32,
        _theta0: &[f64],
        _key: StreamKey,
    ) -> Result<(Vec<f64>, Cost)> {
        let w = scheme.weight(l, p);
        Ok((self.value.iter().map(|v| v / w).collect(), Cost(1)))
    }

    // Exact, so that averages of stub terms reproduce `value` bit for bit.
    fn weighted(&self, _weight: f64, _increment: &[f64]) -> Vec<f64> {
        self.value.clone()
    }
}

/// Starting point of each stochastic-approximation run.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaInit {
    Fixed(Vec<f64>),
    /// Uniform over the middle half of the box, drawn per term.
    MiddleHalf(ThetaBox),
}

impl ThetaInit {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ThetaInit::Fixed(v) => v.clone(),
            ThetaInit::MiddleHalf(b) => b
                .lo()
                .iter()
                .zip(b.hi())
                .map(|(lo, hi)| {
                    let q = (hi - lo) / 4.0;
                    rng.random_range(lo + q..=hi - q)
                })
                .collect(),
        }
    }
}

/// Retry budget after the first attempt.
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorTerm {
    pub run_id: u64,
    /// Key of the attempt that produced the term.
    pub seed: u64,
    pub l: u32,
    pub p: u32,
    pub t_p: usize,
    pub weight: f64,
    pub increment: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub cost: Cost,
    pub attempts: u32,
    pub wall: Duration,
}

/// The term for fixed `(l, p)`: runs `source` under `key`, retrying with a
/// fresh child key on numerical failure.
pub fn term_for(
    source: &dyn TermSource,
    scheme: &RandomizationScheme,
    l: u32,
    p: u32,
    theta0: &[f64],
    run_id: u64,
    key: StreamKey,
) -> Result<EstimatorTerm> {
    let start = Instant::now();
    let weight = scheme.weight(l, p);
    let mut cost = Cost::default();
    let mut attempt = 0;
    loop {
        let k = key.child(attempt as u64);
        match source.increment(scheme, l, p, theta0, k) {
            Ok((increment, c)) => {
                cost += c;
                let theta_hat = source.weighted(weight, &increment);
                return Ok(EstimatorTerm {
                    run_id,
                    seed: k.value(),
                    l,
                    p,
                    t_p: RandomizationScheme::t_p(p),
                    weight,
                    increment,
                    theta_hat,
                    cost,
                    attempts: attempt + 1,
                    wall: start.elapsed(),
                });
            }
            Err(e) if e.is_numerical() && attempt < MAX_RETRIES => {
                warn!("term {run_id} (l={l}, p={p}) attempt {}: {e}; retrying", attempt + 1);
                attempt += 1;
            }
            Err(e) if e.is_numerical() => {
                return Err(Error::RetriesExhausted {
                    run_id,
                    attempts: attempt + 1,
                    last: Box::new(e),
                })
            }
            Err(e) => return Err(e),
        }
    }
}

/// One randomized term: draws `(l, p)` and the starting point from
/// `key`, then [`term_for`].
pub fn single_term(
    source: &dyn TermSource,
    scheme: &RandomizationScheme,
    init: &ThetaInit,
    run_id: u64,
    key: StreamKey,
) -> Result<EstimatorTerm> {
    let mut rng = key.role(Role::Randomization).rng();
    let (l, p) = scheme.sample(&mut rng);
    let theta0 = init.draw(&mut rng);
    term_for(source, scheme, l, p, &theta0, run_id, key.role(Role::Kernel))
}
