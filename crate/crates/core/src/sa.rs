//! Markovian stochastic approximation driven by conditional particle filters.
//!
//! Procedure 1 works at a single level. Procedure 2 runs the fine and coarse
//! recursions side by side on one coupled chain so that their difference has
//! small variance.

use std::io::{self, Write};

use log::debug;

use crate::error::{Error, Result};
use crate::grad::{compute_h, gradient, simulate_coupled_perturbation_tables};
use crate::lawsim::{fill_normals_seq, overflow, simulate_coupled_laws, simulate_laws, CoupledLawTables, LawTable, Stepper};
use crate::model::{Model, ObservationSeries};
use crate::path::{CoupledPath, LatticePath};
use crate::pfilter::{ccpf_kernel, cpf_kernel, PfConfig};
use crate::rng::{Role, StreamKey};
use crate::{delta, Cost};

/// `γ_n = γ0 · n^(−exponent)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub gamma0: f64,
    pub exponent: f64,
}

/// `γ_n = 0.1/n`. With exponent 1 the iterate error after `T_p` steps has
/// variance `O(1/T_p)` once `γ0` exceeds half the inverse curvature, which
/// is what keeps the randomized estimator's `Σ_p 1/(P_P(p) T_p)` finite.
impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            gamma0: 0.1,
            exponent: 1.0,
        }
    }
}

impl StepSchedule {
    pub fn new(gamma0: f64, exponent: f64) -> Result<Self> {
        if !(gamma0 > 0.0 && gamma0.is_finite()) {
            return Err(Error::config("sa.gamma0", format!("must be positive, got {gamma0}")));
        }
        if !(exponent > 0.5 && exponent <= 1.0) {
            return Err(Error::config(
                "sa.gamma_exponent",
                format!("must lie in (0.5, 1], got {exponent}"),
            ));
        }
        Ok(StepSchedule { gamma0, exponent })
    }

    pub fn gamma(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        self.gamma0 * (n as f64).powf(-self.exponent)
    }
}

/// Where the update direction comes from.
#[derive(Clone, Copy)]
pub enum GradientRule<'a> {
    /// The particle-plug-in Girsanov functional.
    Girsanov,
    /// A deterministic function of θ, for exercising the recursion itself.
    Stub(&'a (dyn Fn(&[f64]) -> Vec<f64> + Sync)),
}

impl std::fmt::Debug for GradientRule<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradientRule::Girsanov => f.write_str("Girsanov"),
            GradientRule::Stub(_) => f.write_str("Stub"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SaConfig {
    /// Law particles `N_l`.
    pub law_particles: usize,
    pub pf: PfConfig,
    pub schedule: StepSchedule,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct CoupledSaConfig {
    pub n_fine: usize,
    pub n_coarse: usize,
    pub pf: PfConfig,
    pub schedule: StepSchedule,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaState {
    pub n: usize,
    pub theta: Vec<f64>,
    /// Cumulative cost up to and including iteration `n`.
    pub cost: Cost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSaState {
    pub n: usize,
    pub theta_fine: Vec<f64>,
    pub theta_coarse: Vec<f64>,
    pub cost: Cost,
}

/// Iterates `n = 0..=iterations` of Procedure 1 plus the final chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct SaTrace {
    pub level: u32,
    pub states: Vec<SaState>,
    pub path: LatticePath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSaTrace {
    pub level: u32,
    pub states: Vec<CoupledSaState>,
    pub path: CoupledPath,
}

impl SaTrace {
    pub fn theta(&self, n: usize) -> &[f64] {
        &self.states[n].theta
    }

    pub fn last(&self) -> &SaState {
        self.states.last().expect("trace holds theta0")
    }

    /// Rows `run_id,level,n,coordinate,theta_value,cost_units`.
    pub fn write_csv<W: Write>(&self, mut w: W, run_id: u64, with_header: bool) -> io::Result<()> {
        if with_header {
            writeln!(w, "run_id,level,n,coordinate,theta_value,cost_units")?;
        }
        for s in &self.states {
            for (j, v) in s.theta.iter().enumerate() {
                writeln!(w, "{run_id},{},{},{j},{v:?},{}", self.level, s.n, s.cost.0)?;
            }
        }
        Ok(())
    }
}

impl CoupledSaTrace {
    pub fn last(&self) -> &CoupledSaState {
        self.states.last().expect("trace holds theta0")
    }

    /// Fine rows at `level`, coarse rows at `level − 1`.
    pub fn write_csv<W: Write>(&self, mut w: W, run_id: u64, with_header: bool) -> io::Result<()> {
        if with_header {
            writeln!(w, "run_id,level,n,coordinate,theta_value,cost_units")?;
        }
        for s in &self.states {
            for (lvl, th) in [(self.level, &s.theta_fine), (self.level - 1, &s.theta_coarse)] {
                for (j, v) in th.iter().enumerate() {
                    writeln!(w, "{run_id},{lvl},{},{j},{v:?},{}", s.n, s.cost.0)?;
                }
            }
        }
        Ok(())
    }
}

fn law_particles(model: &dyn Model, n: usize) -> usize {
    if model.has_interaction() {
        n
    } else {
        1
    }
}

fn check_start(model: &dyn Model, obs: &ObservationSeries, theta0: &[f64], iterations: usize) -> Result<()> {
    if theta0.len() != model.dim_theta() {
        return Err(Error::precondition(format!(
            "theta0 has {} coordinates, model expects {}",
            theta0.len(),
            model.dim_theta()
        )));
    }
    if !model.theta_box().contains(theta0) {
        return Err(Error::precondition(format!("theta0 {theta0:?} lies outside the parameter box")));
    }
    if iterations == 0 {
        return Err(Error::precondition("stochastic approximation needs at least one iteration"));
    }
    if obs.dim() != model.dim_obs() {
        return Err(Error::precondition(format!(
            "observations have dimension {}, model expects {}",
            obs.dim(),
            model.dim_obs()
        )));
    }
    Ok(())
}

fn update(model: &dyn Model, theta: &mut [f64], gamma: f64, h: &[f64], level: u32, n: usize) {
    for (t, g) in theta.iter_mut().zip(h) {
        *t += gamma * g;
    }
    if model.theta_box().clamp(theta) {
        debug!("level {level} iteration {n}: theta clamped to {theta:?}");
    }
}

/// One path through the plugged-in dynamics with no conditioning.
fn unconditional_path(model: &dyn Model, theta: &[f64], laws: &LawTable, key: StreamKey) -> Result<LatticePath> {
    let level = laws.level();
    let d = model.dim_x();
    let dt = delta(level);
    let mut rng = key.rng();
    let mut cur = model.x0().to_vec();
    let mut next = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut stepper = Stepper::default();
    let mut states = cur.clone();
    for k in 0..laws.steps() {
        fill_normals_seq(&mut rng, dt.sqrt(), &mut dw);
        stepper.advance(model, theta, laws.cloud(k).positions(), &cur, &dw, dt, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(overflow(level, k + 1, theta));
        }
        std::mem::swap(&mut cur, &mut next);
        states.extend_from_slice(&cur);
    }
    LatticePath::new(level, d, laws.horizon(), states)
}

/// Coupled unconditional pair driven by shared increments.
fn unconditional_pair(
    model: &dyn Model,
    theta: &[f64],
    laws: &CoupledLawTables,
    key: StreamKey,
) -> Result<CoupledPath> {
    let level = laws.fine.level();
    let d = model.dim_x();
    let dt = delta(level);
    let mut rng = key.rng();
    let (mut f, mut c) = (model.x0().to_vec(), model.x0().to_vec());
    let mut next = vec![0.0; d];
    let mut dw = vec![0.0; d];
    let mut dw_c = vec![0.0; d];
    let mut stepper = Stepper::default();
    let (mut fs, mut cs) = (f.clone(), c.clone());
    for k in 0..laws.fine.steps() {
        fill_normals_seq(&mut rng, dt.sqrt(), &mut dw);
        stepper.advance(model, theta, laws.fine.cloud(k).positions(), &f, &dw, dt, &mut next);
        std::mem::swap(&mut f, &mut next);
        fs.extend_from_slice(&f);
        for (a, w) in dw_c.iter_mut().zip(&dw) {
            *a += w;
        }
        if k % 2 == 1 {
            stepper.advance(model, theta, laws.coarse.cloud(k / 2).positions(), &c, &dw_c, 2.0 * dt, &mut next);
            std::mem::swap(&mut c, &mut next);
            cs.extend_from_slice(&c);
            dw_c.fill(0.0);
        }
        if !(f.iter().all(|v| v.is_finite()) && c.iter().all(|v| v.is_finite())) {
            return Err(overflow(level, k + 1, theta));
        }
    }
    let horizon = laws.fine.horizon();
    CoupledPath::new(
        LatticePath::new(level, d, horizon, fs)?,
        LatticePath::new(level - 1, d, horizon, cs)?,
    )
}

/// Procedure 1 at `level`: `iterations` steps from `theta0`.
///
/// Iteration `n` draws its randomness from `key.child(n)`; the initial path
/// comes from `key.child(0)`.
pub fn procedure1_run(
    model: &dyn Model,
    obs: &ObservationSeries,
    level: u32,
    cfg: &SaConfig,
    theta0: &[f64],
    rule: GradientRule<'_>,
    key: StreamKey,
) -> Result<SaTrace> {
    check_start(model, obs, theta0, cfg.iterations)?;
    let horizon = obs.horizon();
    let n_law = law_particles(model, cfg.law_particles);
    let mut cost = Cost::default();
    let init = key.child(0);
    let laws0 = simulate_laws(model, theta0, level, n_law, horizon, init.role(Role::KernelLaws), &mut cost)?;
    let mut path = unconditional_path(model, theta0, &laws0, init.role(Role::Init))?;
    let mut theta = theta0.to_vec();
    let mut states = Vec::with_capacity(cfg.iterations + 1);
    states.push(SaState {
        n: 0,
        theta: theta.clone(),
        cost,
    });
    for n in 1..=cfg.iterations {
        let kn = key.child(n as u64);
        let laws = simulate_laws(model, &theta, level, n_law, horizon, kn.role(Role::KernelLaws), &mut cost)?;
        let mut rng = kn.role(Role::Kernel).rng();
        path = cpf_kernel(&path, &laws, model, &theta, cfg.pf, obs, &mut rng, &mut cost)?;
        let h = match rule {
            GradientRule::Girsanov => {
                let b = gradient(model, &theta, &path, n_law, obs, kn.role(Role::GradientLaws))?;
                cost += b.cost;
                b.value
            }
            GradientRule::Stub(f) => f(&theta),
        };
        update(model, &mut theta, cfg.schedule.gamma(n), &h, level, n);
        states.push(SaState {
            n,
            theta: theta.clone(),
            cost,
        });
    }
    Ok(SaTrace { level, states, path })
}

/// Procedure 2 at `level ≥ 1`: fine recursion at `level`, coarse at
/// `level − 1`, both started from `theta0` and advanced with the same `γ_n`.
pub fn procedure2_run(
    model: &dyn Model,
    obs: &ObservationSeries,
    level: u32,
    cfg: &CoupledSaConfig,
    theta0: &[f64],
    rule: GradientRule<'_>,
    key: StreamKey,
) -> Result<CoupledSaTrace> {
    if level == 0 {
        return Err(Error::precondition("procedure 2 needs level >= 1"));
    }
    check_start(model, obs, theta0, cfg.iterations)?;
    let horizon = obs.horizon();
    let nf = law_particles(model, cfg.n_fine);
    let nc = law_particles(model, cfg.n_coarse);
    let mut cost = Cost::default();
    let init = key.child(0);
    let laws0 = simulate_coupled_laws(model, theta0, theta0, level, nf, nc, horizon, init.role(Role::KernelLaws), &mut cost)?;
    let mut z = unconditional_pair(model, theta0, &laws0, init.role(Role::Init))?;
    let mut tf = theta0.to_vec();
    let mut tc = theta0.to_vec();
    let mut states = Vec::with_capacity(cfg.iterations + 1);
    states.push(CoupledSaState {
        n: 0,
        theta_fine: tf.clone(),
        theta_coarse: tc.clone(),
        cost,
    });
    for n in 1..=cfg.iterations {
        let kn = key.child(n as u64);
        let laws = simulate_coupled_laws(model, &tf, &tc, level, nf, nc, horizon, kn.role(Role::KernelLaws), &mut cost)?;
        let mut rng = kn.role(Role::Kernel).rng();
        z = ccpf_kernel(&z, &laws, model, &tf, &tc, cfg.pf, obs, &mut rng, &mut cost)?;
        let (hf, hc) = match rule {
            GradientRule::Girsanov => {
                let gk = kn.role(Role::GradientLaws);
                let g = simulate_coupled_laws(model, &tf, &tc, level, nf, nc, horizon, gk, &mut cost)?;
                let pert = simulate_coupled_perturbation_tables(model, &tf, &tc, level, nf, nc, horizon, gk, &mut cost)?;
                let (pf, pc): (Vec<_>, Vec<_>) = pert.into_iter().map(|p| (p.fine, p.coarse)).unzip();
                (
                    compute_h(model, &tf, &z.fine, &g.fine, &pf, obs, &mut cost)?,
                    compute_h(model, &tc, &z.coarse, &g.coarse, &pc, obs, &mut cost)?,
                )
            }
            GradientRule::Stub(f) => (f(&tf), f(&tc)),
        };
        let gamma = cfg.schedule.gamma(n);
        update(model, &mut tf, gamma, &hf, level, n);
        update(model, &mut tc, gamma, &hc, level - 1, n);
        states.push(CoupledSaState {
            n,
            theta_fine: tf.clone(),
            theta_coarse: tc.clone(),
            cost,
        });
    }
    Ok(CoupledSaTrace { level, states, path: z })
}
