use rand::distr::Distribution;
use rand::Rng;

use super::{categorical, normalize_log_weights, PfConfig};
use crate::error::{Error, Result};
use crate::lawsim::{fill_normals_seq, overflow, LawTable, Stepper};
use crate::model::{Model, ObservationSeries};
use crate::path::LatticePath;
use crate::{delta, steps_per_unit, Cost};

pub(crate) fn check_reference(
    path: &LatticePath,
    level: u32,
    dim: usize,
    horizon: usize,
    what: &str,
) -> Result<()> {
    if path.level() != level || path.dim() != dim || path.horizon() != horizon {
        return Err(Error::precondition(format!(
            "{what} path is (l = {}, d = {}, T = {}), expected (l = {level}, d = {dim}, T = {horizon})",
            path.level(),
            path.dim(),
            path.horizon()
        )));
    }
    if !path.is_finite() {
        return Err(Error::precondition(format!("{what} path has non-finite states")));
    }
    Ok(())
}

pub(crate) fn check_laws(laws: &LawTable, level: u32, horizon: usize) -> Result<()> {
    if laws.level() != level || laws.horizon() < horizon {
        return Err(Error::precondition(format!(
            "law table is (l = {}, T = {}), expected (l = {level}, T >= {horizon})",
            laws.level(),
            laws.horizon()
        )));
    }
    Ok(())
}

/// Particle histories for one filter sweep: block states and ancestor
/// indices, materialised into a path only at selection time.
pub(crate) struct Genealogy {
    m: usize,
    width: usize,
    blocks: Vec<f64>,
    parents: Vec<usize>,
}

impl Genealogy {
    pub(crate) fn new(m: usize, horizon: usize, block_len: usize, dim: usize) -> Self {
        Genealogy {
            m,
            width: block_len * dim,
            blocks: vec![0.0; horizon * m * block_len * dim],
            parents: vec![0; horizon * m],
        }
    }

    /// Block `t` (1-based) of particle `i`.
    pub(crate) fn block(&self, t: usize, i: usize) -> &[f64] {
        let o = ((t - 1) * self.m + i) * self.width;
        &self.blocks[o..o + self.width]
    }

    pub(crate) fn block_mut(&mut self, t: usize, i: usize) -> &mut [f64] {
        let o = ((t - 1) * self.m + i) * self.width;
        &mut self.blocks[o..o + self.width]
    }

    /// Parent of particle `i`'s block `t` among the blocks at `t − 1`.
    pub(crate) fn set_parent(&mut self, t: usize, i: usize, p: usize) {
        self.parents[(t - 1) * self.m + i] = p;
    }

    pub(crate) fn parent(&self, t: usize, i: usize) -> usize {
        self.parents[(t - 1) * self.m + i]
    }

    pub(crate) fn end_state(&self, t: usize, i: usize, dim: usize) -> &[f64] {
        let b = self.block(t, i);
        &b[b.len() - dim..]
    }

    /// Traces particle `i` at the final time back to the start.
    pub(crate) fn trace(&self, mut i: usize, level: u32, dim: usize, horizon: usize, x0: &[f64]) -> Result<LatticePath> {
        let mut states = vec![0.0; (horizon * steps_per_unit(level) + 1) * dim];
        states[..dim].copy_from_slice(x0);
        for t in (1..=horizon).rev() {
            let o = ((t - 1) * steps_per_unit(level) + 1) * dim;
            states[o..o + self.width].copy_from_slice(self.block(t, i));
            if t > 1 {
                i = self.parent(t, i);
            }
        }
        LatticePath::new(level, dim, horizon, states)
    }
}

/// One draw from the conditional particle filter kernel at level `l`.
///
/// `M − 1` free particles propagate each unit-time block through the Euler
/// dynamics whose mean-field input is read from `laws`; slot `M − 1` carries
/// `reference`. Multinomial resampling with weights `G_θ(x_t, y_t)` happens
/// at every unit time `t < T`, and the returned path is the ancestral line of
/// an index drawn from the time-`T` weights.
#[allow(clippy::too_many_arguments)]
pub fn cpf_kernel<R: Rng + ?Sized>(
    reference: &LatticePath,
    laws: &LawTable,
    model: &dyn Model,
    theta: &[f64],
    cfg: PfConfig,
    obs: &ObservationSeries,
    rng: &mut R,
    cost: &mut Cost,
) -> Result<LatticePath> {
    let level = reference.level();
    let d = model.dim_x();
    let horizon = obs.horizon();
    check_reference(reference, level, d, horizon, "reference")?;
    check_laws(laws, level, horizon)?;
    let m = cfg.particles;
    let free = m - 1;
    let s = steps_per_unit(level);
    let dt = delta(level);
    let sd = dt.sqrt();

    let mut gen = Genealogy::new(m, horizon, s, d);
    let mut cur = vec![0.0; free * d];
    let mut next = vec![0.0; free * d];
    let mut dw = vec![0.0; free * d];
    let mut logw = vec![0.0; m];
    let mut stepper = Stepper::default();
    let mut weights = Vec::new();

    for t in 1..=horizon {
        for i in 0..free {
            let start = if t == 1 {
                model.x0()
            } else {
                gen.end_state(t - 1, gen.parent(t, i), d)
            };
            cur[i * d..(i + 1) * d].copy_from_slice(start);
        }
        for j in 0..s {
            let g = (t - 1) * s + j;
            fill_normals_seq(rng, sd, &mut dw);
            stepper.advance(model, theta, laws.cloud(g).positions(), &cur, &dw, dt, &mut next);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(overflow(level, g + 1, theta));
            }
            std::mem::swap(&mut cur, &mut next);
            for i in 0..free {
                gen.block_mut(t, i)[j * d..(j + 1) * d].copy_from_slice(&cur[i * d..(i + 1) * d]);
            }
        }
        gen.block_mut(t, free).copy_from_slice(reference.block(t));

        let y = obs.get(t);
        for (i, lw) in logw.iter_mut().enumerate() {
            *lw = model.obs_logdensity(theta, gen.end_state(t, i, d), y);
        }
        weights = normalize_log_weights(&logw);
        if t < horizon {
            let dist = categorical(&weights);
            for i in 0..free {
                gen.set_parent(t + 1, i, dist.sample(rng));
            }
            gen.set_parent(t + 1, free, free);
        }
    }
    if model.has_interaction() {
        cost.add((m * laws.particles() * s * horizon) as u64);
    }
    let pick = categorical(&weights).sample(rng);
    gen.trace(pick, level, d, horizon, model.x0())
}
