use rand::Rng;

use super::cpf::{check_laws, check_reference, Genealogy};
use super::{normalize_log_weights, MaximalCoupling, PfConfig};
use crate::error::{Error, Result};
use crate::lawsim::{fill_normals_seq, overflow, CoupledLawTables, Stepper};
use crate::model::{Model, ObservationSeries};
use crate::path::CoupledPath;
use crate::{delta, steps_per_unit, Cost};

/// One draw from the coupled conditional particle filter kernel at level `l`.
///
/// Free particle pairs move under the synchronous coupling of the level-`l`
/// and level-`l − 1` Euler dynamics (shared Brownian increments, coarse
/// increments are sums of consecutive fine ones); the fine particle reads its
/// mean field from `laws.fine`, the coarse one from `laws.coarse`. Ancestor
/// pairs, and the final pair of indices, are drawn from the maximal coupling
/// of the fine and coarse weight vectors. Slot `M − 1` carries `reference`.
#[allow(clippy::too_many_arguments)]
pub fn ccpf_kernel<R: Rng + ?Sized>(
    reference: &CoupledPath,
    laws: &CoupledLawTables,
    model: &dyn Model,
    theta_fine: &[f64],
    theta_coarse: &[f64],
    cfg: PfConfig,
    obs: &ObservationSeries,
    rng: &mut R,
    cost: &mut Cost,
) -> Result<CoupledPath> {
    let level = reference.fine.level();
    if level == 0 {
        return Err(Error::precondition("coupled kernel needs level >= 1"));
    }
    let d = model.dim_x();
    let horizon = obs.horizon();
    check_reference(&reference.fine, level, d, horizon, "fine reference")?;
    check_reference(&reference.coarse, level - 1, d, horizon, "coarse reference")?;
    check_laws(&laws.fine, level, horizon)?;
    check_laws(&laws.coarse, level - 1, horizon)?;

    let m = cfg.particles;
    let free = m - 1;
    let s = steps_per_unit(level);
    let sc = s / 2;
    let dt = delta(level);
    let sd = dt.sqrt();

    let mut gen_f = Genealogy::new(m, horizon, s, d);
    let mut gen_c = Genealogy::new(m, horizon, sc, d);
    let (mut cur_f, mut next_f) = (vec![0.0; free * d], vec![0.0; free * d]);
    let (mut cur_c, mut next_c) = (vec![0.0; free * d], vec![0.0; free * d]);
    let mut dw = vec![0.0; free * d];
    let mut dw_c = vec![0.0; free * d];
    let mut logw_f = vec![0.0; m];
    let mut logw_c = vec![0.0; m];
    let mut stepper = Stepper::default();
    let mut coupling = None;

    for t in 1..=horizon {
        for i in 0..free {
            let (sf, scs) = if t == 1 {
                (model.x0(), model.x0())
            } else {
                (
                    gen_f.end_state(t - 1, gen_f.parent(t, i), d),
                    gen_c.end_state(t - 1, gen_c.parent(t, i), d),
                )
            };
            cur_f[i * d..(i + 1) * d].copy_from_slice(sf);
            cur_c[i * d..(i + 1) * d].copy_from_slice(scs);
        }
        dw_c.fill(0.0);
        for j in 0..s {
            let g = (t - 1) * s + j;
            fill_normals_seq(rng, sd, &mut dw);
            stepper.advance(model, theta_fine, laws.fine.cloud(g).positions(), &cur_f, &dw, dt, &mut next_f);
            if !next_f.iter().all(|v| v.is_finite()) {
                return Err(overflow(level, g + 1, theta_fine));
            }
            std::mem::swap(&mut cur_f, &mut next_f);
            for i in 0..free {
                gen_f.block_mut(t, i)[j * d..(j + 1) * d].copy_from_slice(&cur_f[i * d..(i + 1) * d]);
            }
            for (a, w) in dw_c.iter_mut().zip(&dw) {
                *a += w;
            }
            if j % 2 == 1 {
                let gc = g / 2;
                let jc = j / 2;
                stepper.advance(
                    model,
                    theta_coarse,
                    laws.coarse.cloud(gc).positions(),
                    &cur_c,
                    &dw_c,
                    2.0 * dt,
                    &mut next_c,
                );
                if !next_c.iter().all(|v| v.is_finite()) {
                    return Err(overflow(level - 1, gc + 1, theta_coarse));
                }
                std::mem::swap(&mut cur_c, &mut next_c);
                for i in 0..free {
                    gen_c.block_mut(t, i)[jc * d..(jc + 1) * d].copy_from_slice(&cur_c[i * d..(i + 1) * d]);
                }
                dw_c.fill(0.0);
            }
        }
        gen_f.block_mut(t, free).copy_from_slice(reference.fine.block(t));
        gen_c.block_mut(t, free).copy_from_slice(reference.coarse.block(t));

        let y = obs.get(t);
        for i in 0..m {
            logw_f[i] = model.obs_logdensity(theta_fine, gen_f.end_state(t, i, d), y);
            logw_c[i] = model.obs_logdensity(theta_coarse, gen_c.end_state(t, i, d), y);
        }
        let c = MaximalCoupling::new(&normalize_log_weights(&logw_f), &normalize_log_weights(&logw_c))?;
        if t < horizon {
            for i in 0..free {
                let (a, b) = c.sample(rng);
                gen_f.set_parent(t + 1, i, a);
                gen_c.set_parent(t + 1, i, b);
            }
            gen_f.set_parent(t + 1, free, free);
            gen_c.set_parent(t + 1, free, free);
        }
        coupling = Some(c);
    }
    if model.has_interaction() {
        cost.add((m * (laws.fine.particles() * s + laws.coarse.particles() * sc) * horizon) as u64);
    }
    let (pf, pc) = coupling.expect("horizon >= 1").sample(rng);
    CoupledPath::new(
        gen_f.trace(pf, level, d, horizon, model.x0())?,
        gen_c.trace(pc, level - 1, d, horizon, model.x0())?,
    )
}
