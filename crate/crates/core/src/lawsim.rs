//! Interacting-particle approximation of the marginal laws `μ^l_{kΔ_l,θ}`.
//!
//! `N` particles start at `x_0` and are advanced by Euler–Maruyama on the
//! level-`l` grid; the drift of every particle uses the empirical measure of
//! the whole cloud at the previous grid time. The coupled variant advances a
//! fine cloud at level `l` and a coarse cloud at level `l − 1`, where coarse
//! particle `i` is driven by the pairwise sums of fine particle `i`'s
//! increments.

use std::io::{self, Write};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::StreamKey;
use crate::{delta, steps_per_unit, Cost};

/// The empirical law at one grid time.
#[derive(Debug, Clone, Copy)]
pub struct ParticleCloud<'a> {
    pub level: u32,
    pub time_index: usize,
    dim: usize,
    positions: &'a [f64],
}

impl<'a> ParticleCloud<'a> {
    pub fn new(level: u32, time_index: usize, dim: usize, positions: &'a [f64]) -> Self {
        ParticleCloud {
            level,
            time_index,
            dim,
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &'a [f64] {
        self.positions
    }

    pub fn particle(&self, i: usize) -> &'a [f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }
}

/// Particle clouds at every grid time `k = 0..=T·2^l` for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct LawTable {
    level: u32,
    particles: usize,
    dim: usize,
    horizon: usize,
    theta: Vec<f64>,
    positions: Vec<f64>,
}

impl LawTable {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn steps(&self) -> usize {
        self.horizon * steps_per_unit(self.level)
    }

    pub fn cloud(&self, k: usize) -> ParticleCloud<'_> {
        let w = self.particles * self.dim;
        ParticleCloud::new(self.level, k, self.dim, &self.positions[k * w..(k + 1) * w])
    }

    /// Rows `level,time_index,particle_index,coordinate,value`.
    pub fn write_csv<W: Write>(&self, mut w: W, with_header: bool) -> io::Result<()> {
        if with_header {
            writeln!(w, "level,time_index,particle_index,coordinate,value")?;
        }
        for k in 0..=self.steps() {
            let c = self.cloud(k);
            for i in 0..self.particles {
                for (j, v) in c.particle(i).iter().enumerate() {
                    writeln!(w, "{},{},{},{},{}", self.level, k, i, j, v)?;
                }
            }
        }
        Ok(())
    }
}

/// Fine table at level `l` with `θ`, coarse table at level `l − 1` with `θ′`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledLawTables {
    pub fine: LawTable,
    pub coarse: LawTable,
}

/// `(1/N) Σ_j ξ_θ(x, X^j)`.
pub fn mean_field_integral(
    cloud: ParticleCloud<'_>,
    model: &dyn Model,
    theta: &[f64],
    x: &[f64],
) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::precondition("mean-field integral over an empty cloud"));
    }
    if !model.has_interaction() {
        return Ok(0.0);
    }
    let mut out = [0.0];
    model.mean_field(theta, cloud.positions(), x, &mut out);
    Ok(out[0])
}

/// One Euler–Maruyama step `x + a_θ(x, ξ̄)·Δ + σ̃(x)·dW` with `ξ̄` taken
/// over `cloud`.
pub fn euler_step(
    x: &[f64],
    cloud: ParticleCloud<'_>,
    model: &dyn Model,
    theta: &[f64],
    delta: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    let xi = mean_field_integral(cloud, model, theta, x)?;
    let mut out = vec![0.0; x.len()];
    let mut a = vec![0.0; x.len()];
    step_state(model, theta, x, xi, delta, dw, &mut a, &mut out);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NumericalOverflow {
            level: cloud.level,
            step: cloud.time_index,
            theta: theta.to_vec(),
        })
    }
}

#[inline]
pub(crate) fn check_diffusion(model: &dyn Model, s: f64) {
    let (lo, hi) = model.diffusion_bounds();
    debug_assert!(
        s > 0.0 && s >= lo && s <= hi,
        "diffusion {s} outside declared bounds [{lo}, {hi}]"
    );
}

#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_state(
    model: &dyn Model,
    theta: &[f64],
    x: &[f64],
    xi_bar: f64,
    dt: f64,
    dw: &[f64],
    drift_buf: &mut [f64],
    out: &mut [f64],
) {
    model.drift(theta, x, xi_bar, drift_buf);
    let s = model.diffusion(x);
    check_diffusion(model, s);
    for i in 0..x.len() {
        out[i] = x[i] + drift_buf[i] * dt + s * dw[i];
    }
}

/// Reusable buffers for advancing many states against one cloud.
#[derive(Debug, Default)]
pub(crate) struct Stepper {
    xi: Vec<f64>,
    drift: Vec<f64>,
}

impl Stepper {
    /// Advances `states` (flat) by one step using `cloud` as the law; `dw`
    /// holds the increments, already scaled to variance `dt`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn advance(
        &mut self,
        model: &dyn Model,
        theta: &[f64],
        cloud: &[f64],
        states: &[f64],
        dw: &[f64],
        dt: f64,
        out: &mut [f64],
    ) {
        let d = model.dim_x();
        let n = states.len() / d;
        self.xi.resize(n, 0.0);
        self.drift.resize(d, 0.0);
        if model.has_interaction() {
            model.mean_field(theta, cloud, states, &mut self.xi);
        } else {
            self.xi.fill(0.0);
        }
        for i in 0..n {
            let r = i * d..(i + 1) * d;
            step_state(
                model,
                theta,
                &states[r.clone()],
                self.xi[i],
                dt,
                &dw[r.clone()],
                &mut self.drift,
                &mut out[r],
            );
        }
    }
}

pub(crate) fn fill_normals(rngs: &mut [ChaCha8Rng], dim: usize, scale: f64, out: &mut [f64]) {
    for (rng, chunk) in rngs.iter_mut().zip(out.chunks_exact_mut(dim)) {
        for v in chunk {
            let z: f64 = StandardNormal.sample(rng);
            *v = scale * z;
        }
    }
}

/// Fills `out` with scaled standard normals drawn sequentially from `rng`.
pub(crate) fn fill_normals_seq<R: rand::Rng + ?Sized>(rng: &mut R, scale: f64, out: &mut [f64]) {
    for v in out {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
}

pub(crate) fn overflow(level: u32, step: usize, theta: &[f64]) -> Error {
    Error::NumericalOverflow {
        level,
        step,
        theta: theta.to_vec(),
    }
}

fn interaction_cost(model: &dyn Model, targets: usize, cloud: usize) -> u64 {
    if model.has_interaction() {
        (targets * cloud) as u64
    } else {
        0
    }
}

fn check_args(level: u32, n: usize, horizon: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::precondition("law simulation needs N >= 1 particles"));
    }
    if horizon == 0 {
        return Err(Error::precondition("law simulation needs T >= 1"));
    }
    if level > 24 {
        return Err(Error::precondition(format!("level {level} is too fine")));
    }
    Ok(())
}

/// Streams the clouds of a single-level law simulation to `visit(k, cloud)`
/// without storing them.
#[allow(clippy::too_many_arguments)]
pub fn simulate_laws_with<F>(
    model: &dyn Model,
    theta: &[f64],
    level: u32,
    n: usize,
    horizon: usize,
    key: StreamKey,
    cost: &mut Cost,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &[f64]),
{
    check_args(level, n, horizon)?;
    let d = model.dim_x();
    let dt = delta(level);
    let sd = dt.sqrt();
    let steps = horizon * steps_per_unit(level);
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| key.particle_rng(i)).collect();
    let mut cur: Vec<f64> = model.x0().iter().copied().cycle().take(n * d).collect();
    let mut next = vec![0.0; n * d];
    let mut dw = vec![0.0; n * d];
    let mut stepper = Stepper::default();
    visit(0, &cur);
    for k in 0..steps {
        fill_normals(&mut rngs, d, sd, &mut dw);
        stepper.advance(model, theta, &cur, &cur, &dw, dt, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(overflow(level, k + 1, theta));
        }
        std::mem::swap(&mut cur, &mut next);
        visit(k + 1, &cur);
    }
    cost.add(interaction_cost(model, n, n) * steps as u64);
    Ok(())
}

/// Law table for `θ` at level `l` with `N` particles.
///
/// The Brownian increments of particle `i` come from stream `i` of `key`, so
/// a second call with the same key and a different `θ` reuses them.
pub fn simulate_laws(
    model: &dyn Model,
    theta: &[f64],
    level: u32,
    n: usize,
    horizon: usize,
    key: StreamKey,
    cost: &mut Cost,
) -> Result<LawTable> {
    let d = model.dim_x();
    let steps = horizon * steps_per_unit(level);
    let mut positions = Vec::with_capacity((steps + 1) * n * d);
    simulate_laws_with(model, theta, level, n, horizon, key, cost, |_, c| {
        positions.extend_from_slice(c)
    })?;
    Ok(LawTable {
        level,
        particles: n,
        dim: d,
        horizon,
        theta: theta.to_vec(),
        positions,
    })
}

/// Coupled law tables: fine at level `l` with `θ_fine` and `N_fine`
/// particles, coarse at level `l − 1` with `θ_coarse` and `N_coarse`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled_laws(
    model: &dyn Model,
    theta_fine: &[f64],
    theta_coarse: &[f64],
    level: u32,
    n_fine: usize,
    n_coarse: usize,
    horizon: usize,
    key: StreamKey,
    cost: &mut Cost,
) -> Result<CoupledLawTables> {
    if level == 0 {
        return Err(Error::precondition("coupled laws need level >= 1"));
    }
    check_args(level, n_coarse, horizon)?;
    if n_fine < n_coarse {
        return Err(Error::precondition(format!(
            "coupled laws need N_fine >= N_coarse, got {n_fine} < {n_coarse}"
        )));
    }
    let d = model.dim_x();
    let dt = delta(level);
    let sd = dt.sqrt();
    let steps = horizon * steps_per_unit(level);
    let mut rngs: Vec<ChaCha8Rng> = (0..n_fine).map(|i| key.particle_rng(i)).collect();
    let x0 = model.x0();
    let mut fine: Vec<f64> = x0.iter().copied().cycle().take(n_fine * d).collect();
    let mut coarse: Vec<f64> = x0.iter().copied().cycle().take(n_coarse * d).collect();
    let mut next_f = vec![0.0; n_fine * d];
    let mut next_c = vec![0.0; n_coarse * d];
    let mut dw = vec![0.0; n_fine * d];
    let mut dw_c = vec![0.0; n_coarse * d];
    let mut fine_pos = Vec::with_capacity((steps + 1) * n_fine * d);
    let mut coarse_pos = Vec::with_capacity((steps / 2 + 1) * n_coarse * d);
    fine_pos.extend_from_slice(&fine);
    coarse_pos.extend_from_slice(&coarse);
    let mut stepper = Stepper::default();
    for k in 0..steps {
        fill_normals(&mut rngs, d, sd, &mut dw);
        stepper.advance(model, theta_fine, &fine, &fine, &dw, dt, &mut next_f);
        if !next_f.iter().all(|v| v.is_finite()) {
            return Err(overflow(level, k + 1, theta_fine));
        }
        std::mem::swap(&mut fine, &mut next_f);
        fine_pos.extend_from_slice(&fine);
        for (acc, w) in dw_c.iter_mut().zip(&dw[..n_coarse * d]) {
            *acc += w;
        }
        if k % 2 == 1 {
            stepper.advance(model, theta_coarse, &coarse, &coarse, &dw_c, 2.0 * dt, &mut next_c);
            if !next_c.iter().all(|v| v.is_finite()) {
                return Err(overflow(level - 1, k.div_ceil(2), theta_coarse));
            }
            std::mem::swap(&mut coarse, &mut next_c);
            coarse_pos.extend_from_slice(&coarse);
            dw_c.fill(0.0);
        }
    }
    cost.add(interaction_cost(model, n_fine, n_fine) * steps as u64);
    cost.add(interaction_cost(model, n_coarse, n_coarse) * (steps / 2) as u64);
    Ok(CoupledLawTables {
        fine: LawTable {
            level,
            particles: n_fine,
            dim: d,
            horizon,
            theta: theta_fine.to_vec(),
            positions: fine_pos,
        },
        coarse: LawTable {
            level: level - 1,
            particles: n_coarse,
            dim: d,
            horizon,
            theta: theta_coarse.to_vec(),
            positions: coarse_pos,
        },
    })
}


#[cfg(test)]
mod tests {
    use super::test_models::Drifted;
    use super::*;
    use crate::model::Kuramoto;

    fn zero_drift() -> Drifted {
        Drifted::constant(1.0, 1.0, 0.0)
    }

    #[test]
    fn mean_field_examples() {
        use std::f64::consts::{FRAC_PI_2, PI};
        let k = Kuramoto::new(0.15, 1.0, 0.0).unwrap();
        let two = [0.0, PI];
        let c = ParticleCloud::new(0, 0, 1, &two);
        assert!(mean_field_integral(c, &k, &[0.5], &[FRAC_PI_2]).unwrap().abs() < 1e-15);
        let same = [0.8; 5];
        let c = ParticleCloud::new(0, 0, 1, &same);
        assert!(mean_field_integral(c, &k, &[0.5], &[0.8]).unwrap().abs() < 1e-15);
        let one = [0.0];
        let c = ParticleCloud::new(0, 0, 1, &one);
        assert!((mean_field_integral(c, &k, &[0.5], &[FRAC_PI_2]).unwrap() - 1.0).abs() < 1e-15);
        let c = ParticleCloud::new(0, 0, 1, &[]);
        assert!(mean_field_integral(c, &k, &[0.5], &[0.0]).is_err());
    }

    #[test]
    fn euler_step_examples() {
        let m = zero_drift();
        let one = [0.0];
        let c = ParticleCloud::new(0, 0, 1, &one);
        assert!((euler_step(&[2.0], c, &m, &[0.0], 0.25, &[0.1]).unwrap()[0] - 2.1).abs() < 1e-15);
        assert_eq!(euler_step(&[2.0], c, &m, &[0.0], 0.25, &[0.0]).unwrap()[0], 2.0);
        let k = Kuramoto::new(0.15, 1.0, 0.0).unwrap();
        let cloud = [0.7; 4];
        let c = ParticleCloud::new(2, 0, 1, &cloud);
        let x = euler_step(&[0.7], c, &k, &[0.5], 0.25, &[0.0]).unwrap();
        assert!((x[0] - (0.7 + 0.125)).abs() < 1e-15);
        let big = [1e308];
        let c = ParticleCloud::new(3, 9, 1, &one);
        let e = euler_step(&big, c, &m, &[1e308], 1.0, &[0.0]).unwrap_err();
        assert!(matches!(e, Error::NumericalOverflow { level: 3, step: 9, .. }));
    }

    #[test]
    fn initial_cloud_is_at_x0_and_sizes_are_constant() {
        let k = Kuramoto::new(0.15, 1.0, 1.5).unwrap();
        let mut cost = Cost::default();
        let t = simulate_laws(&k, &[0.5], 2, 100, 3, StreamKey::new(1), &mut cost).unwrap();
        assert!(t.cloud(0).positions().iter().all(|&x| x == 1.5));
        for s in 0..=t.steps() {
            assert_eq!(t.cloud(s).len(), 100);
        }
        assert_eq!(cost.0, 100 * 100 * 4 * 3);
    }

    #[test]
    fn single_particle_without_drift_is_a_random_walk() {
        let m = zero_drift();
        let key = StreamKey::new(11);
        let t = simulate_laws(&m, &[0.0], 3, 1, 2, key, &mut Cost::default()).unwrap();
        let mut rng = key.particle_rng(0);
        let mut x = 0.0;
        for k in 1..=t.steps() {
            let z: f64 = StandardNormal.sample(&mut rng);
            x += z * delta(3).sqrt();
            assert!((t.cloud(k).particle(0)[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let k = Kuramoto::new(0.15, 1.0, 1.5).unwrap();
        let a = simulate_laws(&k, &[0.5], 3, 20, 4, StreamKey::new(5), &mut Cost::default()).unwrap();
        let b = simulate_laws(&k, &[0.5], 3, 20, 4, StreamKey::new(5), &mut Cost::default()).unwrap();
        assert_eq!(a, b);
        let c = simulate_laws(&k, &[0.5], 3, 20, 4, StreamKey::new(6), &mut Cost::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn coupled_tables_restrict_exactly_without_drift() {
        let m = zero_drift();
        let ct = simulate_coupled_laws(&m, &[0.0], &[0.0], 4, 6, 6, 3, StreamKey::new(2), &mut Cost::default())
            .unwrap();
        for kc in 0..=ct.coarse.steps() {
            let f = ct.fine.cloud(2 * kc);
            let c = ct.coarse.cloud(kc);
            for i in 0..6 {
                assert!((f.particle(i)[0] - c.particle(i)[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coarse_particles_use_leading_fine_increments() {
        let m = zero_drift();
        let key = StreamKey::new(8);
        let ct = simulate_coupled_laws(&m, &[0.0], &[0.0], 2, 8, 4, 2, key, &mut Cost::default()).unwrap();
        for kc in 0..=ct.coarse.steps() {
            for i in 0..4 {
                assert!((ct.fine.cloud(2 * kc).particle(i)[0] - ct.coarse.cloud(kc).particle(i)[0]).abs() < 1e-12);
            }
        }
        assert_eq!(ct.coarse.particles(), 4);
        let e = simulate_coupled_laws(&m, &[0.0], &[0.0], 2, 2, 4, 2, key, &mut Cost::default());
        assert!(e.is_err());
    }

    #[test]
    fn fine_part_of_coupled_tables_equals_single_level_table() {
        let k = Kuramoto::new(0.15, 1.0, 1.5).unwrap();
        let key = StreamKey::new(3);
        let single = simulate_laws(&k, &[0.5], 3, 12, 2, key, &mut Cost::default()).unwrap();
        let ct = simulate_coupled_laws(&k, &[0.5], &[0.2], 3, 12, 8, 2, key, &mut Cost::default()).unwrap();
        assert_eq!(single, ct.fine);
    }

    #[test]
    fn constant_drift_mean_is_exact_in_expectation() {
        // a = θ, no interaction: E[X_T] = x0 + θT at every level.
        let m = Drifted::constant(0.5, 1.0, 1.0);
        for level in [0u32, 2, 4] {
            let t = simulate_laws(&m, &[0.3], level, 4000, 2, StreamKey::new(level as u64), &mut Cost::default())
                .unwrap();
            let c = t.cloud(t.steps());
            let mean = c.positions().iter().sum::<f64>() / 4000.0;
            let se = 0.5 * (2.0f64).sqrt() / (4000f64).sqrt();
            assert!((mean - 1.6).abs() < 3.0 * se, "level {level}: {mean}");
        }
    }

    #[test]
    fn kuramoto_cloud_drifts_at_frequency() {
        // Nearly synchronised cloud: mean field ~ 0, so the mean phase moves at θ.
        let k = Kuramoto::new(0.15, 1.0, 1.5).unwrap();
        let means: Vec<f64> = (0..50)
            .map(|s| {
                let t = simulate_laws(&k, &[0.5], 4, 100, 10, StreamKey::new(100 + s), &mut Cost::default())
                    .unwrap();
                t.cloud(t.steps()).positions().iter().sum::<f64>() / 100.0
            })
            .collect();
        let m = means.iter().sum::<f64>() / 50.0;
        let sd = (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0).sqrt();
        assert!((m - 6.5).abs() < 3.0 * sd / 50f64.sqrt() + 1e-9, "{m} sd {sd}");
    }

    #[test]
    fn coupling_error_shrinks_with_level() {
        let k = Kuramoto::new(0.15, 1.0, 1.5).unwrap();
        let mut vars = Vec::new();
        for level in 2..=6u32 {
            let mut acc = 0.0;
            for s in 0..100 {
                let ct = simulate_coupled_laws(
                    &k, &[0.5], &[0.5], level, 8, 8, 10, StreamKey::new(1000 + s), &mut Cost::default(),
                )
                .unwrap();
                let f = ct.fine.cloud(ct.fine.steps()).particle(0)[0];
                let c = ct.coarse.cloud(ct.coarse.steps()).particle(0)[0];
                acc += (f - c).powi(2);
            }
            vars.push(acc / 100.0);
        }
        for w in vars.windows(2) {
            assert!(w[1] < w[0], "{vars:?}");
        }
    }

    #[test]
    fn csv_dump_has_one_row_per_value() {
        let k = Kuramoto::new(0.15, 1.0, 1.5).unwrap();
        let t = simulate_laws(&k, &[0.5], 1, 3, 1, StreamKey::new(1), &mut Cost::default()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf, true).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 1 + 3 * 3);
        assert!(s.starts_with("level,time_index,particle_index,coordinate,value\n1,0,0,0,1.5"));
    }
}
