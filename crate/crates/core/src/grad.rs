//! Girsanov gradient functional with particle plug-in laws.
//!
//! Along a lattice path `x_{0:sT}` at level `l` with law table `μ`,
//!
//! ```text
//! Ĥ(θ) = Σ_t ∇_θ log G_θ(x_t, y_t) + Σ_k D_kᵀ (x_{k+1} − x_k − a_k Δ) / σ̃(x_k)²
//! ```
//!
//! where `a_k = a_θ(x_k, ξ̄_θ(x_k, μ_k))` and `D_k` is its total θ-derivative.
//! The route through the law is a forward difference against a law table
//! simulated at `θ(j) = θ − Δ·e_j`, sharing the base table's Brownian
//! increments.

use crate::error::{Error, Result};
use crate::lawsim::{check_diffusion, simulate_coupled_laws, simulate_laws, LawTable};
use crate::model::{Model, ObservationSeries, ThetaBox};
use crate::path::LatticePath;
use crate::rng::StreamKey;
use crate::{delta, Cost};

/// `θ` with coordinate `j` lowered by `Δ_l`, kept inside `bx`.
///
/// Returns the perturbed vector and the signed step `h = θ_j − θ(j)_j`
/// actually taken. At the lower edge of the box the step is taken upwards
/// instead, so `h` is negative and the quotient keeps its meaning.
pub fn perturbed_theta(theta: &[f64], j: usize, level: u32, bx: &ThetaBox) -> (Vec<f64>, f64) {
    let mut out = theta.to_vec();
    let want = delta(level);
    let lo = bx.lo()[j];
    let hi = bx.hi()[j];
    let down = (theta[j] - want).max(lo);
    if theta[j] - down > 0.0 {
        out[j] = down;
    } else {
        out[j] = (theta[j] + want).min(hi);
    }
    let h = theta[j] - out[j];
    (out, h)
}

/// One perturbed law for coordinate `coordinate`.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub coordinate: usize,
    pub theta: Vec<f64>,
    /// Signed step `θ_j − θ(j)_j`.
    pub step: f64,
    /// `None` for models without interaction, whose drift does not see the law.
    pub table: Option<LawTable>,
}

/// Fine and coarse perturbations for one coordinate.
#[derive(Debug, Clone)]
pub struct CoupledPerturbation {
    pub fine: Perturbation,
    pub coarse: Perturbation,
}

/// `Ĥ` together with the perturbation tables it consumed.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub value: Vec<f64>,
    pub perturbation_tables: Vec<Perturbation>,
    pub cost: Cost,
}

/// One perturbation per θ-coordinate, each simulated from `key` so that its
/// Brownian increments coincide with the base table's.
pub fn simulate_perturbation_tables(
    model: &dyn Model,
    theta: &[f64],
    level: u32,
    n: usize,
    horizon: usize,
    key: StreamKey,
    cost: &mut Cost,
) -> Result<Vec<Perturbation>> {
    (0..model.dim_theta())
        .map(|j| {
            let (tj, step) = perturbed_theta(theta, j, level, model.theta_box());
            let table = if model.has_interaction() {
                Some(simulate_laws(model, &tj, level, n, horizon, key, cost)?)
            } else {
                None
            };
            Ok(Perturbation {
                coordinate: j,
                theta: tj,
                step,
                table,
            })
        })
        .collect()
}

/// Coupled analogue of [`simulate_perturbation_tables`]. Both members of a
/// pair are lowered by the fine step `Δ_l`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled_perturbation_tables(
    model: &dyn Model,
    theta_fine: &[f64],
    theta_coarse: &[f64],
    level: u32,
    n_fine: usize,
    n_coarse: usize,
    horizon: usize,
    key: StreamKey,
    cost: &mut Cost,
) -> Result<Vec<CoupledPerturbation>> {
    let bx = model.theta_box();
    (0..model.dim_theta())
        .map(|j| {
            let (tf, hf) = perturbed_theta(theta_fine, j, level, bx);
            let (tc, hc) = perturbed_theta(theta_coarse, j, level, bx);
            let (fine_t, coarse_t) = if model.has_interaction() {
                let c = simulate_coupled_laws(model, &tf, &tc, level, n_fine, n_coarse, horizon, key, cost)?;
                (Some(c.fine), Some(c.coarse))
            } else {
                (None, None)
            };
            Ok(CoupledPerturbation {
                fine: Perturbation {
                    coordinate: j,
                    theta: tf,
                    step: hf,
                    table: fine_t,
                },
                coarse: Perturbation {
                    coordinate: j,
                    theta: tc,
                    step: hc,
                    table: coarse_t,
                },
            })
        })
        .collect()
}

fn check_inputs(
    model: &dyn Model,
    path: &LatticePath,
    law: &LawTable,
    perturbed: &[Perturbation],
    obs: &ObservationSeries,
) -> Result<()> {
    let l = path.level();
    if law.level() != l {
        return Err(Error::precondition(format!(
            "gradient path at level {l} but law table at level {}",
            law.level()
        )));
    }
    if path.horizon() != obs.horizon() || law.horizon() != obs.horizon() {
        return Err(Error::precondition("gradient inputs disagree on the horizon T"));
    }
    if perturbed.len() != model.dim_theta() {
        return Err(Error::precondition(format!(
            "expected {} perturbations, got {}",
            model.dim_theta(),
            perturbed.len()
        )));
    }
    for (j, p) in perturbed.iter().enumerate() {
        if p.coordinate != j || p.step == 0.0 {
            return Err(Error::precondition(format!("malformed perturbation for coordinate {j}")));
        }
        match &p.table {
            Some(t) if t.level() != l || t.horizon() != obs.horizon() => {
                return Err(Error::precondition(format!(
                    "perturbation table {j} at level {} differs from path level {l}",
                    t.level()
                )));
            }
            None if model.has_interaction() => {
                return Err(Error::precondition(format!("missing perturbation table {j}")));
            }
            _ => {}
        }
    }
    Ok(())
}

/// `Ĥ_l^N(θ, x)` along `path` with law `law` and one perturbation per
/// coordinate.
pub fn compute_h(
    model: &dyn Model,
    theta: &[f64],
    path: &LatticePath,
    law: &LawTable,
    perturbed: &[Perturbation],
    obs: &ObservationSeries,
    cost: &mut Cost,
) -> Result<Vec<f64>> {
    check_inputs(model, path, law, perturbed, obs)?;
    let d = model.dim_x();
    let p = model.dim_theta();
    let dt = delta(path.level());
    let interacting = model.has_interaction();

    let mut h = vec![0.0; p];
    let mut a = vec![0.0; d];
    let mut a_pert = vec![0.0; d];
    let mut d_theta = vec![0.0; d * p];
    let mut d_xi = vec![0.0; d];
    let mut resid = vec![0.0; d];
    let mut xi_pert = vec![0.0; p];
    let mut one = [0.0];

    for k in 0..path.steps() {
        let x = path.state(k);
        let x_next = path.state(k + 1);
        let xi = if interacting {
            for (j, pj) in perturbed.iter().enumerate() {
                let t = pj.table.as_ref().expect("checked");
                model.mean_field(&pj.theta, t.cloud(k).positions(), x, &mut one);
                xi_pert[j] = one[0];
            }
            model.mean_field(theta, law.cloud(k).positions(), x, &mut one);
            one[0]
        } else {
            0.0
        };
        model.drift(theta, x, xi, &mut a);
        let s = model.diffusion(x);
        check_diffusion(model, s);
        let inv_s2 = 1.0 / (s * s);
        for i in 0..d {
            resid[i] = (x_next[i] - x[i] - a[i] * dt) * inv_s2;
        }
        if model.drift_partials(theta, x, xi, &mut d_theta, &mut d_xi) {
            for (j, pj) in perturbed.iter().enumerate() {
                let fd = if interacting { (xi - xi_pert[j]) / pj.step } else { 0.0 };
                h[j] += (0..d).map(|i| (d_theta[i * p + j] + d_xi[i] * fd) * resid[i]).sum::<f64>();
            }
        } else {
            for (j, pj) in perturbed.iter().enumerate() {
                let xj = if interacting { xi_pert[j] } else { 0.0 };
                model.drift(&pj.theta, x, xj, &mut a_pert);
                h[j] += (0..d).map(|i| (a[i] - a_pert[i]) / pj.step * resid[i]).sum::<f64>();
            }
        }
    }
    if interacting {
        cost.add(((1 + p) * law.particles() * path.steps()) as u64);
    }

    let mut g = vec![0.0; p];
    for t in 1..=obs.horizon() {
        model.obs_logdensity_grad(theta, path.at_time(t), obs.get(t), &mut g);
        for (hj, gj) in h.iter_mut().zip(&g) {
            *hj += gj;
        }
    }
    if h.iter().all(|v| v.is_finite()) {
        Ok(h)
    } else {
        Err(Error::NumericalOverflow {
            level: path.level(),
            step: path.steps(),
            theta: theta.to_vec(),
        })
    }
}

/// Fresh law and perturbation tables from `key`, then [`compute_h`].
pub fn gradient(
    model: &dyn Model,
    theta: &[f64],
    path: &LatticePath,
    n: usize,
    obs: &ObservationSeries,
    key: StreamKey,
) -> Result<GradientBundle> {
    let mut cost = Cost::default();
    let level = path.level();
    // Without interaction the law is never read; one particle keeps the shapes valid.
    let n = if model.has_interaction() { n } else { 1 };
    let law = simulate_laws(model, theta, level, n, obs.horizon(), key, &mut cost)?;
    let perturbation_tables = simulate_perturbation_tables(model, theta, level, n, obs.horizon(), key, &mut cost)?;
    let value = compute_h(model, theta, path, &law, &perturbation_tables, obs, &mut cost)?;
    Ok(GradientBundle {
        value,
        perturbation_tables,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lawsim::test_models::Drifted;
    use crate::model::{obs_loglik_gaussian, Kuramoto, MeanFieldNn};
    use crate::steps_per_unit;
    use rand::{Rng, RngCore};

    fn random_path(level: u32, horizon: usize, x0: f64, seed: u64) -> LatticePath {
        let mut rng = StreamKey::new(seed).rng();
        let n = horizon * steps_per_unit(level);
        let mut xs = vec![x0];
        for _ in 0..n {
            let last = *xs.last().unwrap();
            xs.push(last + rng.random_range(-1.0..1.0));
        }
        LatticePath::new(level, 1, horizon, xs).unwrap()
    }

    fn obs(horizon: usize) -> ObservationSeries {
        ObservationSeries::new(1, (0..horizon).map(|k| 0.3 * k as f64).collect()).unwrap()
    }

    #[test]
    fn perturbed_theta_examples() {
        let bx = ThetaBox::uniform(2, -5.0, 5.0).unwrap();
        assert_eq!(perturbed_theta(&[0.5], 0, 2, &ThetaBox::uniform(1, -5.0, 5.0).unwrap()), (vec![0.25], 0.25));
        let (t, h) = perturbed_theta(&[0.5, 0.35], 1, 4, &bx);
        assert_eq!(t[0], 0.5);
        assert!((t[1] - 0.2875).abs() < 1e-15 && (h - 0.0625).abs() < 1e-15);
        let (t, h) = perturbed_theta(&[-4.9, 0.0], 0, 2, &bx);
        assert_eq!(t[0], -5.0);
        assert!((h - 0.1).abs() < 1e-12);
        let (t, h) = perturbed_theta(&[-5.0, 0.0], 0, 2, &bx);
        assert_eq!((t[0], h), (-4.75, -0.25));
    }

    #[test]
    fn constant_drift_closed_form() {
        let m = Drifted::constant(1.0, 1.0, 0.7);
        for level in 0..=6u32 {
            for seed in 0..20u64 {
                let horizon = 1 + (seed as usize % 4);
                let path = random_path(level, horizon, 0.7, seed * 31 + level as u64);
                let theta = [0.1 * seed as f64 - 1.0];
                let g = gradient(&m, &theta, &path, 4, &obs(horizon), StreamKey::new(seed)).unwrap();
                let want = path.at_time(horizon)[0] - 0.7 - theta[0] * horizon as f64;
                assert!((g.value[0] - want).abs() < 1e-10, "level {level}: {} vs {want}", g.value[0]);
                let root = [(path.at_time(horizon)[0] - 0.7) / horizon as f64];
                let g0 = gradient(&m, &root, &path, 4, &obs(horizon), StreamKey::new(seed)).unwrap();
                assert!(g0.value[0].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn one_table_per_coordinate() {
        let m = MeanFieldNn::new(3, 0.15, 1.0, 0.5, -1.0).unwrap();
        let t = simulate_perturbation_tables(&m, &[0.5, 0.35], 2, 5, 2, StreamKey::new(1), &mut Cost::default()).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|p| p.table.is_some()));
        let c = Drifted::constant(1.0, 1.0, 0.0);
        let t = simulate_perturbation_tables(&c, &[0.5], 2, 5, 2, StreamKey::new(1), &mut Cost::default()).unwrap();
        assert!(t.len() == 1 && t[0].table.is_none());
    }

    #[test]
    fn theta_free_interaction_at_frozen_law() {
        // With the base table reused for the perturbation the difference of
        // ξ̄ is exactly zero, so the step size cannot matter.
        let m = MeanFieldNn::new(2, 0.15, 1.0, 0.5, -1.0).unwrap();
        let theta = [0.5, 0.35];
        let law = simulate_laws(&m, &theta, 2, 6, 2, StreamKey::new(4), &mut Cost::default()).unwrap();
        let path = law_path(&law, 2, 3);
        let o = ObservationSeries::new(2, vec![0.1, 0.2, 0.3, 0.1]).unwrap();
        let frozen = |h: f64| -> Vec<Perturbation> {
            (0..2)
                .map(|j| {
                    let mut t = theta.to_vec();
                    t[j] -= h;
                    Perturbation {
                        coordinate: j,
                        theta: t,
                        step: h,
                        table: Some(law.clone()),
                    }
                })
                .collect()
        };
        let a = compute_h(&m, &theta, &path, &law, &frozen(0.25), &o, &mut Cost::default()).unwrap();
        let b = compute_h(&m, &theta, &path, &law, &frozen(0.01), &o, &mut Cost::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Particle `i` of a law table as a lattice path.
    fn law_path(law: &LawTable, dim: usize, i: usize) -> LatticePath {
        let mut xs = Vec::new();
        for k in 0..=law.steps() {
            xs.extend_from_slice(law.cloud(k).particle(i));
        }
        LatticePath::new(law.level(), dim, law.horizon(), xs).unwrap()
    }

    /// `a = ξ̄`, `ξ_θ(x, x′) = θ·sin(x − x′)`.
    #[derive(Debug)]
    struct ScaledSine(ThetaBox);

    impl Model for ScaledSine {
        fn name(&self) -> &str {
            "scaled-sine"
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
            &self.0
        }
        fn x0(&self) -> &[f64] {
            &[0.0]
        }
        fn drift(&self, _t: &[f64], _x: &[f64], xi: f64, out: &mut [f64]) {
            out[0] = xi;
        }
        fn drift_partials(&self, _t: &[f64], _x: &[f64], _xi: f64, dt: &mut [f64], dx: &mut [f64]) -> bool {
            dt[0] = 0.0;
            dx[0] = 1.0;
            true
        }
        fn interaction(&self, t: &[f64], x: &[f64], o: &[f64]) -> f64 {
            t[0] * (x[0] - o[0]).sin()
        }
        fn diffusion(&self, _x: &[f64]) -> f64 {
            1.0
        }
        fn diffusion_bounds(&self) -> (f64, f64) {
            (1.0, 1.0)
        }
        fn obs_logdensity(&self, _t: &[f64], x: &[f64], y: &[f64]) -> f64 {
            obs_loglik_gaussian(x, y, 1.0)
        }
        fn obs_logdensity_grad(&self, _t: &[f64], _x: &[f64], _y: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn obs_sample(&self, _t: &[f64], x: &[f64], _rng: &mut dyn RngCore, out: &mut [f64]) {
            out[0] = x[0];
        }
    }

    #[test]
    fn law_difference_recovers_interaction_derivative() {
        let m = ScaledSine(ThetaBox::uniform(1, -5.0, 5.0).unwrap());
        let theta = [0.3];
        let level = 4;
        let key = StreamKey::new(8);
        let path = random_path(level, 2, 0.0, 3);
        let o = obs(2);
        let law = simulate_laws(&m, &theta, level, 200, 2, key, &mut Cost::default()).unwrap();
        let pert = simulate_perturbation_tables(&m, &theta, level, 200, 2, key, &mut Cost::default()).unwrap();
        let h = compute_h(&m, &theta, &path, &law, &pert, &o, &mut Cost::default()).unwrap()[0];
        // Frozen-law analytic version: ∂ξ̄/∂θ = mean sin(x − x′) over μ_θ.
        let dt = delta(level);
        let mut want = 0.0;
        let mut one = [0.0];
        for k in 0..path.steps() {
            let x = path.state(k);
            m.mean_field(&[1.0], law.cloud(k).positions(), x, &mut one);
            let s = one[0];
            want += s * (path.state(k + 1)[0] - x[0] - theta[0] * s * dt);
        }
        assert!((h - want).abs() < 0.05 * want.abs().max(1.0), "{h} vs {want}");
    }

    /// Drift with partials switched off, forcing the full-drift difference.
    #[derive(Debug)]
    struct NoPartials(Drifted);

    impl Model for NoPartials {
        fn name(&self) -> &str {
            "no-partials"
        }
        fn dim_x(&self) -> usize {
            self.0.dim_x()
        }
        fn dim_theta(&self) -> usize {
            1
        }
        fn dim_obs(&self) -> usize {
            self.0.dim_obs()
        }
        fn theta_box(&self) -> &ThetaBox {
            self.0.theta_box()
        }
        fn x0(&self) -> &[f64] {
            self.0.x0()
        }
        fn drift(&self, t: &[f64], x: &[f64], xi: f64, out: &mut [f64]) {
            self.0.drift(t, x, xi, out)
        }
        fn has_interaction(&self) -> bool {
            self.0.has_interaction()
        }
        fn interaction(&self, t: &[f64], x: &[f64], o: &[f64]) -> f64 {
            self.0.interaction(t, x, o)
        }
        fn diffusion(&self, x: &[f64]) -> f64 {
            self.0.diffusion(x)
        }
        fn diffusion_bounds(&self) -> (f64, f64) {
            self.0.diffusion_bounds()
        }
        fn obs_logdensity(&self, t: &[f64], x: &[f64], y: &[f64]) -> f64 {
            self.0.obs_logdensity(t, x, y)
        }
        fn obs_logdensity_grad(&self, t: &[f64], x: &[f64], y: &[f64], out: &mut [f64]) {
            self.0.obs_logdensity_grad(t, x, y, out)
        }
        fn obs_sample(&self, t: &[f64], x: &[f64], rng: &mut dyn RngCore, out: &mut [f64]) {
            self.0.obs_sample(t, x, rng, out)
        }
    }

    #[test]
    fn full_difference_fallback_matches_partials() {
        let mut d = Drifted::constant(0.8, 1.0, 0.2);
        d.reversion = 0.5;
        d.interacting = true;
        let np = NoPartials(d.clone());
        let path = random_path(3, 3, 0.2, 9);
        let key = StreamKey::new(5);
        let a = gradient(&d, &[0.4], &path, 16, &obs(3), key).unwrap();
        let b = gradient(&np, &[0.4], &path, 16, &obs(3), key).unwrap();
        assert!((a.value[0] - b.value[0]).abs() < 1e-9, "{:?} {:?}", a.value, b.value);
        assert_eq!(a.cost, b.cost);
    }

    #[test]
    fn theta_free_observations_add_nothing() {
        let k = Kuramoto::new(0.15, 1.0, 1.5).unwrap();
        let path = random_path(2, 3, 1.5, 2);
        let g1 = gradient(&k, &[0.5], &path, 8, &obs(3), StreamKey::new(1)).unwrap();
        let far = ObservationSeries::new(1, vec![100.0, -50.0, 7.0]).unwrap();
        let g2 = gradient(&k, &[0.5], &path, 8, &far, StreamKey::new(1)).unwrap();
        assert_eq!(g1.value, g2.value);
    }

    #[test]
    fn level_mismatch_is_rejected() {
        let k = Kuramoto::new(0.15, 1.0, 1.5).unwrap();
        let law = simulate_laws(&k, &[0.5], 3, 4, 2, StreamKey::new(1), &mut Cost::default()).unwrap();
        let pert = simulate_perturbation_tables(&k, &[0.5], 3, 4, 2, StreamKey::new(1), &mut Cost::default()).unwrap();
        let path = random_path(2, 2, 1.5, 1);
        let e = compute_h(&k, &[0.5], &path, &law, &pert, &obs(2), &mut Cost::default()).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
    }

    #[test]
    fn cost_counts_mean_field_evaluations() {
        let k = Kuramoto::new(0.15, 1.0, 1.5).unwrap();
        let path = random_path(2, 3, 1.5, 2);
        let g = gradient(&k, &[0.5], &path, 8, &obs(3), StreamKey::new(1)).unwrap();
        // Two law tables of 8² · 12 steps, then 2 · 8 per path step.
        assert_eq!(g.cost.0, 2 * 64 * 12 + 2 * 8 * 12);
    }
}
