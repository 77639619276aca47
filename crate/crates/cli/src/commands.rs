//! The four subcommands. Each takes a loaded configuration and returns the
//! path it wrote.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;

use pomv_core::lawsim::simulate_laws_with;
use pomv_core::mlmc::{mse_benchmark, reference_mle, run_replicates, ConstantStub, SaTermSource, TermSource};
use pomv_core::rng::{Role, StreamKey};
use pomv_core::{steps_per_unit, Cost, ObservationSeries};

use crate::config::{ConfigError, RunConfig, SourceKind, Validated};
use crate::io::{
    benchmark_rows, read_obs, read_reference, theta_label, write_benchmark, write_estimates, write_obs,
    write_reference, EstimateRow, Provenance, ReferenceFile,
};

/// Resolved paths and scheduling for one invocation.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

impl RunContext {
    pub fn from_config(cfg: &RunConfig) -> Self {
        RunContext {
            out_dir: cfg.run.output_dir.clone(),
            seed: cfg.run.master_seed,
            workers: cfg.run.worker_count,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance::new(&cfg.hash(), cfg.run.master_seed).with("model", &cfg.model.name)
}

fn source<'a>(v: &'a Validated, obs: &'a ObservationSeries) -> Box<dyn TermSource + 'a> {
    match &v.source {
        SourceKind::Mlmc => Box::new(SaTermSource {
            model: v.model.as_ref(),
            obs,
            particle_factor: v.particle_factor,
            pf: v.pf,
            schedule: v.schedule,
        }),
        SourceKind::Stub(value) => Box::new(ConstantStub { value: value.clone() }),
    }
}

fn load_obs(cfg: &RunConfig, v: &Validated, path: &Path) -> Result<ObservationSeries> {
    let (obs, _) = read_obs(path)?;
    if obs.horizon() != cfg.data.horizon {
        return Err(ConfigError(format!(
            "{} holds T = {} observations but data.T = {}",
            path.display(),
            obs.horizon(),
            cfg.data.horizon
        ))
        .into());
    }
    if obs.dim() != v.model.dim_obs() {
        return Err(ConfigError(format!(
            "{} has {}-dimensional observations, model `{}` expects {}",
            path.display(),
            obs.dim(),
            cfg.model.name,
            v.model.dim_obs()
        ))
        .into());
    }
    Ok(obs)
}

/// Simulates a signal at level `L + offset` and writes obs.csv (and
/// trajectories.csv when requested).
pub fn cmd_simulate(cfg: &RunConfig, ctx: &RunContext) -> Result<PathBuf> {
    let v = cfg.validate()?;
    let model = v.model.as_ref();
    let d = model.dim_x();
    let level = cfg.mlmc.l_max + cfg.data.fine_level_offset;
    let horizon = cfg.data.horizon;
    let n = cfg.data.signal_particles;
    let s = steps_per_unit(level);
    let key = StreamKey::new(ctx.seed);
    let keep = cfg.data.trajectory_particles;

    let prov = provenance(cfg)
        .with("theta_true", theta_label(&v.theta_true))
        .with("fine_level", level)
        .with("signal_particles", n);
    let mut traj = if keep > 0 {
        let p = ctx.path("trajectories.csv");
        std::fs::create_dir_all(&ctx.out_dir).with_context(|| format!("creating {}", ctx.out_dir.display()))?;
        let mut w = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
        for (k, val) in &prov.0 {
            writeln!(w, "# {k}={val}")?;
        }
        writeln!(w, "level,time_index,particle_index,coordinate,value")?;
        Some(w)
    } else {
        None
    };
    let mut io_err = None;
    let mut signal = Vec::with_capacity(horizon * d);
    simulate_laws_with(model, &v.theta_true, level, n, horizon, key.role(Role::Signal), &mut Cost::default(), |k, cloud| {
        if k > 0 && k % s == 0 {
            signal.extend_from_slice(&cloud[..d]);
        }
        if let Some(w) = traj.as_mut() {
            for i in 0..keep {
                for j in 0..d {
                    if let Err(e) = writeln!(w, "{level},{k},{i},{j},{}", cloud[i * d + j]) {
                        io_err.get_or_insert(e);
                    }
                }
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing trajectories.csv");
    }
    if let Some(mut w) = traj {
        w.flush().context("writing trajectories.csv")?;
    }
    let mut rng = key.role(Role::Observation).rng();
    let mut ys = vec![0.0; horizon * model.dim_obs()];
    for (t, y) in ys.chunks_exact_mut(model.dim_obs()).enumerate() {
        model.obs_sample(&v.theta_true, &signal[t * d..(t + 1) * d], &mut rng, y);
    }
    let obs = ObservationSeries::new(model.dim_obs(), ys)?;
    let path = ctx.path("obs.csv");
    write_obs(&path, &prov, &obs)?;
    info!("wrote {} observations to {}", horizon, path.display());
    Ok(path)
}

/// Summary printed by `estimate`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub theta_bar: Vec<f64>,
    pub std_error: Option<Vec<f64>>,
    pub total_cost: u64,
    pub path: PathBuf,
}

pub fn cmd_estimate(cfg: &RunConfig, ctx: &RunContext, obs_path: &Path) -> Result<EstimateSummary> {
    let v = cfg.validate()?;
    let obs = load_obs(cfg, &v, obs_path)?;
    let src = source(&v, &obs);
    let r = run_replicates(src.as_ref(), &v.scheme, &v.init, cfg.mlmc.m_bar, ctx.workers, ctx.seed)?;
    let rows: Vec<EstimateRow> = r.terms.iter().map(|t| EstimateRow::from_term(t, cfg.run.record_wall_ms)).collect();
    let path = ctx.path("estimates.csv");
    let prov = provenance(cfg).with("M_bar", cfg.mlmc.m_bar).with("source", src.name());
    write_estimates(&path, &prov, &rows)?;
    Ok(EstimateSummary {
        theta_bar: r.mean,
        std_error: r.std_error,
        total_cost: r.total_cost.0,
        path,
    })
}

pub fn cmd_reference(cfg: &RunConfig, ctx: &RunContext, obs_path: &Path) -> Result<(ReferenceFile, PathBuf)> {
    let v = cfg.validate()?;
    let obs = load_obs(cfg, &v, obs_path)?;
    let src = source(&v, &obs);
    let budget = cfg.benchmark.reference_budget;
    let r = reference_mle(src.as_ref(), &v.scheme, &v.init, budget, ctx.workers, ctx.seed)?;
    let file = ReferenceFile {
        std_error: r.std_error.clone().unwrap_or_else(|| vec![f64::NAN; r.theta.len()]),
        theta: r.theta,
        budget,
    };
    let path = ctx.path("reference.csv");
    let prov = provenance(cfg).with("terms", budget).with("total_cost", r.total_cost.0);
    write_reference(&path, &prov, &file)?;
    Ok((file, path))
}

/// Per-`M̄` summary printed by `benchmark`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSummary {
    pub m_bar: Vec<usize>,
    pub mse: Vec<f64>,
    pub mean_cost: Vec<f64>,
    pub path: PathBuf,
}

pub fn cmd_benchmark(cfg: &RunConfig, ctx: &RunContext, obs_path: &Path, reference: &Path) -> Result<BenchmarkSummary> {
    let v = cfg.validate()?;
    let obs = load_obs(cfg, &v, obs_path)?;
    if !reference.exists() {
        return Err(ConfigError(format!(
            "reference file {} not found; run `pomv reference` with the same configuration first",
            reference.display()
        ))
        .into());
    }
    let (refr, _) = read_reference(reference)?;
    let src = source(&v, &obs);
    let res = mse_benchmark(
        src.as_ref(),
        &v.scheme,
        &v.init,
        &cfg.benchmark.m_bar_grid,
        cfg.benchmark.outer_reps,
        &refr.theta,
        ctx.workers,
        ctx.seed,
    )?;
    let path = ctx.path("benchmark.csv");
    let prov = provenance(cfg)
        .with("reference", theta_label(&refr.theta))
        .with("outer_reps", cfg.benchmark.outer_reps);
    write_benchmark(&path, &prov, &benchmark_rows(&res))?;
    Ok(BenchmarkSummary {
        m_bar: res.iter().map(|r| r.m_bar).collect(),
        mse: res.iter().map(|r| r.mse).collect(),
        mean_cost: res.iter().map(|r| r.mean_cost).collect(),
        path,
    })
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
