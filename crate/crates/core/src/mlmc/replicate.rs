use rayon::prelude::*;

use super::term::{single_term, EstimatorTerm, TermSource, ThetaInit};
use super::RandomizationScheme;
use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::Cost;

/// Average of a batch of terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicates {
    pub terms: Vec<EstimatorTerm>,
    pub mean: Vec<f64>,
    /// `None` with fewer than two terms.
    pub std_error: Option<Vec<f64>>,
    pub total_cost: Cost,
}

/// Coordinatewise mean and standard error of the mean.
pub fn aggregate(terms: &[EstimatorTerm]) -> (Vec<f64>, Option<Vec<f64>>) {
    let n = terms.len();
    let d = terms.first().map_or(0, |t| t.theta_hat.len());
    let mut mean = vec![0.0; d];
    for t in terms {
        for (m, v) in mean.iter_mut().zip(&t.theta_hat) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    if n < 2 {
        return (mean, None);
    }
    let mut var = vec![0.0; d];
    for t in terms {
        for ((s, v), m) in var.iter_mut().zip(&t.theta_hat).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let se = var.iter().map(|s| (s / (n - 1) as f64 / n as f64).sqrt()).collect();
    (mean, Some(se))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::config("run.worker_count", "must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config("run.worker_count", e.to_string()))
}

/// Runs one term per `(run_id, key)` on `workers` threads. Output order
/// follows the input, so results do not depend on scheduling.
pub fn run_terms(
    source: &dyn TermSource,
    scheme: &RandomizationScheme,
    init: &ThetaInit,
    jobs: &[(u64, StreamKey)],
    workers: usize,
) -> Result<Vec<EstimatorTerm>> {
    pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(id, key)| single_term(source, scheme, init, id, key))
            .collect()
    })
}

/// `M̄` independent terms keyed `(master_seed, j)` and their average.
pub fn run_replicates(
    source: &dyn TermSource,
    scheme: &RandomizationScheme,
    init: &ThetaInit,
    m_bar: usize,
    workers: usize,
    master_seed: u64,
) -> Result<Replicates> {
    if m_bar == 0 {
        return Err(Error::config("mlmc.M_bar", "must be at least 1"));
    }
    let root = StreamKey::new(master_seed);
    let jobs: Vec<_> = (0..m_bar as u64).map(|j| (j, root.child(j))).collect();
    let terms = run_terms(source, scheme, init, &jobs, workers)?;
    let (mean, std_error) = aggregate(&terms);
    let total_cost = terms.iter().fold(Cost::default(), |c, t| Cost(c.0 + t.cost.0));
    Ok(Replicates {
        terms,
        mean,
        std_error,
        total_cost,
    })
}

/// High-budget average standing in for the level-`L` maximizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEstimate {
    pub theta: Vec<f64>,
    pub std_error: Option<Vec<f64>>,
    pub budget: usize,
    pub total_cost: Cost,
}

pub fn reference_mle(
    source: &dyn TermSource,
    scheme: &RandomizationScheme,
    init: &ThetaInit,
    budget: usize,
    workers: usize,
    master_seed: u64,
) -> Result<ReferenceEstimate> {
    if budget == 0 {
        return Err(Error::config("benchmark.reference_budget", "must be at least 1"));
    }
    let r = run_replicates(source, scheme, init, budget, workers, master_seed)?;
    Ok(ReferenceEstimate {
        theta: r.mean,
        std_error: r.std_error,
        budget,
        total_cost: r.total_cost,
    })
}

/// One outer replication of the benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub m_bar: usize,
    pub outer_rep: usize,
    pub theta_bar: Vec<f64>,
    pub sq_error: f64,
    pub total_cost: Cost,
}

/// All outer replications for one `M̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub m_bar: usize,
    pub rows: Vec<BenchmarkRow>,
    pub mse: f64,
    pub mean_cost: f64,
}

/// For each `M̄` in `grid`, `reps` independent averages of `M̄` terms and
/// their squared distance to `reference`.
#[allow(clippy::too_many_arguments)]
pub fn mse_benchmark(
    source: &dyn TermSource,
    scheme: &RandomizationScheme,
    init: &ThetaInit,
    grid: &[usize],
    reps: usize,
    reference: &[f64],
    workers: usize,
    master_seed: u64,
) -> Result<Vec<BenchmarkResult>> {
    if reps < 2 {
        return Err(Error::config("benchmark.outer_reps", format!("must be at least 2, got {reps}")));
    }
    if grid.is_empty() || grid.contains(&0) {
        return Err(Error::config("benchmark.M_bar_grid", "needs positive entries"));
    }
    if reference.len() != source.dim() {
        return Err(Error::precondition(format!(
            "reference has {} coordinates, estimator has {}",
            reference.len(),
            source.dim()
        )));
    }
    let root = StreamKey::new(master_seed);
    // One flat job list keeps every worker busy across grid points.
    let mut jobs = Vec::new();
    for &m in grid {
        for i in 0..reps {
            let k = root.child(m as u64).child(i as u64);
            jobs.extend((0..m as u64).map(|j| (j, k.child(j))));
        }
    }
    let terms = run_terms(source, scheme, init, &jobs, workers)?;
    let mut it = terms.iter();
    let mut out = Vec::with_capacity(grid.len());
    for &m in grid {
        let mut rows = Vec::with_capacity(reps);
        for i in 0..reps {
            let batch: Vec<EstimatorTerm> = it.by_ref().take(m).cloned().collect();
            let (theta_bar, _) = aggregate(&batch);
            let sq_error = theta_bar.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum();
            let total_cost = Cost(batch.iter().map(|t| t.cost.0).sum());
            rows.push(BenchmarkRow {
                m_bar: m,
                outer_rep: i,
                theta_bar,
                sq_error,
                total_cost,
            });
        }
        let mse = rows.iter().map(|r| r.sq_error).sum::<f64>() / reps as f64;
        let mean_cost = rows.iter().map(|r| r.total_cost.0 as f64).sum::<f64>() / reps as f64;
        out.push(BenchmarkResult {
            m_bar: m,
            rows,
            mse,
            mean_cost,
        });
    }
    Ok(out)
}
