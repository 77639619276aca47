//! CSV files exchanged between commands and with the plotting scripts.
//!
//! Each file starts with `# key=value` provenance lines, then a header row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use pomv_core::mlmc::{BenchmarkResult, EstimatorTerm};
use pomv_core::ObservationSeries;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ordered `key=value` provenance entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance(pub Vec<(String, String)>);

impl Provenance {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Provenance(vec![
            ("version".into(), VERSION.into()),
            ("config_hash".into(), config_hash.into()),
            ("seed".into(), seed.to_string()),
        ])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(" "))
}

pub fn theta_label(v: &[f64]) -> String {
    fmt_vec(v)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_table(path: &Path, prov: &Provenance, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = create(path)?;
    for (k, v) in &prov.0 {
        writeln!(out, "# {k}={v}").with_context(|| format!("writing {}", path.display()))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct Table {
    prov: Provenance,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut prov = Provenance::default();
    let mut body = String::new();
    for line in BufReader::new(f).lines() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if let Some(c) = line.strip_prefix('#') {
            if let Some((k, v)) = c.trim().split_once('=') {
                prov.0.push((k.trim().into(), v.trim().into()));
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.with_context(|| format!("parsing {}", path.display()))?.iter().map(String::from).collect());
    }
    Ok(Table { prov, header, rows })
}

fn column(t: &Table, name: &str, path: &Path) -> Result<usize> {
    t.header
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("{}: missing column `{name}`", path.display()))
}

fn prefixed(t: &Table, prefix: &str) -> Vec<usize> {
    let mut cols: Vec<(usize, usize)> = t
        .header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(prefix).and_then(|s| s.parse().ok()).map(|j| (j, i)))
        .collect();
    cols.sort();
    cols.into_iter().map(|(_, i)| i).collect()
}

fn num<T: std::str::FromStr>(s: &str, what: &str, path: &Path) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| anyhow::anyhow!("{}: bad {what} `{s}`: {e}", path.display()))
}

pub fn write_obs(path: &Path, prov: &Provenance, obs: &ObservationSeries) -> Result<()> {
    let d = obs.dim();
    let mut header = vec!["k".to_string()];
    header.extend((0..d).map(|i| format!("y_{i}")));
    let rows: Vec<Vec<String>> = (1..=obs.horizon())
        .map(|k| {
            let mut r = vec![k.to_string()];
            r.extend(obs.get(k).iter().map(|v| v.to_string()));
            r
        })
        .collect();
    write_table(path, prov, &header, &rows)
}

pub fn read_obs(path: &Path) -> Result<(ObservationSeries, Provenance)> {
    let t = read_table(path)?;
    let kc = column(&t, "k", path)?;
    let yc = prefixed(&t, "y_");
    if yc.is_empty() {
        bail!("{}: no y_ columns", path.display());
    }
    let mut ys = Vec::with_capacity(t.rows.len() * yc.len());
    for (i, r) in t.rows.iter().enumerate() {
        let k: usize = num(&r[kc], "k", path)?;
        if k != i + 1 {
            bail!("{}: rows must be k = 1, 2, ... in order; found k = {k} at row {}", path.display(), i + 1);
        }
        for &c in &yc {
            ys.push(num(&r[c], "observation", path)?);
        }
    }
    let obs = ObservationSeries::new(yc.len(), ys).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok((obs, t.prov))
}

/// One row of estimates.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub run_id: u64,
    pub seed: u64,
    pub l: u32,
    pub p: u32,
    pub t_p: usize,
    pub weight: f64,
    pub theta: Vec<f64>,
    pub cost_units: u64,
    pub wall_ms: u64,
}

impl EstimateRow {
    pub fn from_term(t: &EstimatorTerm, record_wall: bool) -> Self {
        EstimateRow {
            run_id: t.run_id,
            seed: t.seed,
            l: t.l,
            p: t.p,
            t_p: t.t_p,
            weight: t.weight,
            theta: t.theta_hat.clone(),
            cost_units: t.cost.0,
            wall_ms: if record_wall { t.wall.as_millis() as u64 } else { 0 },
        }
    }
}

pub fn write_estimates(path: &Path, prov: &Provenance, rows: &[EstimateRow]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.theta.len());
    let mut header: Vec<String> = ["run_id", "seed", "l", "p", "T_p", "weight"].iter().map(|s| s.to_string()).collect();
    header.extend((0..d).map(|i| format!("theta_{i}")));
    header.push("cost_units".into());
    header.push("wall_ms".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.run_id.to_string(),
                r.seed.to_string(),
                r.l.to_string(),
                r.p.to_string(),
                r.t_p.to_string(),
                r.weight.to_string(),
            ];
            v.extend(r.theta.iter().map(|x| x.to_string()));
            v.push(r.cost_units.to_string());
            v.push(r.wall_ms.to_string());
            v
        })
        .collect();
    write_table(path, prov, &header, &body)
}

pub fn read_estimates(path: &Path) -> Result<(Vec<EstimateRow>, Provenance)> {
    let t = read_table(path)?;
    let c = |n: &str| column(&t, n, path);
    let (ri, si, li, pi, ti, wi, ci, mi) = (
        c("run_id")?,
        c("seed")?,
        c("l")?,
        c("p")?,
        c("T_p")?,
        c("weight")?,
        c("cost_units")?,
        c("wall_ms")?,
    );
    let th = prefixed(&t, "theta_");
    let mut rows = Vec::new();
    for r in &t.rows {
        rows.push(EstimateRow {
            run_id: num(&r[ri], "run_id", path)?,
            seed: num(&r[si], "seed", path)?,
            l: num(&r[li], "l", path)?,
            p: num(&r[pi], "p", path)?,
            t_p: num(&r[ti], "T_p", path)?,
            weight: num(&r[wi], "weight", path)?,
            theta: th.iter().map(|&j| num(&r[j], "theta", path)).collect::<Result<_>>()?,
            cost_units: num(&r[ci], "cost_units", path)?,
            wall_ms: num(&r[mi], "wall_ms", path)?,
        });
    }
    Ok((rows, t.prov))
}

/// reference.csv contents.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFile {
    pub theta: Vec<f64>,
    /// NaN when unavailable.
    pub std_error: Vec<f64>,
    pub budget: usize,
}

pub fn write_reference(path: &Path, prov: &Provenance, r: &ReferenceFile) -> Result<()> {
    let header: Vec<String> = ["coordinate", "theta", "std_error", "budget"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = r
        .theta
        .iter()
        .zip(&r.std_error)
        .enumerate()
        .map(|(i, (t, s))| vec![i.to_string(), t.to_string(), s.to_string(), r.budget.to_string()])
        .collect();
    write_table(path, prov, &header, &rows)
}

pub fn read_reference(path: &Path) -> Result<(ReferenceFile, Provenance)> {
    let t = read_table(path)?;
    let (ci, ti, si, bi) = (
        column(&t, "coordinate", path)?,
        column(&t, "theta", path)?,
        column(&t, "std_error", path)?,
        column(&t, "budget", path)?,
    );
    let mut rows: Vec<(usize, f64, f64, usize)> = Vec::new();
    for r in &t.rows {
        rows.push((
            num(&r[ci], "coordinate", path)?,
            num(&r[ti], "theta", path)?,
            num(&r[si], "std_error", path)?,
            num(&r[bi], "budget", path)?,
        ));
    }
    if rows.is_empty() || rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        bail!("{}: coordinates must be 0, 1, ... in order", path.display());
    }
    Ok((
        ReferenceFile {
            theta: rows.iter().map(|r| r.1).collect(),
            std_error: rows.iter().map(|r| r.2).collect(),
            budget: rows[0].3,
        },
        t.prov,
    ))
}

/// One row of benchmark.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCsvRow {
    pub m_bar: usize,
    pub outer_rep: usize,
    pub theta_bar: Vec<f64>,
    pub sq_error: f64,
    pub total_cost: u64,
}

pub fn benchmark_rows(results: &[BenchmarkResult]) -> Vec<BenchmarkCsvRow> {
    results
        .iter()
        .flat_map(|r| r.rows.iter())
        .map(|r| BenchmarkCsvRow {
            m_bar: r.m_bar,
            outer_rep: r.outer_rep,
            theta_bar: r.theta_bar.clone(),
            sq_error: r.sq_error,
            total_cost: r.total_cost.0,
        })
        .collect()
}

pub fn write_benchmark(path: &Path, prov: &Provenance, rows: &[BenchmarkCsvRow]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.theta_bar.len());
    let mut header = vec!["M_bar".to_string(), "outer_rep".to_string()];
    header.extend((0..d).map(|i| format!("theta_bar_{i}")));
    header.push("sq_error".into());
    header.push("total_cost".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.m_bar.to_string(), r.outer_rep.to_string()];
            v.extend(r.theta_bar.iter().map(|x| x.to_string()));
            v.push(r.sq_error.to_string());
            v.push(r.total_cost.to_string());
            v
        })
        .collect();
    write_table(path, prov, &header, &body)
}

pub fn read_benchmark(path: &Path) -> Result<(Vec<BenchmarkCsvRow>, Provenance)> {
    let t = read_table(path)?;
    let (mi, oi, si, ci) = (
        column(&t, "M_bar", path)?,
        column(&t, "outer_rep", path)?,
        column(&t, "sq_error", path)?,
        column(&t, "total_cost", path)?,
    );
    let th = prefixed(&t, "theta_bar_");
    let mut rows = Vec::new();
    for r in &t.rows {
        rows.push(BenchmarkCsvRow {
            m_bar: num(&r[mi], "M_bar", path)?,
            outer_rep: num(&r[oi], "outer_rep", path)?,
            theta_bar: th.iter().map(|&j| num(&r[j], "theta_bar", path)).collect::<Result<_>>()?,
            sq_error: num(&r[si], "sq_error", path)?,
            total_cost: num(&r[ci], "total_cost", path)?,
        });
    }
    Ok((rows, t.prov))
}
