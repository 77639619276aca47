//! Run configuration: a TOML file with one section per stage, plus
//! `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pomv_core::mlmc::{build_randomization, filter_particles, RandomizationScheme, ThetaInit};
use pomv_core::model::{ModelParams, ModelRegistry};
use pomv_core::pfilter::PfConfig;
use pomv_core::sa::StepSchedule;
use pomv_core::{Error, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub sa: SaSection,
    pub pf: PfSection,
    pub mlmc: MlmcSection,
    pub benchmark: BenchmarkSection,
    pub run: RunSection,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub name: String,
    /// Parameter used by `simulate`; defaults per model.
    pub theta_true: Option<Vec<f64>>,
    /// Everything else is handed to the model factory.
    #[serde(flatten)]
    pub params: toml::Table,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            name: "kuramoto".into(),
            theta_true: None,
            params: toml::Table::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Data are simulated at level `L + fine_level_offset`.
    pub fine_level_offset: u32,
    pub signal_particles: usize,
    /// Particles of the signal cloud written to trajectories.csv (0: none).
    pub trajectory_particles: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            horizon: 100,
            fine_level_offset: 2,
            signal_particles: 1000,
            trajectory_particles: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaSection {
    /// Unset means `0.02 / T`, which keeps steps stable as the Fisher
    /// information grows with the horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    pub gamma_exponent: f64,
}

impl Default for SaSection {
    fn default() -> Self {
        let s = StepSchedule::default();
        SaSection {
            gamma0: None,
            gamma_exponent: s.exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PfSection {
    /// `M = max(M_floor, T)` unless `M` is given.
    #[serde(rename = "M_floor")]
    pub m_floor: usize,
    #[serde(rename = "M")]
    pub m: Option<usize>,
}

impl Default for PfSection {
    fn default() -> Self {
        PfSection { m_floor: 16, m: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmcSection {
    pub l_min: u32,
    #[serde(rename = "L")]
    pub l_max: u32,
    pub epsilon: f64,
    #[serde(rename = "P_max")]
    pub p_max: u32,
    pub pmf_p: Option<Vec<f64>>,
    #[serde(rename = "M_bar")]
    pub m_bar: usize,
    /// `N_l = l · particle_factor`; defaults to `L`.
    pub particle_factor: Option<usize>,
    /// Fixed start; otherwise uniform over the middle half of the box.
    pub theta0: Option<Vec<f64>>,
    /// `mlmc` or `stub`.
    pub source: String,
    pub stub_value: Option<Vec<f64>>,
}

impl Default for MlmcSection {
    fn default() -> Self {
        MlmcSection {
            l_min: 2,
            l_max: 4,
            epsilon: 0.9,
            p_max: 10,
            pmf_p: None,
            m_bar: 64,
            particle_factor: None,
            theta0: None,
            source: "mlmc".into(),
            stub_value: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    #[serde(rename = "M_bar_grid")]
    pub m_bar_grid: Vec<usize>,
    pub outer_reps: usize,
    pub reference_budget: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            m_bar_grid: vec![4, 8, 16, 32, 64],
            outer_reps: 20,
            reference_budget: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub master_seed: u64,
    pub worker_count: usize,
    pub output_dir: PathBuf,
    /// Wall-clock times make estimates.csv non-reproducible; off by default.
    pub record_wall_ms: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            master_seed: 1,
            worker_count: 1,
            output_dir: PathBuf::from("."),
            record_wall_ms: false,
        }
    }
}

/// A configuration problem; the CLI exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        ConfigError(e.to_string())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // Reuse the TOML grammar for numbers, booleans and arrays; anything else
    // is taken as a bare string.
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` to a parsed document.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{spec}` is not of the form section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| ConfigError(format!("override key `{path}` needs a section, e.g. mlmc.L")))?;
    let entry = doc
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let table = entry
        .as_table_mut()
        .ok_or_else(|| ConfigError(format!("`{section}` is not a section")))?;
    table.insert(key.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads `path` (if any), then applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| ConfigError(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        Self::from_table(doc)
    }

    pub fn from_table(doc: toml::Table) -> Result<Self, ConfigError> {
        RunConfig::deserialize(toml::Value::Table(doc)).map_err(|e| ConfigError(format!("config: {e}")))
    }

    pub fn model_params(&self) -> Result<ModelParams, ConfigError> {
        let mut p = ModelParams::new();
        for (k, v) in &self.model.params {
            let num = |v: &toml::Value| v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
            match v {
                toml::Value::String(s) => {
                    p.set_text(k, s);
                }
                toml::Value::Array(a) => {
                    let xs: Option<Vec<f64>> = a.iter().map(num).collect();
                    let xs = xs.ok_or_else(|| ConfigError(format!("invalid configuration `model.{k}`: expected numbers")))?;
                    p.set_numbers(k, xs);
                }
                other => {
                    let x = num(other)
                        .ok_or_else(|| ConfigError(format!("invalid configuration `model.{k}`: expected a number or text")))?;
                    p.set_number(k, x);
                }
            }
        }
        Ok(p)
    }

    /// SHA-256 of the settings that determine results. Worker count and
    /// output location are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.worker_count = 0;
        c.run.output_dir = PathBuf::new();
        let text = toml::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<Validated, ConfigError> {
        let model = ModelRegistry::with_builtins().build(&self.model.name, &self.model_params()?)?;
        let bx = model.theta_box();
        let check_theta = |key: &str, t: &[f64]| -> Result<(), ConfigError> {
            if t.len() != model.dim_theta() {
                return Err(Error::config(key, format!("expected {} coordinates, got {}", model.dim_theta(), t.len())).into());
            }
            if !bx.contains(t) {
                return Err(Error::config(key, format!("{t:?} lies outside the parameter box")).into());
            }
            Ok(())
        };
        let theta_true = match &self.model.theta_true {
            Some(t) => t.clone(),
            None => default_theta(&self.model.name, model.dim_theta()),
        };
        check_theta("model.theta_true", &theta_true)?;
        if self.data.horizon == 0 {
            return Err(Error::config("data.T", "must be at least 1").into());
        }
        if self.data.signal_particles == 0 {
            return Err(Error::config("data.signal_particles", "must be at least 1").into());
        }
        if self.data.trajectory_particles > self.data.signal_particles {
            return Err(Error::config("data.trajectory_particles", "cannot exceed data.signal_particles").into());
        }
        let schedule = StepSchedule::new(
            self.sa.gamma0.unwrap_or(0.02 / self.data.horizon as f64),
            self.sa.gamma_exponent,
        )?;
        let m = self.pf.m.unwrap_or_else(|| filter_particles(self.pf.m_floor, self.data.horizon));
        let pf = PfConfig::new(m)?;
        let mut scheme = build_randomization(self.mlmc.l_min, self.mlmc.l_max, self.mlmc.epsilon, self.mlmc.p_max)?;
        if let Some(t) = &self.mlmc.pmf_p {
            scheme = scheme.with_pmf_p(t)?;
        }
        if self.mlmc.m_bar == 0 {
            return Err(Error::config("mlmc.M_bar", "must be at least 1").into());
        }
        let particle_factor = self.mlmc.particle_factor.unwrap_or(self.mlmc.l_max as usize);
        if particle_factor == 0 {
            return Err(Error::config("mlmc.particle_factor", "must be at least 1").into());
        }
        let init = match &self.mlmc.theta0 {
            Some(t) => {
                check_theta("mlmc.theta0", t)?;
                ThetaInit::Fixed(t.clone())
            }
            None => ThetaInit::MiddleHalf(bx.clone()),
        };
        let source = match self.mlmc.source.as_str() {
            "mlmc" => SourceKind::Mlmc,
            "stub" => {
                let v = self
                    .mlmc
                    .stub_value
                    .clone()
                    .unwrap_or_else(|| theta_true.clone());
                if v.len() != model.dim_theta() {
                    return Err(Error::config("mlmc.stub_value", "wrong number of coordinates").into());
                }
                SourceKind::Stub(v)
            }
            other => {
                return Err(Error::config("mlmc.source", format!("unknown source `{other}`, expected mlmc or stub")).into())
            }
        };
        if self.benchmark.outer_reps < 2 {
            return Err(Error::config("benchmark.outer_reps", "must be at least 2").into());
        }
        if self.benchmark.m_bar_grid.is_empty() || self.benchmark.m_bar_grid.contains(&0) {
            return Err(Error::config("benchmark.M_bar_grid", "needs one or more positive entries").into());
        }
        if self.benchmark.reference_budget == 0 {
            return Err(Error::config("benchmark.reference_budget", "must be at least 1").into());
        }
        if self.run.worker_count == 0 {
            return Err(Error::config("run.worker_count", "must be at least 1").into());
        }
        Ok(Validated {
            model,
            theta_true,
            schedule,
            pf,
            scheme,
            particle_factor,
            init,
            source,
        })
    }
}

/// Data-generating parameter when none is configured.
fn default_theta(name: &str, dim: usize) -> Vec<f64> {
    match name {
        "kuramoto" => vec![0.5],
        "mfnn" => vec![0.5, 0.35],
        _ => vec![0.0; dim],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    Mlmc,
    Stub(Vec<f64>),
}

/// Settings after every precondition has been checked.
#[derive(Debug, Clone)]
pub struct Validated {
    pub model: Arc<dyn Model>,
    pub theta_true: Vec<f64>,
    pub schedule: StepSchedule,
    pub pf: PfConfig,
    pub scheme: RandomizationScheme,
    pub particle_factor: usize,
    pub init: ThetaInit,
    pub source: SourceKind,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::load(None, &[]).unwrap();
        let v = c.validate().unwrap();
        assert_eq!(v.theta_true, vec![0.5]);
        assert_eq!(v.pf.particles, 100);
        assert_eq!(v.particle_factor, 4);
    }

    #[test]
    fn overrides_and_types() {
        let c = RunConfig::load(
            None,
            &[
                "mlmc.L=5".into(),
                "model.name=mfnn".into(),
                "model.d=3".into(),
                "mlmc.theta0=[0.1, 0.2]".into(),
                "data.T=10".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.mlmc.l_max, 5);
        assert_eq!(c.model.name, "mfnn");
        let v = c.validate().unwrap();
        assert_eq!(v.model.dim_x(), 3);
        assert_eq!(v.pf.particles, 16);
        assert_eq!(v.init, ThetaInit::Fixed(vec![0.1, 0.2]));
    }

    #[test]
    fn errors_name_keys() {
        let bad = |o: &str| RunConfig::load(None, &[o.to_string()]).and_then(|c| c.validate().map(|_| ())).unwrap_err().0;
        assert!(bad("mlmc.L=1").contains("mlmc.L"));
        assert!(bad("sa.gamma_exponent=0.3").contains("sa.gamma_exponent"));
        assert!(bad("model.sigma=-1").contains("model.sigma"));
        assert!(bad("model.bogus=1").contains("bogus"));
        assert!(bad("mlmc.nope=1").contains("nope"));
        assert!(bad("run.worker_count=0").contains("run.worker_count"));
        assert!(bad("mlmc.source=other").contains("mlmc.source"));
        assert!(bad("novalue").contains("section.key=value"));
    }

    #[test]
    fn hash_ignores_scheduling() {
        let a = RunConfig::load(None, &["run.worker_count=4".into(), "run.output_dir=/tmp/x".into()]).unwrap();
        let b = RunConfig::load(None, &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::load(None, &["run.master_seed=2".into()]).unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
