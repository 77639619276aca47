//! Name-keyed model factories.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::{Activation, Kuramoto, MeanFieldNn, Model, ThetaBox};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Numbers(Vec<f64>),
    Text(String),
}

/// Loosely typed model settings, as read from a config section.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    values: BTreeMap<String, ParamValue>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_number(&mut self, key: &str, v: f64) -> &mut Self {
        self.values.insert(key.to_string(), ParamValue::Numbers(vec![v]));
        self
    }

    pub fn set_numbers(&mut self, key: &str, v: Vec<f64>) -> &mut Self {
        self.values.insert(key.to_string(), ParamValue::Numbers(v));
        self
    }

    pub fn set_text(&mut self, key: &str, v: &str) -> &mut Self {
        self.values.insert(key.to_string(), ParamValue::Text(v.to_string()));
        self
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn number(&self, key: &str, default: f64) -> Result<f64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(ParamValue::Numbers(v)) if v.len() == 1 => Ok(v[0]),
            Some(_) => Err(Error::config(format!("model.{key}"), "expected a single number")),
        }
    }

    /// A list; a single number is broadcast to `len`.
    pub fn numbers(&self, key: &str, len: usize, default: f64) -> Result<Vec<f64>> {
        match self.values.get(key) {
            None => Ok(vec![default; len]),
            Some(ParamValue::Numbers(v)) if v.len() == 1 => Ok(vec![v[0]; len]),
            Some(ParamValue::Numbers(v)) if v.len() == len => Ok(v.clone()),
            Some(ParamValue::Numbers(v)) => Err(Error::config(
                format!("model.{key}"),
                format!("expected {len} numbers, got {}", v.len()),
            )),
            Some(ParamValue::Text(_)) => Err(Error::config(format!("model.{key}"), "expected numbers")),
        }
    }

    pub fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.number(key, default as f64)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::config(format!("model.{key}"), format!("expected a non-negative integer, got {v}")));
        }
        Ok(v as usize)
    }

    pub fn text<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str> {
        match self.values.get(key) {
            None => Ok(default),
            Some(ParamValue::Text(s)) => Ok(s),
            Some(_) => Err(Error::config(format!("model.{key}"), "expected text")),
        }
    }
}

pub trait ModelFactory: Send + Sync {
    /// Keys this factory understands.
    fn keys(&self) -> &'static [&'static str];
    fn build(&self, params: &ModelParams) -> Result<Arc<dyn Model>>;
}

impl<F> ModelFactory for (&'static [&'static str], F)
where
    F: Fn(&ModelParams) -> Result<Arc<dyn Model>> + Send + Sync,
{
    fn keys(&self) -> &'static [&'static str] {
        self.0
    }

    fn build(&self, params: &ModelParams) -> Result<Arc<dyn Model>> {
        (self.1)(params)
    }
}

/// Models selectable by name.
pub struct ModelRegistry {
    factories: BTreeMap<String, Box<dyn ModelFactory>>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRegistry")
            .field("names", &self.factories.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

const KURAMOTO_KEYS: &[&str] = &["sigma", "tau", "x0", "theta_lo", "theta_hi"];
const MFNN_KEYS: &[&str] = &[
    "d", "sigma", "tau", "bias_b", "weight_w", "activation", "x0", "theta_lo", "theta_hi",
];

fn build_kuramoto(p: &ModelParams) -> Result<Arc<dyn Model>> {
    let b = ThetaBox::new(p.numbers("theta_lo", 1, -5.0)?, p.numbers("theta_hi", 1, 5.0)?)?;
    let m = Kuramoto::new(p.number("sigma", 0.15)?, p.number("tau", 1.0)?, p.number("x0", 1.5)?)?
        .with_theta_box(b)?;
    Ok(Arc::new(m))
}

fn build_mfnn(p: &ModelParams) -> Result<Arc<dyn Model>> {
    let d = p.count("d", 10)?;
    let act = p.text("activation", "sigmoid")?;
    let activation = Activation::parse(act)
        .ok_or_else(|| Error::config("model.activation", format!("unknown activation `{act}`")))?;
    let b = ThetaBox::new(p.numbers("theta_lo", 2, -5.0)?, p.numbers("theta_hi", 2, 5.0)?)?;
    let m = MeanFieldNn::new(
        d,
        p.number("sigma", 0.15)?,
        p.number("tau", 1.0)?,
        p.number("bias_b", 0.5)?,
        p.number("weight_w", -1.0)?,
    )?
    .with_activation(activation)
    .with_x0(p.numbers("x0", d.max(1), 0.0)?)?
    .with_theta_box(b)?;
    Ok(Arc::new(m))
}

impl ModelRegistry {
    pub fn empty() -> Self {
        ModelRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// `kuramoto` and `mfnn`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("kuramoto", Box::new((KURAMOTO_KEYS, build_kuramoto)));
        r.register("mfnn", Box::new((MFNN_KEYS, build_mfnn)));
        r
    }

    pub fn register(&mut self, name: &str, factory: Box<dyn ModelFactory>) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, params: &ModelParams) -> Result<Arc<dyn Model>> {
        let factory = self.factories.get(name).ok_or_else(|| {
            Error::config(
                "model.name",
                format!(
                    "unknown model `{name}` (known: {})",
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        if let Some(k) = params.keys().find(|k| !factory.keys().contains(k)) {
            return Err(Error::config(format!("model.{k}"), format!("not a parameter of `{name}`")));
        }
        factory.build(params)
    }
}
