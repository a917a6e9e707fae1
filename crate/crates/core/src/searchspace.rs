//! Categorical search space, per-parameter softmax policies, sampling and
//! text round trips of candidate configurations.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter names of the default space.
pub mod names {
    pub const ACTIVATION: &str = "Activation layer";
    pub const ATTENTION: &str = "Attention layer";
    pub const CONV: &str = "Conv. layer type";
    pub const DROPOUT: &str = "Dropout probability";
    pub const INIT_SIZE: &str = "Init layer size";
    pub const BLOCKS_IN: &str = "Blocks in";
    pub const DEPTH_IN: &str = "Depth in";
    pub const STRIDE_IN: &str = "Stride in";
    pub const SCALING: &str = "Scaling factor";
    pub const WINDOW: &str = "Temporal window";
    pub const DIST_IN: &str = "Graph distance (in)";
    pub const REDUCTION: &str = "Reduction factor";
    pub const BLOCKS_MAIN: &str = "Blocks main";
    pub const DEPTH_MAIN: &str = "Depth main";
    pub const DIST_MAIN: &str = "Graph distance (main)";
    pub const SHRINKAGE: &str = "Shrinkage";
    pub const RESIDUAL: &str = "Residual layer";
    pub const ADAPTIVE: &str = "Adaptive";
    pub const OPTIMIZER: &str = "Optimizer";
    pub const LR: &str = "Learning rate";
    pub const WEIGHT_DECAY: &str = "Weight decay";
    pub const MOMENTUM: &str = "Momentum";
    pub const BATCH_SIZE: &str = "Batch size";
}

/// Shipped configuration files.
pub mod presets {
    pub const DEFAULT_SPACE: &str = include_str!("../configs/search_space.toml");
    /// Larger init widths, more blocks and deeper blocks.
    pub const LARGE_SPACE: &str = include_str!("../configs/search_space_large.toml");
    /// Smallest blocks and depths with the narrowest stem, sized for single-core runs.
    pub const DESK_SPACE: &str = include_str!("../configs/search_space_desk.toml");
    pub const REFERENCE_XSUB: &str = include_str!("../configs/reference_xsub.toml");
    pub const REFERENCE_XVIEW: &str = include_str!("../configs/reference_xview.toml");
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Common,
    InputStream,
    MainStream,
    Optimizer,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Common, Group::InputStream, Group::MainStream, Group::Optimizer];

    pub fn name(self) -> &'static str {
        match self {
            Group::Common => "Common",
            Group::InputStream => "InputStream",
            Group::MainStream => "MainStream",
            Group::Optimizer => "Optimizer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown parameter group '{s}'")))
    }

    /// Architecture groups form the alpha part of a configuration.
    pub fn is_architecture(self) -> bool {
        self != Group::Optimizer
    }
}

/// A categorical choice.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Text(a), Value::Text(b)) => a == b,
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            },
        }
    }
}

impl Value {
    pub fn text(s: &str) -> Self {
        Value::Text(s.to_string())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int(i) => Some(i as f64),
            Value::Float(f) => Some(f),
            _ => None,
        }
    }

    pub fn as_usize(&self) -> Option<usize> {
        match *self {
            Value::Int(i) if i >= 0 => Some(i as usize),
            Value::Float(f) if f >= 0.0 && f.fract() == 0.0 => Some(f as usize),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    fn from_toml(v: &toml::Value, context: &str) -> Result<Self> {
        match v {
            toml::Value::String(s) => Ok(Value::Text(s.clone())),
            toml::Value::Integer(i) => Ok(Value::Int(*i)),
            toml::Value::Float(f) => Ok(Value::Float(*f)),
            toml::Value::Boolean(b) => Ok(Value::Bool(*b)),
            other => Err(Error::Schema(format!("{context}: unsupported value {other}"))),
        }
    }
}

/// Renders as a TOML literal.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Text(s) => write!(f, "{s:?}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub group: Group,
    pub values: Vec<Value>,
}

impl Parameter {
    pub fn new(name: &str, group: Group, values: Vec<Value>) -> Self {
        Self {
            name: name.to_string(),
            group,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, v: &Value) -> Option<usize> {
        self.values.iter().position(|x| x == v)
    }
}

/// Ordered parameter registry plus values pinned for parameters left out of the search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceDef {
    parameters: Vec<Parameter>,
    fixed: Vec<(String, Value)>,
}

fn texts(v: &[&str]) -> Vec<Value> {
    v.iter().map(|s| Value::text(s)).collect()
}

fn ints(v: &[i64]) -> Vec<Value> {
    v.iter().map(|&i| Value::Int(i)).collect()
}

fn floats(v: &[f64]) -> Vec<Value> {
    v.iter().map(|&x| Value::Float(x)).collect()
}

fn bools() -> Vec<Value> {
    vec![Value::Bool(true), Value::Bool(false)]
}

/// The full default space.
pub fn default_search_space() -> SearchSpaceDef {
    use names::*;
    use Group::*;
    let p = Parameter::new;
    SearchSpaceDef {
        parameters: vec![
            p(ACTIVATION, Common, texts(&["Relu", "Relu6", "Hardswish", "Swish"])),
            p(ATTENTION, Common, texts(&["Stja", "Ca", "Fa", "Ja", "Pa"])),
            p(CONV, Common, texts(&["Basic", "Bottleneck", "Sep", "SG", "V3", "Shuffle"])),
            p(DROPOUT, Common, floats(&[0.15, 0.2, 0.25, 0.3])),
            p(INIT_SIZE, Common, ints(&[64, 128, 156, 195, 256])),
            p(BLOCKS_IN, InputStream, ints(&[1, 2, 3])),
            p(DEPTH_IN, InputStream, ints(&[1, 2, 3])),
            p(STRIDE_IN, InputStream, ints(&[1, 2, 3])),
            p(SCALING, InputStream, floats(&[0.4, 0.6, 0.8])),
            p(WINDOW, InputStream, ints(&[3, 5, 7])),
            p(DIST_IN, InputStream, ints(&[2, 3, 4])),
            p(REDUCTION, InputStream, floats(&[1.225, 1.25, 1.275, 1.3, 1.325, 1.35])),
            p(BLOCKS_MAIN, MainStream, ints(&[3, 4, 5, 6])),
            p(DEPTH_MAIN, MainStream, ints(&[1, 2, 3, 4])),
            p(DIST_MAIN, MainStream, ints(&[7, 9, 11])),
            p(SHRINKAGE, MainStream, ints(&[1, 2, 4, 6])),
            p(RESIDUAL, MainStream, bools()),
            p(ADAPTIVE, MainStream, bools()),
            p(OPTIMIZER, Optimizer, texts(&["SGD", "Adam", "AdamW"])),
            p(LR, Optimizer, floats(&[0.1, 0.05, 0.01])),
            p(WEIGHT_DECAY, Optimizer, floats(&[0.0, 0.01, 0.001, 0.0001])),
            p(MOMENTUM, Optimizer, floats(&[0.5, 0.9, 0.99])),
            p(BATCH_SIZE, Optimizer, ints(&[8, 16, 24])),
        ],
        fixed: Vec::new(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceFile {
    #[serde(default)]
    fixed: toml::Table,
    #[serde(default)]
    parameter: Vec<ParamFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    name: String,
    group: String,
    values: Vec<toml::Value>,
}

impl SearchSpaceDef {
    pub fn new(parameters: Vec<Parameter>, mut fixed: Vec<(String, Value)>) -> Result<Self> {
        fixed.sort_by(|a, b| a.0.cmp(&b.0));
        if parameters.is_empty() {
            return Err(Error::Schema("search space has no parameters".into()));
        }
        for (i, p) in parameters.iter().enumerate() {
            if p.values.len() < 2 {
                return Err(Error::Schema(format!("parameter '{}' needs at least 2 values", p.name)));
            }
            if parameters[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Schema(format!("duplicate parameter '{}'", p.name)));
            }
            for (j, v) in p.values.iter().enumerate() {
                if p.values[..j].contains(v) {
                    return Err(Error::Schema(format!("parameter '{}' lists {v} twice", p.name)));
                }
            }
        }
        for (i, (name, _)) in fixed.iter().enumerate() {
            if parameters.iter().any(|p| &p.name == name) {
                return Err(Error::Schema(format!("'{name}' is both searched and fixed")));
            }
            if fixed[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Schema(format!("'{name}' fixed twice")));
            }
        }
        Ok(Self { parameters, fixed })
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn fixed(&self) -> &[(String, Value)] {
        &self.fixed
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.index_of(name).map(|i| &self.parameters[i])
    }

    /// Number of distinct configurations.
    pub fn cardinality(&self) -> u128 {
        self.parameters.iter().map(|p| p.values.len() as u128).product()
    }

    /// Replace the value list of a searched parameter.
    pub fn with_values(mut self, name: &str, values: Vec<Value>) -> Result<Self> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown parameter '{name}'")))?;
        self.parameters[i].values = values;
        Self::new(self.parameters, self.fixed)
    }

    /// Remove a parameter from the search and pin it to `value`.
    pub fn with_fixed(mut self, name: &str, value: Value) -> Result<Self> {
        self.parameters.retain(|p| p.name != name);
        self.fixed.retain(|(n, _)| n != name);
        self.fixed.push((name.to_string(), value));
        Self::new(self.parameters, self.fixed)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpaceFile = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let parameters = file
            .parameter
            .iter()
            .map(|p| {
                let values = p
                    .values
                    .iter()
                    .map(|v| Value::from_toml(v, &p.name))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Parameter {
                    name: p.name.clone(),
                    group: Group::parse(&p.group)?,
                    values,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let fixed = file
            .fixed
            .iter()
            .map(|(k, v)| Ok((k.clone(), Value::from_toml(v, k)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(parameters, fixed)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let mut out = String::from("# Searchable parameters; `fixed` pins values for parameters left out.\n");
        if !self.fixed.is_empty() {
            out.push_str("\n[fixed]\n");
            for (name, v) in &self.fixed {
                out.push_str(&format!("{name:?} = {v}\n"));
            }
        }
        for p in &self.parameters {
            let values: Vec<String> = p.values.iter().map(Value::to_string).collect();
            out.push_str(&format!(
                "\n[[parameter]]\nname = {:?}\ngroup = {:?}\nvalues = [{}]\n",
                p.name,
                p.group.name(),
                values.join(", ")
            ));
        }
        out
    }

    /// Value of `name` under `config`: searched, pinned, or the first entry of the default list.
    pub fn value_of(&self, config: &CandidateConfig, name: &str) -> Result<Value> {
        if let Some(i) = self.index_of(name) {
            let idx = *config
                .indices
                .get(i)
                .ok_or_else(|| Error::Schema(format!("configuration lacks '{name}'")))?;
            return self.parameters[i]
                .values
                .get(idx)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("index {idx} out of range for '{name}'")));
        }
        if let Some((_, v)) = self.fixed.iter().find(|(n, _)| n == name) {
            return Ok(v.clone());
        }
        default_search_space()
            .parameter(name)
            .map(|p| p.values[0].clone())
            .ok_or_else(|| Error::Schema(format!("unknown parameter '{name}'")))
    }

    fn check(&self, config: &CandidateConfig) -> Result<()> {
        if config.indices.len() != self.parameters.len() {
            return Err(Error::Schema(format!(
                "configuration has {} entries, space has {} parameters",
                config.indices.len(),
                self.parameters.len()
            )));
        }
        for (p, &i) in self.parameters.iter().zip(&config.indices) {
            if i >= p.values.len() {
                return Err(Error::Schema(format!("index {i} out of range for '{}'", p.name)));
            }
        }
        Ok(())
    }
}

/// One logit vector per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    pub logits: Vec<Vec<f64>>,
}

pub fn init_policies(space: &SearchSpaceDef) -> PolicySet {
    PolicySet {
        logits: space.parameters.iter().map(|p| vec![0.0; p.values.len()]).collect(),
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl PolicySet {
    pub fn probabilities(&self, param: usize) -> Vec<f64> {
        softmax(&self.logits[param])
    }

    pub fn all_probabilities(&self) -> Vec<Vec<f64>> {
        (0..self.logits.len()).map(|i| self.probabilities(i)).collect()
    }

    /// Log-probability of drawing `config` jointly.
    pub fn log_prob(&self, config: &CandidateConfig) -> f64 {
        config
            .indices
            .iter()
            .enumerate()
            .map(|(p, &i)| self.probabilities(p)[i].ln())
            .sum()
    }

    pub fn matches(&self, space: &SearchSpaceDef) -> bool {
        self.logits.len() == space.len() && self.logits.iter().zip(&space.parameters).all(|(l, p)| l.len() == p.len())
    }
}

/// Chosen value index per searched parameter, in space order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub indices: Vec<usize>,
}

impl CandidateConfig {
    /// `(name, value)` pairs of the architecture groups.
    pub fn architecture(&self, space: &SearchSpaceDef) -> Vec<(String, Value)> {
        self.group_slice(space, true)
    }

    /// `(name, value)` pairs of the optimizer group.
    pub fn hyperparameters(&self, space: &SearchSpaceDef) -> Vec<(String, Value)> {
        self.group_slice(space, false)
    }

    fn group_slice(&self, space: &SearchSpaceDef, arch: bool) -> Vec<(String, Value)> {
        space
            .parameters
            .iter()
            .zip(&self.indices)
            .filter(|(p, _)| p.group.is_architecture() == arch)
            .map(|(p, &i)| (p.name.clone(), p.values[i].clone()))
            .collect()
    }
}

/// Draw each parameter independently from its softmax.
pub fn sample(policies: &PolicySet, rng: &mut impl Rng) -> CandidateConfig {
    let indices = policies
        .logits
        .iter()
        .map(|l| {
            let probs = softmax(l);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.len() - 1
        })
        .collect();
    CandidateConfig { indices }
}

/// Uniform draw from the space, independent of any policy.
pub fn sample_uniform(space: &SearchSpaceDef, rng: &mut impl Rng) -> CandidateConfig {
    CandidateConfig {
        indices: space.parameters.iter().map(|p| rng.random_range(0..p.values.len())).collect(),
    }
}

/// Highest-probability value per parameter; ties go to the lowest index.
pub fn argmax_config(policies: &PolicySet) -> CandidateConfig {
    let indices = policies
        .logits
        .iter()
        .map(|l| {
            let mut best = 0;
            for (i, v) in l.iter().enumerate() {
                if *v > l[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    CandidateConfig { indices }
}

/// `"name" = value` lines in space order.
pub fn encode_config(space: &SearchSpaceDef, config: &CandidateConfig) -> Result<String> {
    space.check(config)?;
    let mut out = String::new();
    for (p, &i) in space.parameters.iter().zip(&config.indices) {
        out.push_str(&format!("{:?} = {}\n", p.name, p.values[i]));
    }
    Ok(out)
}

pub fn decode_config(space: &SearchSpaceDef, text: &str) -> Result<CandidateConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if let Some(unknown) = table.keys().find(|k| space.index_of(k).is_none()) {
        return Err(Error::Schema(format!("unknown parameter '{unknown}'")));
    }
    let indices = space
        .parameters
        .iter()
        .map(|p| {
            let raw = table
                .get(&p.name)
                .ok_or_else(|| Error::Schema(format!("missing parameter '{}'", p.name)))?;
            let v = Value::from_toml(raw, &p.name)?;
            p.index_of(&v)
                .ok_or_else(|| Error::Schema(format!("value {v} is not allowed for '{}'", p.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateConfig { indices })
}
