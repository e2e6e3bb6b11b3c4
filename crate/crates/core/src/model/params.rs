use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::config::{ModelConfig, QueryMode};
use crate::autodiff::{fmt_shape, Tape, Tensor, Var};
use crate::rng::{normal, seeded, uniform};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    Fan(usize),
    Zeros,
    Ones,
    /// `normal(0, std)`
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name: name.into(), shape, init });
    }

    fn conv(&mut self, prefix: &str, out: usize, inp: usize, k: usize) {
        self.push(format!("{prefix}.weight"), vec![out, inp, k, k], Init::Fan(inp * k * k));
        self.push(format!("{prefix}.bias"), vec![out], Init::Zeros);
    }

    fn linear(&mut self, prefix: &str, inp: usize, out: usize) {
        self.push(format!("{prefix}.weight"), vec![inp, out], Init::Fan(inp));
        self.push(format!("{prefix}.bias"), vec![out], Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, dim: usize) {
        self.push(format!("{prefix}.gamma"), vec![dim], Init::Ones);
        self.push(format!("{prefix}.beta"), vec![dim], Init::Zeros);
    }

    fn attention(&mut self, prefix: &str, dim: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), dim, dim);
        }
    }

    fn ffn(&mut self, prefix: &str, dim: usize) {
        self.linear(&format!("{prefix}.fc1"), dim, 2 * dim);
        self.linear(&format!("{prefix}.fc2"), 2 * dim, dim);
    }
}

/// Every learned array of the network, in initialization order.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let d = config.token_dim;
    let dd = config.density_feature_dim;
    let mut s = Specs(Vec::new());

    let mut prev = 3;
    for (i, &c) in config.backbone_channels.iter().enumerate() {
        s.conv(&format!("backbone.conv{i}"), c, prev, 3);
        prev = c;
    }
    s.conv("backbone.proj", d, prev, 1);

    s.conv("density.conv1", dd, d, 3);
    s.conv("density.conv2", dd, dd, 3);
    s.conv("density.head", 1, dd, 1);

    s.push("temporal.pos", vec![config.frames, dd], Init::Normal(0.02));
    for p in ["q", "k", "v"] {
        s.linear(&format!("temporal.{p}"), dd, dd);
    }

    s.linear("encoder.inject", dd, d);
    for l in 0..config.encoder_layers {
        let p = format!("encoder.layer{l}");
        s.norm(&format!("{p}.ln1"), d);
        s.attention(&format!("{p}.attn"), d);
        s.norm(&format!("{p}.ln2"), d);
        s.ffn(&format!("{p}.ffn"), d);
    }

    s.push("queries.embed", vec![config.num_queries, d], Init::Normal(0.02));
    let (k, _) = config.query_conv_geometry();
    s.conv("queries.conv", d, dd, k);
    s.linear("queries.proj", d, d);
    if config.query_mode == QueryMode::Concat {
        s.linear("queries.merge", 2 * d, d);
    }

    for l in 0..config.decoder_layers {
        let p = format!("decoder.layer{l}");
        s.attention(&format!("{p}.self_attn"), d);
        s.norm(&format!("{p}.ln1"), d);
        s.attention(&format!("{p}.cross_attn"), d);
        s.norm(&format!("{p}.ln2"), d);
        s.ffn(&format!("{p}.ffn"), d);
        s.norm(&format!("{p}.ln3"), d);
    }

    s.linear("heads.reg.fc1", d, d);
    s.linear("heads.reg.fc2", d, 2);
    s.linear("heads.cls", d, 1);
    s.0
}

/// Learned arrays keyed by stable dotted names.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

/// Parameters recorded on a tape for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}

impl ModelParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut tensors = BTreeMap::new();
        for spec in param_specs(config) {
            let n: usize = spec.shape.iter().product();
            let data: Vec<f64> = match spec.init {
                Init::Fan(fan) => {
                    let bound = 1.0 / libm::sqrt(fan as f64);
                    (0..n).map(|_| uniform(&mut rng, -bound, bound)).collect()
                }
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal(std) => (0..n).map(|_| std * normal(&mut rng)).collect(),
            };
            tensors.insert(spec.name, Tensor::new(spec.shape, data)?);
        }
        Ok(ModelParams { tensors })
    }

    /// Builds a parameter set from named tensors, checking that the names and
    /// shapes are exactly those `config` expects.
    pub fn from_tensors(config: &ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(config);
        for spec in &specs {
            match tensors.get(&spec.name) {
                None => return Err(Error::Data(format!("missing parameter {}", spec.name))),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Data(format!(
                        "parameter {} has shape {}, expected {}",
                        spec.name,
                        fmt_shape(t.shape()),
                        fmt_shape(&spec.shape)
                    )))
                }
                Some(t) if !t.is_finite() => return Err(Error::NonFinite(spec.name.clone())),
                Some(_) => {}
            }
        }
        if tensors.len() != specs.len() {
            let extra = tensors.keys().find(|k| !specs.iter().any(|s| &s.name == *k));
            return Err(Error::Data(format!("unexpected parameter {}", extra.map_or("?", |s| s.as_str()))));
        }
        Ok(ModelParams { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(t) if t.shape() == value.shape() => {
                *t = value;
                Ok(())
            }
            Some(t) => Err(Error::ShapeMismatch {
                op: "set_param",
                detail: format!("{name}: {} vs {}", fmt_shape(t.shape()), fmt_shape(value.shape())),
            }),
            None => Err(Error::Config(format!("unknown parameter {name}"))),
        }
    }

    /// Name-ordered view of every parameter.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.tensors.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Records every parameter as a named leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.bind_except(tape, None)
    }

    /// Like [`ModelParams::bind`], but `replace` substitutes an existing
    /// tape value for one parameter (used by gradient checks).
    pub fn bind_except(&self, tape: &mut Tape, replace: Option<(&str, Var)>) -> BoundParams {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.tensors {
            let v = match replace {
                Some((r, var)) if r == name => var,
                _ => tape.param(name, t.clone()),
            };
            vars.insert(name.to_string(), v);
        }
        BoundParams { vars }
    }
}
