use std::collections::BTreeMap;

use rand::Rng;

use super::component::{ComponentId, SublayerKind};
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

pub const SRC_EMBEDDING: &str = "embed.src";
pub const TGT_EMBEDDING: &str = "embed.tgt";
pub const OUT_WEIGHT: &str = "out.weight";
pub const OUT_BIAS: &str = "out.bias";

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", name)))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", name)))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn bit_eq(&self, other: &Params) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }
}

/// Local parameter names of a sub-layer's projections, in creation order.
pub fn projection_names(kind: SublayerKind) -> &'static [&'static str] {
    match kind {
        SublayerKind::FeedForward => &["w1", "b1", "w2", "b2"],
        _ => &["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"],
    }
}

pub const LAYER_NORM_NAMES: [&str; 2] = ["ln.gamma", "ln.beta"];

/// Full parameter names owned by `id` in `config`: its projections (unless
/// the component was removed) and its post-residual layer norm.
pub fn owned_names(config: &ModelConfig, id: &ComponentId) -> Vec<String> {
    let prefix = id.param_prefix();
    let mut names = Vec::new();
    if !config.removed.contains(id) {
        names.extend(projection_names(id.kind).iter().map(|n| format!("{}{}", prefix, n)));
    }
    names.extend(LAYER_NORM_NAMES.iter().map(|n| format!("{}{}", prefix, n)));
    names
}

/// The parameter subset of one component.
pub fn component_params<'a>(config: &ModelConfig, params: &'a Params, id: &ComponentId) -> Result<BTreeMap<String, &'a Tensor>> {
    if !config.is_slot(id) {
        return Err(Error::InvalidComponent(format!("{} is not part of this model", id)));
    }
    owned_names(config, id)
        .into_iter()
        .map(|name| {
            let t = params.get(&name)?;
            Ok((name, t))
        })
        .collect()
}

fn projection_shapes(config: &ModelConfig, kind: SublayerKind) -> Vec<(&'static str, Vec<usize>)> {
    let d = config.d_model;
    match kind {
        SublayerKind::FeedForward => vec![
            ("w1", vec![d, config.d_ff]),
            ("b1", vec![config.d_ff]),
            ("w2", vec![config.d_ff, d]),
            ("b2", vec![d]),
        ],
        _ => vec![
            ("wq", vec![d, d]),
            ("bq", vec![d]),
            ("wk", vec![d, d]),
            ("bk", vec![d]),
            ("wv", vec![d, d]),
            ("bv", vec![d]),
            ("wo", vec![d, d]),
            ("bo", vec![d]),
        ],
    }
}

/// Name and shape of every parameter tensor `config` has. Weights are stored
/// `[in, out]`.
pub fn param_shapes(config: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let d = config.d_model;
    let mut shapes = BTreeMap::new();
    shapes.insert(SRC_EMBEDDING.to_string(), vec![config.src_vocab, d]);
    shapes.insert(TGT_EMBEDDING.to_string(), vec![config.tgt_vocab, d]);
    shapes.insert(OUT_WEIGHT.to_string(), vec![d, config.tgt_vocab]);
    shapes.insert(OUT_BIAS.to_string(), vec![config.tgt_vocab]);
    for id in config.slots() {
        let prefix = id.param_prefix();
        if !config.removed.contains(&id) {
            for (local, shape) in projection_shapes(config, id.kind) {
                shapes.insert(format!("{}{}", prefix, local), shape);
            }
        }
        for local in LAYER_NORM_NAMES {
            shapes.insert(format!("{}{}", prefix, local), vec![d]);
        }
    }
    shapes
}

/// Checks that `params` has exactly the tensors `config` calls for.
pub fn check_shapes(config: &ModelConfig, params: &Params) -> Result<()> {
    let expected = param_shapes(config);
    for (name, shape) in &expected {
        let t = params.get(name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` has shape {:?}, expected {:?}",
                name,
                t.shape(),
                shape
            )));
        }
    }
    if let Some(extra) = params.names().find(|n| !expected.contains_key(*n)) {
        return Err(Error::Checkpoint(format!("unexpected parameter `{}`", extra)));
    }
    Ok(())
}

/// Xavier/Glorot uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches")
}

/// Fresh parameters for `config` drawn from the `init` stream of `seed`.
///
/// Weight matrices (embeddings and output projection included) are Xavier
/// uniform; biases and layer-norm shifts are zero; layer-norm scales are one.
/// Every tensor is drawn from its own sub-stream keyed by name, so removing a
/// component does not change anyone else's initialization.
pub fn init_params(config: &ModelConfig, seed: u64) -> Params {
    let mut params = Params::new();
    for (name, shape) in param_shapes(config) {
        let t = if shape.len() == 2 {
            let mut r = rng::stream_at(seed, "init", rng::fnv1a(name.as_bytes()));
            xavier_uniform(shape[0], shape[1], &mut r)
        } else if name.ends_with("ln.gamma") {
            Tensor::ones(&shape)
        } else {
            Tensor::zeros(&shape)
        };
        params.insert(name, t);
    }
    params
}
