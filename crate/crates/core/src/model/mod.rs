//! Encoder-decoder transformer with individually addressable sub-layers.

mod checkpoint;
mod component;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, CheckpointMeta, INIT_PREFIX, MAGIC, VERSION};
pub use component::{family_label, ComponentId, InterpolationSpec, MaskSpec, Side, SublayerKind, FAMILIES};
pub use config::{remove_components, ModelConfig};
pub use forward::{
    attention_bias, bind, blend, check_interp, check_mask, positional_encoding, BlockCtx, Bound, CrossCtx, Forward,
    Mode, Padded, SublayerHook, TrainNoise, LN_EPS, MASK_BIAS,
};
pub use params::{
    check_shapes, component_params, init_params, owned_names, param_shapes, projection_names, xavier_uniform, Params,
    LAYER_NORM_NAMES, OUT_BIAS, OUT_WEIGHT, SRC_EMBEDDING, TGT_EMBEDDING,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};

/// Architecture, live parameters and the initialization snapshot θ⁰.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pub init: Option<Params>,
}

impl Model {
    /// Freshly initialized model; the snapshot equals the live parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Self {
            init: Some(params.clone()),
            config,
            params,
        })
    }

    /// Verifies that parameters and snapshot match the architecture.
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        check_shapes(&self.config, &self.params)?;
        if let Some(init) = &self.init {
            check_shapes(&self.config, init)?;
        }
        Ok(())
    }

    pub fn init(&self) -> Result<&Params> {
        self.init.as_ref().ok_or(Error::MissingInit)
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn component_params(&self, id: &ComponentId) -> Result<BTreeMap<String, &Tensor>> {
        component_params(&self.config, &self.params, id)
    }

    /// The same model with `ids` removed structurally; their projection
    /// weights are dropped and their layer norms kept.
    pub fn without(&self, ids: &[ComponentId]) -> Result<Self> {
        let config = remove_components(&self.config, ids)?;
        let keep = param_shapes(&config);
        let prune = |p: &Params| {
            let mut out = Params::new();
            for (name, t) in p.iter().filter(|(n, _)| keep.contains_key(*n)) {
                out.insert(name.clone(), t.clone());
            }
            out
        };
        Ok(Self {
            params: prune(&self.params),
            init: self.init.as_ref().map(prune),
            config,
        })
    }

    /// Eval-mode logits `[batch·tgt_seq, tgt_vocab]` for teacher-forced input.
    pub fn logits(&self, src: &Padded, tgt_in: &Padded, mask: &MaskSpec, interp: &InterpolationSpec) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = bind(&mut g, &self.config, &self.params, self.init.as_ref(), interp, false)?;
        let mut fwd = Forward::new(&self.config, bound, mask, Mode::Eval)?;
        let out = fwd.logits(&mut g, src, tgt_in)?;
        Ok(g.value(out).clone())
    }
}
