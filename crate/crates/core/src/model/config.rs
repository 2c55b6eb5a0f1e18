use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::component::{ComponentId, Side, SublayerKind};
use crate::error::{Error, Result};

/// Architecture of a post-norm encoder-decoder transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub layerdrop: f64,
    /// Sub-layers removed from the architecture (pruned models).
    pub removed: BTreeSet<ComponentId>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 32,
            d_ff: 64,
            n_heads: 4,
            src_vocab: 32,
            tgt_vocab: 32,
            max_len: 24,
            dropout: 0.1,
            layerdrop: 0.0,
            removed: BTreeSet::new(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("max_len", self.max_len),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(Error::config(format!("model.{}", key), "must be positive"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(
                "model.n_heads",
                format!("d_model {} is not divisible by {} heads", self.d_model, self.n_heads),
            ));
        }
        for (key, p) in [("dropout", self.dropout), ("layerdrop", self.layerdrop)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("model.{}", key), format!("{} is outside [0, 1)", p)));
            }
        }
        for id in &self.removed {
            if !self.is_slot(id) {
                return Err(Error::config("model.removed", format!("{} does not exist in this architecture", id)));
            }
        }
        Ok(())
    }

    pub fn layers(&self, side: Side) -> usize {
        match side {
            Side::Encoder => self.enc_layers,
            Side::Decoder => self.dec_layers,
        }
    }

    /// True if `id` names a sub-layer position of this architecture, whether
    /// or not it has been removed.
    pub fn is_slot(&self, id: &ComponentId) -> bool {
        id.is_well_formed() && id.layer < self.layers(id.side)
    }

    /// Every sub-layer position, removed or not, in canonical order.
    pub fn slots(&self) -> Vec<ComponentId> {
        let mut out = Vec::new();
        for layer in 0..self.enc_layers {
            out.push(ComponentId::enc_sa(layer));
            out.push(ComponentId::enc_ff(layer));
        }
        for layer in 0..self.dec_layers {
            out.push(ComponentId::dec_sa(layer));
            out.push(ComponentId::dec_ea(layer));
            out.push(ComponentId::dec_ff(layer));
        }
        out.sort();
        out
    }

    /// Components present in the architecture, in canonical order.
    pub fn components(&self) -> Vec<ComponentId> {
        self.slots().into_iter().filter(|id| !self.removed.contains(id)).collect()
    }

    pub fn contains(&self, id: &ComponentId) -> bool {
        self.is_slot(id) && !self.removed.contains(id)
    }

    pub fn check_component(&self, id: &ComponentId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::InvalidComponent(format!("{} is not part of this model", id)))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn max_vocab(&self) -> usize {
        self.src_vocab.max(self.tgt_vocab)
    }

    /// Number of trainable parameters this architecture has.
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let attention = 4 * d * d + 4 * d;
        let ffn = 2 * d * self.d_ff + self.d_ff + d;
        let layer_norm = 2 * d;
        let mut total = self.src_vocab * d + self.tgt_vocab * d + d * self.tgt_vocab + self.tgt_vocab;
        for id in self.slots() {
            total += layer_norm;
            if !self.removed.contains(&id) {
                total += match id.kind {
                    SublayerKind::FeedForward => ffn,
                    _ => attention,
                };
            }
        }
        total
    }
}

/// A config whose forward pass skips `ids` structurally. The residual path
/// and each removed sub-layer's layer norm remain.
pub fn remove_components(config: &ModelConfig, ids: &[ComponentId]) -> Result<ModelConfig> {
    let mut out = config.clone();
    for id in ids {
        config.check_component(id)?;
        out.removed.insert(*id);
    }
    Ok(out)
}
