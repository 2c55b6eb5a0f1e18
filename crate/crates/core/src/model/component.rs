use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SublayerKind {
    SelfAttention,
    EncoderAttention,
    FeedForward,
}

/// Address of one residual sub-layer.
///
/// Ordering is encoder before decoder, then lower layer first, then
/// self-attention, encoder-attention, feed-forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComponentId {
    pub side: Side,
    pub layer: usize,
    pub kind: SublayerKind,
}

/// The five sub-layer families in grid column order.
pub const FAMILIES: [(Side, SublayerKind); 5] = [
    (Side::Encoder, SublayerKind::SelfAttention),
    (Side::Encoder, SublayerKind::FeedForward),
    (Side::Decoder, SublayerKind::SelfAttention),
    (Side::Decoder, SublayerKind::EncoderAttention),
    (Side::Decoder, SublayerKind::FeedForward),
];

impl ComponentId {
    pub fn new(side: Side, layer: usize, kind: SublayerKind) -> Self {
        Self { side, layer, kind }
    }

    pub fn enc_sa(layer: usize) -> Self {
        Self::new(Side::Encoder, layer, SublayerKind::SelfAttention)
    }

    pub fn enc_ff(layer: usize) -> Self {
        Self::new(Side::Encoder, layer, SublayerKind::FeedForward)
    }

    pub fn dec_sa(layer: usize) -> Self {
        Self::new(Side::Decoder, layer, SublayerKind::SelfAttention)
    }

    pub fn dec_ea(layer: usize) -> Self {
        Self::new(Side::Decoder, layer, SublayerKind::EncoderAttention)
    }

    pub fn dec_ff(layer: usize) -> Self {
        Self::new(Side::Decoder, layer, SublayerKind::FeedForward)
    }

    /// `(Encoder, EncoderAttention)` does not exist.
    pub fn is_well_formed(&self) -> bool {
        !(self.side == Side::Encoder && self.kind == SublayerKind::EncoderAttention)
    }

    /// Column label such as `E:SA`.
    pub fn family(&self) -> &'static str {
        family_label(self.side, self.kind)
    }

    pub fn is_attention(&self) -> bool {
        self.kind != SublayerKind::FeedForward
    }

    /// Prefix shared by every parameter this component owns.
    pub fn param_prefix(&self) -> String {
        let side = match self.side {
            Side::Encoder => "enc",
            Side::Decoder => "dec",
        };
        let kind = match self.kind {
            SublayerKind::SelfAttention => "sa",
            SublayerKind::EncoderAttention => "ea",
            SublayerKind::FeedForward => "ff",
        };
        format!("{}.{}.{}.", side, self.layer, kind)
    }
}

pub fn family_label(side: Side, kind: SublayerKind) -> &'static str {
    match (side, kind) {
        (Side::Encoder, SublayerKind::SelfAttention) => "E:SA",
        (Side::Encoder, SublayerKind::EncoderAttention) => "E:EA",
        (Side::Encoder, SublayerKind::FeedForward) => "E:FF",
        (Side::Decoder, SublayerKind::SelfAttention) => "D:SA",
        (Side::Decoder, SublayerKind::EncoderAttention) => "D:EA",
        (Side::Decoder, SublayerKind::FeedForward) => "D:FF",
    }
}

/// Formats as `D:SA/1` with a zero-based layer index.
impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.family(), self.layer)
    }
}

impl FromStr for ComponentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidComponent(format!("cannot parse `{}` (expected e.g. `D:SA/0`)", s));
        let (family, layer) = s.trim().split_once('/').ok_or_else(bad)?;
        let layer: usize = layer.parse().map_err(|_| bad())?;
        let (side, kind) = FAMILIES
            .iter()
            .find(|(side, kind)| family_label(*side, *kind) == family)
            .copied()
            .ok_or_else(bad)?;
        Ok(Self { side, layer, kind })
    }
}

impl Serialize for ComponentId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Components whose sub-layer output is replaced by zeros.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub masked: BTreeSet<ComponentId>,
}

impl MaskSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(id: ComponentId) -> Self {
        Self {
            masked: BTreeSet::from([id]),
        }
    }

    pub fn of(ids: impl IntoIterator<Item = ComponentId>) -> Self {
        Self {
            masked: ids.into_iter().collect(),
        }
    }

    pub fn contains(&self, id: &ComponentId) -> bool {
        self.masked.contains(id)
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }
}

/// Per-component blend factor between initial (`0`) and final (`1`) weights.
/// Absent components use their final weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSpec {
    pub alphas: BTreeMap<ComponentId, f64>,
}

impl InterpolationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(id: ComponentId, alpha: f64) -> Self {
        Self {
            alphas: BTreeMap::from([(id, alpha)]),
        }
    }

    pub fn alpha(&self, id: &ComponentId) -> f64 {
        self.alphas.get(id).copied().unwrap_or(1.0)
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}
