use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid::{GridMeta, ImportanceGrid};
use super::EvalContext;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{
    attention_bias, bind, BlockCtx, ComponentId, CrossCtx, Forward, InterpolationSpec, MaskSpec, Mode, Model, Side,
    SublayerHook,
};
use crate::numerics::{jacobian, svd, Graph, Tensor, Var};

pub const DEFAULT_ISOMETRY_PROBES: usize = 8;

/// Which weights the Jacobians are taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsometryAt {
    Init,
    Final,
}

impl fmt::Display for IsometryAt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IsometryAt::Init => "init",
            IsometryAt::Final => "final",
        })
    }
}

impl FromStr for IsometryAt {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(IsometryAt::Init),
            "final" => Ok(IsometryAt::Final),
            _ => Err(Error::InvalidArgument(format!("`{}` is neither init nor final", s))),
        }
    }
}

#[derive(Default)]
struct InputTaps {
    inputs: BTreeMap<ComponentId, Var>,
}

impl SublayerHook for InputTaps {
    fn block_input(&mut self, _g: &Graph, id: ComponentId, x: Var) {
        self.inputs.insert(id, x);
    }
}

/// Mean singular value of the Jacobian of one residual block (sub-layer,
/// residual add and layer norm) with respect to its input, over the full
/// sequence of a single sentence.
pub fn block_mean_singular_value(
    model: &Model,
    id: ComponentId,
    input: &Tensor,
    memory: Option<&Tensor>,
) -> Result<f64> {
    let seq = input.rows();
    let heads = model.config.n_heads;
    let j = jacobian(
        |g: &mut Graph, x: Var| -> Result<Var> {
            let bound = bind(g, &model.config, &model.params, None, &InterpolationSpec::none(), false)?;
            let mask = MaskSpec::none();
            let mut fwd = Forward::new(&model.config, bound, &mask, Mode::Eval)?;
            let causal = id.side == Side::Decoder;
            let self_bias = g.constant(attention_bias(heads, seq, &[seq], seq, causal));
            let cross = match memory {
                Some(m) => {
                    let mem_len = m.rows();
                    let memory = g.constant(m.clone());
                    let bias = g.constant(attention_bias(heads, seq, &[mem_len], mem_len, false));
                    Some(CrossCtx { memory, mem_len, bias })
                }
                None => None,
            };
            let ctx = BlockCtx {
                batch: 1,
                seq,
                self_bias,
                cross,
            };
            fwd.block(g, id, x, &ctx)
        },
        input,
    )?;
    let s = svd(&j)?;
    Ok(s.s.iter().sum::<f64>() / s.s.len() as f64)
}

/// Per-component mean Jacobian singular value, averaged over the first
/// `probes` sentences of the evaluation set (decoder inputs teacher-forced).
pub fn isometry_check(
    model: &Model,
    checkpoint: &str,
    ctx: &EvalContext,
    at: IsometryAt,
    probes: usize,
) -> Result<ImportanceGrid> {
    let weights = match at {
        IsometryAt::Init => Model {
            config: model.config.clone(),
            params: model.init()?.clone(),
            init: model.init.clone(),
        },
        IsometryAt::Final => model.clone(),
    };
    let n = probes.min(ctx.corpus.len());
    let positions: usize = ctx.corpus.pairs[..n].iter().map(|p| p.tgt.len() + 1).sum();
    if positions < 8 {
        return Err(Error::InvalidArgument(format!(
            "{} probe positions from {} sentences; at least 8 required",
            positions, n
        )));
    }
    let ids = weights.config.components();
    let mut sums: BTreeMap<ComponentId, f64> = ids.iter().map(|&id| (id, 0.0)).collect();
    for pair in &ctx.corpus.pairs[..n] {
        let batch = Batch::new(&[pair]);
        let mut taps = InputTaps::default();
        let mut g = Graph::new();
        let bound = bind(&mut g, &weights.config, &weights.params, None, &InterpolationSpec::none(), false)?;
        let mask = MaskSpec::none();
        let memory = {
            let mut fwd = Forward::new(&weights.config, bound, &mask, Mode::Eval)?.with_hook(&mut taps);
            let memory = fwd.encode(&mut g, &batch.src)?;
            fwd.decode(&mut g, memory, &batch.src, &batch.tgt_in)?;
            memory
        };
        let memory = g.value(memory).clone();
        for &id in &ids {
            let x = g.value(taps.inputs[&id]);
            let mem = (id.side == Side::Decoder).then_some(&memory);
            let v = block_mean_singular_value(&weights, id, x, mem)?;
            if !v.is_finite() {
                return Err(Error::Numerics(crate::numerics::NumericsError::NonFinite { op: "isometry" }));
            }
            *sums.get_mut(&id).expect("component listed") += v;
        }
    }
    let scores = sums.into_iter().map(|(id, s)| (id, s / n as f64)).collect();
    let meta = GridMeta {
        checkpoint: format!("{} ({})", checkpoint, at),
        dataset: ctx.dataset.clone(),
        ..GridMeta::default()
    };
    Ok(ImportanceGrid::new("isometry", scores, None, meta))
}
