//! Post-norm encoder-decoder forward pass.
//!
//! Every residual sub-layer computes `LayerNorm(x + F(x))`. A masked,
//! removed or LayerDrop-dropped sub-layer contributes a zero tensor in place
//! of `F(x)`; the residual add and the layer norm still run, which makes
//! masking and structural removal produce identical activations.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::component::{ComponentId, InterpolationSpec, MaskSpec, SublayerKind};
use super::config::ModelConfig;
use super::params::{owned_names, Params, OUT_BIAS, OUT_WEIGHT, SRC_EMBEDDING, TGT_EMBEDDING};
use crate::data::PAD;
use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, Graph, NumericsError, Tensor, Var};

/// Layer-norm epsilon; a constant row normalizes to exactly zero.
pub const LN_EPS: f64 = 1e-5;
/// Additive attention bias for disallowed positions. Finite, and large enough
/// that `exp` underflows to exactly zero after the softmax max-shift.
pub const MASK_BIAS: f64 = -1e9;

/// Right-padded batch of token sequences, `[batch, seq]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Padded {
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    pub batch: usize,
    pub seq: usize,
}

impl Padded {
    pub fn new(seqs: &[Vec<usize>]) -> Self {
        let seq = seqs.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut ids = vec![PAD; seqs.len() * seq];
        for (b, s) in seqs.iter().enumerate() {
            ids[b * seq..b * seq + s.len()].copy_from_slice(s);
        }
        Self {
            ids,
            lens: seqs.iter().map(Vec::len).collect(),
            batch: seqs.len(),
            seq,
        }
    }

    /// Flat row indices of the last real token of each sequence.
    pub fn last_rows(&self) -> Vec<usize> {
        self.lens
            .iter()
            .enumerate()
            .map(|(b, &len)| b * self.seq + len.max(1) - 1)
            .collect()
    }
}

/// Observation and instrumentation points inside the forward pass.
pub trait SublayerHook {
    /// Sees `F(x)` of a computed sub-layer just before the residual add and
    /// may substitute another node of the same shape.
    fn sublayer_output(&mut self, _g: &mut Graph, _id: ComponentId, f_out: Var) -> Result<Var, NumericsError> {
        Ok(f_out)
    }

    /// Input `x` of the residual block.
    fn block_input(&mut self, _g: &Graph, _id: ComponentId, _x: Var) {}

    /// Block output after the residual add and layer norm.
    fn block_output(&mut self, _g: &Graph, _id: ComponentId, _out: Var) {}
}

/// Random streams for dropout and LayerDrop in training mode.
pub struct TrainNoise {
    pub dropout: ChaCha8Rng,
    pub layerdrop: ChaCha8Rng,
}

pub enum Mode {
    Eval,
    Train(TrainNoise),
}

/// Model parameters placed into a graph, by name.
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", name)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

pub fn check_mask(config: &ModelConfig, mask: &MaskSpec) -> Result<()> {
    mask.masked.iter().try_for_each(|id| config.check_component(id))
}

pub fn check_interp(config: &ModelConfig, interp: &InterpolationSpec) -> Result<()> {
    for (id, alpha) in &interp.alphas {
        config.check_component(id)?;
        if !(0.0..=1.0).contains(alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} for {} is outside [0, 1]", alpha, id)));
        }
    }
    Ok(())
}

/// Convex blend `(1 - alpha) * init + alpha * fin`, returning the endpoints
/// themselves at `alpha` of exactly 0 or 1.
pub fn blend(init: &Tensor, fin: &Tensor, alpha: f64) -> Result<Tensor> {
    if alpha == 1.0 {
        return Ok(fin.clone());
    }
    if alpha == 0.0 {
        return Ok(init.clone());
    }
    if init.shape() != fin.shape() {
        return Err(Error::Checkpoint(format!(
            "initial {:?} and final {:?} shapes differ",
            init.shape(),
            fin.shape()
        )));
    }
    let data = init
        .data()
        .iter()
        .zip(fin.data())
        .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
        .collect();
    Ok(Tensor::new(fin.shape().to_vec(), data)?)
}

/// Binds every parameter into `g`, applying the interpolation spec.
pub fn bind(
    g: &mut Graph,
    config: &ModelConfig,
    params: &Params,
    init: Option<&Params>,
    interp: &InterpolationSpec,
    trainable: bool,
) -> Result<Bound> {
    check_interp(config, interp)?;
    let mut blended: HashMap<String, Tensor> = HashMap::new();
    for (id, &alpha) in &interp.alphas {
        if alpha == 1.0 {
            continue;
        }
        let init = init.ok_or(Error::MissingInit)?;
        for name in owned_names(config, id) {
            blended.insert(name.clone(), blend(init.get(&name)?, params.get(&name)?, alpha)?);
        }
    }
    let mut vars = HashMap::with_capacity(params.len());
    for (name, t) in params.iter() {
        let value = blended.remove(name).unwrap_or_else(|| t.clone());
        let v = if trainable { g.param(value) } else { g.constant(value) };
        vars.insert(name.clone(), v);
    }
    Ok(Bound { vars })
}

/// Sinusoidal position table `[seq, d]`.
pub fn positional_encoding(seq: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; seq * d];
    for pos in 0..seq {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            pe[pos * d + i] = angle.sin();
            if i + 1 < d {
                pe[pos * d + i + 1] = angle.cos();
            }
        }
    }
    pe
}

/// Additive attention bias `[batch·heads, q_len, kv_len]` hiding padded keys
/// and, when `causal`, future positions.
pub fn attention_bias(heads: usize, q_len: usize, kv_lens: &[usize], kv_len: usize, causal: bool) -> Tensor {
    let batch = kv_lens.len();
    let mut data = vec![0.0; batch * heads * q_len * kv_len];
    for (b, &len) in kv_lens.iter().enumerate() {
        for h in 0..heads {
            let base = (b * heads + h) * q_len * kv_len;
            for q in 0..q_len {
                for k in 0..kv_len {
                    if k >= len || (causal && k > q) {
                        data[base + q * kv_len + k] = MASK_BIAS;
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch * heads, q_len, kv_len], data).expect("consistent shape")
}

/// Attention context for one residual block.
#[derive(Debug, Clone, Copy)]
pub struct BlockCtx {
    pub batch: usize,
    pub seq: usize,
    /// Self-attention bias `[batch·heads, seq, seq]`.
    pub self_bias: Var,
    pub cross: Option<CrossCtx>,
}

/// Encoder memory for encoder-attention.
#[derive(Debug, Clone, Copy)]
pub struct CrossCtx {
    pub memory: Var,
    pub mem_len: usize,
    /// `[batch·heads, seq, mem_len]`.
    pub bias: Var,
}

/// One forward evaluation of a model over a graph.
pub struct Forward<'a> {
    config: &'a ModelConfig,
    bound: Bound,
    mask: &'a MaskSpec,
    mode: Mode,
    hook: Option<&'a mut dyn SublayerHook>,
}

impl<'a> Forward<'a> {
    pub fn new(config: &'a ModelConfig, bound: Bound, mask: &'a MaskSpec, mode: Mode) -> Result<Self> {
        check_mask(config, mask)?;
        Ok(Self {
            config,
            bound,
            mask,
            mode,
            hook: None,
        })
    }

    pub fn with_hook(mut self, hook: &'a mut dyn SublayerHook) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn bound(&self) -> &Bound {
        &self.bound
    }

    fn embed(&mut self, g: &mut Graph, table: &str, tokens: &Padded, vocab: usize) -> Result<Var> {
        if let Some(bad) = tokens.ids.iter().find(|&&t| t >= vocab) {
            return Err(Error::InvalidArgument(format!("token id {} >= vocabulary {}", bad, vocab)));
        }
        let d = self.config.d_model;
        let table = self.bound.var(table)?;
        let e = g.embedding(table, &tokens.ids)?;
        let e = g.scale(e, (d as f64).sqrt())?;
        let pe_row = positional_encoding(tokens.seq, d);
        let mut pe = Vec::with_capacity(tokens.batch * tokens.seq * d);
        for _ in 0..tokens.batch {
            pe.extend_from_slice(&pe_row);
        }
        let pe = g.constant(Tensor::new(vec![tokens.batch * tokens.seq, d], pe)?);
        let x = g.add(e, pe)?;
        self.dropout(g, x)
    }

    fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        let p = self.config.dropout;
        match &mut self.mode {
            Mode::Train(noise) if p > 0.0 => {
                let m = dropout_mask(g.value(x).shape(), p, &mut noise.dropout)?;
                let m = g.constant(m);
                Ok(g.mul(x, m)?)
            }
            _ => Ok(x),
        }
    }

    fn layer_dropped(&mut self) -> bool {
        let p = self.config.layerdrop;
        match &mut self.mode {
            Mode::Train(noise) if p > 0.0 => noise.layerdrop.gen::<f64>() < p,
            _ => false,
        }
    }

    fn linear(&self, g: &mut Graph, x: Var, w: &str, b: &str) -> Result<Var> {
        let y = g.matmul(x, self.bound.var(w)?)?;
        Ok(g.add_row(y, self.bound.var(b)?)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        prefix: &str,
        query: Var,
        kv: Var,
        batch: usize,
        q_len: usize,
        kv_len: usize,
        bias: Var,
    ) -> Result<Var> {
        let heads = self.config.n_heads;
        let p = |n: &str| format!("{}{}", prefix, n);
        let q = self.linear(g, query, &p("wq"), &p("bq"))?;
        let k = self.linear(g, kv, &p("wk"), &p("bk"))?;
        let v = self.linear(g, kv, &p("wv"), &p("bv"))?;
        let q = g.split_heads(q, batch, q_len, heads)?;
        let k = g.split_heads(k, batch, kv_len, heads)?;
        let v = g.split_heads(v, batch, kv_len, heads)?;
        let scores = g.batched_matmul(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (self.config.head_dim() as f64).sqrt())?;
        let scores = g.add(scores, bias)?;
        let weights = g.softmax(scores)?;
        let ctx = g.batched_matmul(weights, v, false)?;
        let ctx = g.merge_heads(ctx, batch, q_len, heads)?;
        self.linear(g, ctx, &p("wo"), &p("bo"))
    }

    fn feed_forward(&self, g: &mut Graph, prefix: &str, x: Var) -> Result<Var> {
        let p = |n: &str| format!("{}{}", prefix, n);
        let h = self.linear(g, x, &p("w1"), &p("b1"))?;
        let h = g.relu(h)?;
        self.linear(g, h, &p("w2"), &p("b2"))
    }

    /// The sub-layer function `F(x)` alone, without residual or layer norm.
    pub fn sublayer(&mut self, g: &mut Graph, id: ComponentId, x: Var, ctx: &BlockCtx) -> Result<Var> {
        let prefix = id.param_prefix();
        match id.kind {
            SublayerKind::SelfAttention => self.attention(g, &prefix, x, x, ctx.batch, ctx.seq, ctx.seq, ctx.self_bias),
            SublayerKind::EncoderAttention => {
                let cross = ctx
                    .cross
                    .ok_or_else(|| Error::InvalidComponent(format!("{} needs encoder memory", id)))?;
                self.attention(g, &prefix, x, cross.memory, ctx.batch, ctx.seq, cross.mem_len, cross.bias)
            }
            SublayerKind::FeedForward => self.feed_forward(g, &prefix, x),
        }
    }

    /// One residual block: `LayerNorm(x + F(x))`, with `F(x)` replaced by
    /// zeros when the component is masked, removed or dropped by LayerDrop.
    pub fn block(&mut self, g: &mut Graph, id: ComponentId, x: Var, ctx: &BlockCtx) -> Result<Var> {
        if !self.config.is_slot(&id) {
            return Err(Error::InvalidComponent(format!("{} is not part of this model", id)));
        }
        if let Some(h) = self.hook.as_deref_mut() {
            h.block_input(g, id, x);
        }
        let active = self.config.contains(&id) && !self.mask.contains(&id) && !self.layer_dropped();
        let f_out = if active {
            let y = self.sublayer(g, id, x, ctx)?;
            let y = self.dropout(g, y)?;
            match self.hook.as_deref_mut() {
                Some(h) => h.sublayer_output(g, id, y)?,
                None => y,
            }
        } else {
            g.constant(Tensor::zeros(g.value(x).shape()))
        };
        let h = g.add(x, f_out)?;
        let prefix = id.param_prefix();
        let gamma = self.bound.var(&format!("{}ln.gamma", prefix))?;
        let beta = self.bound.var(&format!("{}ln.beta", prefix))?;
        let out = g.layer_norm(h, gamma, beta, LN_EPS)?;
        if let Some(h) = self.hook.as_deref_mut() {
            h.block_output(g, id, out);
        }
        Ok(out)
    }

    /// Encoder output `[batch·src_seq, d_model]`.
    pub fn encode(&mut self, g: &mut Graph, src: &Padded) -> Result<Var> {
        let mut x = self.embed(g, SRC_EMBEDDING, src, self.config.src_vocab)?;
        let bias = attention_bias(self.config.n_heads, src.seq, &src.lens, src.seq, false);
        let ctx = BlockCtx {
            batch: src.batch,
            seq: src.seq,
            self_bias: g.constant(bias),
            cross: None,
        };
        for layer in 0..self.config.enc_layers {
            x = self.block(g, ComponentId::enc_sa(layer), x, &ctx)?;
            x = self.block(g, ComponentId::enc_ff(layer), x, &ctx)?;
        }
        Ok(x)
    }

    /// Attention context for decoding `tgt` against an encoded `src`.
    pub fn decoder_ctx(&self, g: &mut Graph, memory: Var, src: &Padded, tgt: &Padded) -> BlockCtx {
        let heads = self.config.n_heads;
        let self_bias = g.constant(attention_bias(heads, tgt.seq, &tgt.lens, tgt.seq, true));
        let cross_bias = attention_bias(heads, tgt.seq, &src.lens, src.seq, false);
        BlockCtx {
            batch: tgt.batch,
            seq: tgt.seq,
            self_bias,
            cross: Some(CrossCtx {
                memory,
                mem_len: src.seq,
                bias: g.constant(cross_bias),
            }),
        }
    }

    /// Top decoder hidden states `[batch·tgt_seq, d_model]`.
    pub fn decode(&mut self, g: &mut Graph, memory: Var, src: &Padded, tgt: &Padded) -> Result<Var> {
        if src.batch != tgt.batch {
            return Err(Error::InvalidArgument(format!(
                "source batch {} and target batch {} differ",
                src.batch, tgt.batch
            )));
        }
        let mut y = self.embed(g, TGT_EMBEDDING, tgt, self.config.tgt_vocab)?;
        let ctx = self.decoder_ctx(g, memory, src, tgt);
        for layer in 0..self.config.dec_layers {
            y = self.block(g, ComponentId::dec_sa(layer), y, &ctx)?;
            y = self.block(g, ComponentId::dec_ea(layer), y, &ctx)?;
            y = self.block(g, ComponentId::dec_ff(layer), y, &ctx)?;
        }
        Ok(y)
    }

    /// Vocabulary logits for hidden states.
    pub fn project(&self, g: &mut Graph, hidden: Var) -> Result<Var> {
        self.linear(g, hidden, OUT_WEIGHT, OUT_BIAS)
    }

    /// Logits `[batch·tgt_seq, tgt_vocab]` for teacher-forced targets.
    pub fn logits(&mut self, g: &mut Graph, src: &Padded, tgt_in: &Padded) -> Result<Var> {
        let memory = self.encode(g, src)?;
        let hidden = self.decode(g, memory, src, tgt_in)?;
        self.project(g, hidden)
    }
}
