//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use sublayer_core::data::{Batch, Pair};
use sublayer_core::model::{
    attention_bias, bind, BlockCtx, ComponentId, CrossCtx, Forward, InterpolationSpec, MaskSpec, Mode, Model,
    ModelConfig, Side, SublayerHook, TrainNoise,
};
use sublayer_core::numerics::{Graph, NumericsError, Tensor, Var};
use sublayer_core::rng::{stream, stream_at};
use sublayer_core::training::loss_and_grads;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn random(shape: &[usize], seed: u64, label: &str) -> Tensor {
    let mut r = stream(seed, label);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, so central differences never straddle a
/// ReLU kink.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    random(shape, seed, "kinkless").map(|v| v.signum() * (0.1 + v.abs()))
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>;

/// Largest relative error between reverse-mode and central-difference
/// gradients of `Σ W ⊙ f(inputs)` over every input entry, with `W` a fixed
/// random weighting.
pub fn op_gradient_error(inputs: &[Tensor], seed: u64, build: &Build) -> f64 {
    let scalar = |inputs: &[Tensor], track: bool| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        let w = random(g.value(out).shape(), seed, "weights");
        let w = g.constant(w);
        let prod = g.mul(out, w).unwrap();
        let loss = g.sum(prod).unwrap();
        let value = g.value(loss).data()[0];
        if !track {
            return (value, Vec::new());
        }
        let grads = g.backward(loss).unwrap();
        let per_input = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (value, per_input)
    };
    let (_, analytic) = scalar(inputs, true);
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (scalar(&plus, false).0 - scalar(&minus, false).0) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}

/// Worst gradient error of every differentiable op at one seed.
pub fn all_op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let r = |shape: &[usize], label: &str| random(shape, seed, label);
    let targets = [Some(1), None, Some(5), Some(0)];
    let cases: Vec<(&'static str, Vec<Tensor>, Box<Build>)> = vec![
        ("matmul", vec![r(&[2, 3, 4], "a"), r(&[4, 5], "b")], Box::new(|g, v| g.matmul(v[0], v[1]))),
        (
            "batched_matmul",
            vec![r(&[2, 3, 4], "a"), r(&[2, 4, 5], "b")],
            Box::new(|g, v| g.batched_matmul(v[0], v[1], false)),
        ),
        (
            "batched_matmul_nt",
            vec![r(&[2, 3, 4], "a"), r(&[2, 5, 4], "b")],
            Box::new(|g, v| g.batched_matmul(v[0], v[1], true)),
        ),
        ("add", vec![r(&[3, 4], "a"), r(&[3, 4], "b")], Box::new(|g, v| g.add(v[0], v[1]))),
        ("add_row", vec![r(&[2, 3, 4], "a"), r(&[4], "b")], Box::new(|g, v| g.add_row(v[0], v[1]))),
        ("mul", vec![r(&[3, 4], "a"), r(&[3, 4], "b")], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("scale", vec![r(&[3, 4], "a")], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("relu", vec![away_from_zero(&[3, 4], seed)], Box::new(|g, v| g.relu(v[0]))),
        ("softmax", vec![r(&[2, 3, 5], "a").map(|x| 3.0 * x)], Box::new(|g, v| g.softmax(v[0]))),
        (
            "layer_norm",
            vec![r(&[3, 6], "a"), r(&[6], "g"), r(&[6], "b")],
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        ),
        ("gather_rows", vec![r(&[5, 4], "a")], Box::new(|g, v| g.gather_rows(v[0], &[0, 3, 3, 1]))),
        ("embedding", vec![r(&[6, 3], "a")], Box::new(|g, v| g.embedding(v[0], &[5, 0, 5, 2, 2]))),
        ("split_heads", vec![r(&[6, 4], "a")], Box::new(|g, v| g.split_heads(v[0], 2, 3, 2))),
        ("merge_heads", vec![r(&[4, 3, 2], "a")], Box::new(|g, v| g.merge_heads(v[0], 2, 3, 2))),
        ("sum", vec![r(&[3, 4], "a")], Box::new(|g, v| g.sum(v[0]))),
        (
            "cross_entropy",
            vec![r(&[4, 6], "a").map(|x| 2.0 * x)],
            Box::new(move |g, v| g.cross_entropy(v[0], &targets, 0.1)),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, build)| (name, op_gradient_error(&inputs, seed, build.as_ref())))
        .collect()
}

pub fn tiny_config(dropout: f64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_ff: 12,
        n_heads: 2,
        src_vocab: 10,
        tgt_vocab: 11,
        dropout,
        ..ModelConfig::default()
    }
}

pub fn tiny_pairs(seed: u64) -> Vec<Pair> {
    let mut r = stream(seed, "pairs");
    (0..2)
        .map(|i| {
            let n = 3 + i;
            Pair {
                src: (0..n).map(|_| r.gen_range(3..10)).collect(),
                tgt: (0..n + 1 - 2 * i).map(|_| r.gen_range(3..11)).collect(),
            }
        })
        .collect()
}

fn noise(seed: u64) -> TrainNoise {
    TrainNoise {
        dropout: stream_at(seed, "dropout", 0),
        layerdrop: stream_at(seed, "layerdrop", 0),
    }
}

/// Worst gradient error of the full training loss over every parameter,
/// with dropout active so the masks are exercised.
pub fn model_gradient_error(seed: u64) -> f64 {
    let mut model = Model::new(tiny_config(0.1), seed).unwrap();
    let pairs = tiny_pairs(seed);
    let refs: Vec<&Pair> = pairs.iter().collect();
    let batch = Batch::new(&refs);
    let (_, grads) = loss_and_grads(&model, &batch, 0.1, Some(noise(seed))).unwrap();
    let names: Vec<String> = model.params.names().cloned().collect();
    let mut worst: f64 = 0.0;
    for name in names {
        let n = model.params.get(&name).unwrap().len();
        let analytic = grads.get(&name).cloned();
        for j in 0..n {
            let orig = model.params.get(&name).unwrap().data()[j];
            let mut at = |v: f64| {
                model.params.get_mut(&name).unwrap().data_mut()[j] = v;
                loss_and_grads(&model, &batch, 0.1, Some(noise(seed))).unwrap().0
            };
            let numeric = (at(orig + FD_STEP) - at(orig - FD_STEP)) / (2.0 * FD_STEP);
            model.params.get_mut(&name).unwrap().data_mut()[j] = orig;
            let a = analytic.as_ref().map_or(0.0, |t| t.data()[j]);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

/// Replaces one component's sub-layer output with zeros after it has been
/// computed, leaving the forward pass otherwise untouched.
pub struct ZeroOutput(pub ComponentId);

impl SublayerHook for ZeroOutput {
    fn sublayer_output(&mut self, g: &mut Graph, id: ComponentId, f_out: Var) -> Result<Var, NumericsError> {
        if id == self.0 {
            Ok(g.constant(Tensor::zeros(g.value(f_out).shape())))
        } else {
            Ok(f_out)
        }
    }
}

/// Logits with `id`'s output zeroed by the hook.
pub fn instrumented_logits(model: &Model, batch: &Batch, id: ComponentId) -> Tensor {
    let mut hook = ZeroOutput(id);
    let mut g = Graph::new();
    let bound = bind(&mut g, &model.config, &model.params, None, &InterpolationSpec::none(), false).unwrap();
    let mask = MaskSpec::none();
    let mut fwd = Forward::new(&model.config, bound, &mask, Mode::Eval).unwrap().with_hook(&mut hook);
    let out = fwd.logits(&mut g, &batch.src, &batch.tgt_in).unwrap();
    g.value(out).clone()
}

/// One residual block as a function of its input rows, for a single
/// sentence; decoder blocks attend to `memory`.
pub fn block_fn<'a>(
    model: &'a Model,
    id: ComponentId,
    memory: Option<&Tensor>,
) -> impl Fn(&mut Graph, Var) -> Result<Var, sublayer_core::Error> + 'a {
    let memory = memory.cloned();
    move |g: &mut Graph, x: Var| {
        let seq = g.value(x).rows();
        let heads = model.config.n_heads;
        let bound = bind(g, &model.config, &model.params, None, &InterpolationSpec::none(), false)?;
        let mask = MaskSpec::none();
        let mut fwd = Forward::new(&model.config, bound, &mask, Mode::Eval)?;
        let self_bias = g.constant(attention_bias(heads, seq, &[seq], seq, id.side == Side::Decoder));
        let cross = memory.as_ref().map(|m| {
            let mem_len = m.rows();
            let mem = g.constant(m.clone());
            let bias = g.constant(attention_bias(heads, seq, &[mem_len], mem_len, false));
            CrossCtx {
                memory: mem,
                mem_len,
                bias,
            }
        });
        let ctx = BlockCtx {
            batch: 1,
            seq,
            self_bias,
            cross,
        };
        fwd.block(g, id, x, &ctx)
    }
}

/// Central-difference Jacobian of `f` at `x`, `[out, in]`.
pub fn fd_jacobian(f: &dyn Fn(&mut Graph, Var) -> Result<Var, sublayer_core::Error>, x: &Tensor) -> Tensor {
    let eval = |x: &Tensor| -> Vec<f64> {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let out = f(&mut g, v).unwrap();
        g.value(out).data().to_vec()
    };
    let n_out = eval(x).len();
    let mut j = vec![0.0; n_out * x.len()];
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let (p, m) = (eval(&plus), eval(&minus));
        for o in 0..n_out {
            j[o * x.len() + i] = (p[o] - m[o]) / (2.0 * FD_STEP);
        }
    }
    Tensor::new(vec![n_out, x.len()], j).unwrap()
}

/// Worst relative error of the reverse-mode Jacobian of every residual block
/// of a random tiny model against central differences.
pub fn layerwise_jacobian_error(seed: u64) -> f64 {
    let model = Model::new(tiny_config(0.0), seed).unwrap();
    let seq = 3;
    let d = model.config.d_model;
    let memory = random(&[4, d], seed, "memory");
    let mut worst: f64 = 0.0;
    for id in model.config.components() {
        let x = random(&[seq, d], seed, &id.to_string());
        let mem = (id.side == Side::Decoder).then_some(&memory);
        let f = block_fn(&model, id, mem);
        let analytic = sublayer_core::numerics::jacobian(&f, &x).unwrap();
        let numeric = fd_jacobian(&f, &x);
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    worst
}
