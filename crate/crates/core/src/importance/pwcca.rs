use std::collections::BTreeMap;

use super::grid::{GridMeta, ImportanceGrid};
use super::EvalContext;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{bind, ComponentId, Forward, InterpolationSpec, MaskSpec, Mode, Model, Side, SublayerHook};
use crate::numerics::{svd, Graph, Tensor, Var};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Probe sentences used by default.
pub const DEFAULT_PROBES: usize = 64;

fn center(x: &Tensor) -> Result<Tensor> {
    let (n, p) = x.dims2()?;
    let mut means = vec![0.0; p];
    for r in 0..n {
        for (m, v) in means.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut data = x.data().to_vec();
    for r in 0..n {
        for (v, m) in data[r * p..(r + 1) * p].iter_mut().zip(&means) {
            *v -= m;
        }
    }
    Ok(Tensor::new(vec![n, p], data)?)
}

/// Orthonormal basis `[n, k]` of the column space, dropping directions whose
/// singular value is below `RANK_TOL · σ_max`.
fn basis(x: &Tensor) -> Result<Tensor> {
    let s = svd(x)?;
    let smax = s.s.first().copied().unwrap_or(0.0);
    let k = s.s.iter().take_while(|&&v| smax > 0.0 && v > RANK_TOL * smax).count();
    let (n, cols) = s.u.dims2()?;
    let mut data = Vec::with_capacity(n * k);
    for r in 0..n {
        data.extend_from_slice(&s.u.data()[r * cols..r * cols + k]);
    }
    Ok(Tensor::new(vec![n, k], data)?)
}

/// Projection-weighted CCA similarity of `x` `[n, p]` to `y` `[n, q]`, rows
/// being paired observations. Each canonical correlation is weighted by how
/// much of `x`'s (centered) neurons its canonical variate accounts for.
pub fn pwcca(x: &Tensor, y: &Tensor) -> Result<f64> {
    let (n, _) = x.dims2()?;
    let (ny, _) = y.dims2()?;
    if n != ny {
        return Err(Error::InvalidArgument(format!("pwcca inputs have {} and {} rows", n, ny)));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("pwcca needs at least two observations".into()));
    }
    let xc = center(x)?;
    let qx = basis(&xc)?;
    let qy = basis(&center(y)?)?;
    if qx.last_dim() == 0 || qy.last_dim() == 0 {
        return Err(Error::InvalidArgument("pwcca input has no variance".into()));
    }
    let m = qx.transpose()?.matmul(&qy)?;
    let cca = svd(&m)?;
    let rho: Vec<f64> = cca.s.iter().map(|r| r.clamp(0.0, 1.0)).collect();
    // canonical variates of x: h_i = Qx · u_i, [n, r]
    let h = qx.matmul(&cca.u)?;
    let proj = h.transpose()?.matmul(&xc)?;
    let (r, p) = proj.dims2()?;
    let weights: Vec<f64> = (0..r)
        .map(|i| proj.data()[i * p..(i + 1) * p].iter().map(|v| v.abs()).sum())
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("pwcca projection weights vanish".into()));
    }
    Ok(weights.iter().zip(&rho).map(|(w, r)| w / total * r).sum())
}

#[derive(Default)]
struct Taps {
    outputs: BTreeMap<ComponentId, Var>,
}

impl SublayerHook for Taps {
    fn block_output(&mut self, _g: &Graph, id: ComponentId, out: Var) {
        self.outputs.insert(id, out);
    }
}

fn select_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let d = t.last_dim();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(t.row(r));
    }
    Ok(Tensor::new(vec![rows.len(), d], data)?)
}

/// Similarity of every component's block output to the final representation
/// of its side: the top encoder output for encoder components, the top
/// decoder output (before the vocabulary projection) for decoder ones.
/// Activations are pooled over the non-pad positions of the first `probes`
/// sentences of the evaluation set, decoder inputs teacher-forced.
pub fn pwcca_similarity(model: &Model, checkpoint: &str, ctx: &EvalContext, probes: usize) -> Result<ImportanceGrid> {
    let n = probes.min(ctx.corpus.len());
    let pairs: Vec<_> = ctx.corpus.pairs[..n].iter().collect();
    let batch = Batch::new(&pairs);
    let d = model.config.d_model;

    let mut taps = Taps::default();
    let mut g = Graph::new();
    let bound = bind(&mut g, &model.config, &model.params, model.init.as_ref(), &InterpolationSpec::none(), false)?;
    let mask = MaskSpec::none();
    let (memory, top) = {
        let mut fwd = Forward::new(&model.config, bound, &mask, Mode::Eval)?.with_hook(&mut taps);
        let memory = fwd.encode(&mut g, &batch.src)?;
        let top = fwd.decode(&mut g, memory, &batch.src, &batch.tgt_in)?;
        (memory, top)
    };
    let rows_of = |lens: &[usize], seq: usize| -> Vec<usize> {
        lens.iter()
            .enumerate()
            .flat_map(|(b, &len)| (0..len).map(move |t| b * seq + t))
            .collect()
    };
    let src_rows = rows_of(&batch.src.lens, batch.src.seq);
    let tgt_rows = rows_of(&batch.tgt_in.lens, batch.tgt_in.seq);
    for (side, rows) in [("source", &src_rows), ("target", &tgt_rows)] {
        if rows.len() < 5 * d {
            return Err(Error::InvalidArgument(format!(
                "{} {} positions from {} probes; at least 5·d_model = {} required",
                rows.len(),
                side,
                n,
                5 * d
            )));
        }
    }
    let enc_final = select_rows(g.value(memory), &src_rows)?;
    let dec_final = select_rows(g.value(top), &tgt_rows)?;
    let mut scores = BTreeMap::new();
    for id in model.config.components() {
        let out = g.value(taps.outputs[&id]);
        let s = match id.side {
            Side::Encoder => pwcca(&select_rows(out, &src_rows)?, &enc_final)?,
            Side::Decoder => pwcca(&select_rows(out, &tgt_rows)?, &dec_final)?,
        };
        scores.insert(id, s);
    }
    let meta = GridMeta {
        checkpoint: checkpoint.to_string(),
        dataset: ctx.dataset.clone(),
        ..GridMeta::default()
    };
    Ok(ImportanceGrid::new("pwcca", scores, None, meta))
}
