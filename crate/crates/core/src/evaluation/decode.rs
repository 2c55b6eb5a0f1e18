use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{bind, Forward, InterpolationSpec, MaskSpec, Mode, Model, Padded};
use crate::numerics::Graph;

/// Sentences decoded together by greedy search.
pub const DECODE_BATCH: usize = 64;

/// Output length cap, excluding the end marker.
pub fn max_output_len(src_len: usize) -> usize {
    2 * src_len + 8
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Decodes every source sequence; outputs exclude BOS and EOS.
pub fn decode(
    model: &Model,
    srcs: &[Vec<usize>],
    mask: &MaskSpec,
    interp: &InterpolationSpec,
    beam: usize,
) -> Result<Vec<Vec<usize>>> {
    if beam == 0 {
        return Err(Error::InvalidArgument("beam must be at least 1".into()));
    }
    if let Some(i) = srcs.iter().position(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!("source sentence {} is empty", i)));
    }
    let mut out = Vec::with_capacity(srcs.len());
    if beam == 1 {
        for chunk in srcs.chunks(DECODE_BATCH) {
            out.extend(greedy_batch(model, chunk, mask, interp)?);
        }
    } else {
        for src in srcs {
            out.push(beam_one(model, src, mask, interp, beam)?);
        }
    }
    Ok(out)
}

fn greedy_batch(
    model: &Model,
    srcs: &[Vec<usize>],
    mask: &MaskSpec,
    interp: &InterpolationSpec,
) -> Result<Vec<Vec<usize>>> {
    let mut g = Graph::new();
    let bound = bind(&mut g, &model.config, &model.params, model.init.as_ref(), interp, false)?;
    let mut fwd = Forward::new(&model.config, bound, mask, Mode::Eval)?;
    let src = Padded::new(srcs);
    let memory = fwd.encode(&mut g, &src)?;
    let caps: Vec<usize> = srcs.iter().map(|s| max_output_len(s.len())).collect();
    let mut outputs: Vec<Vec<usize>> = vec![Vec::new(); srcs.len()];
    let mut done = vec![false; srcs.len()];
    let mut prefixes: Vec<Vec<usize>> = vec![vec![BOS]; srcs.len()];
    while done.iter().any(|d| !d) {
        let tgt = Padded::new(&prefixes);
        let hidden = fwd.decode(&mut g, memory, &src, &tgt)?;
        let last = g.gather_rows(hidden, &tgt.last_rows())?;
        let logits = fwd.project(&mut g, last)?;
        let logits = g.value(logits).clone();
        for b in 0..srcs.len() {
            let tok = argmax(logits.row(b));
            prefixes[b].push(tok);
            if done[b] {
                continue;
            }
            if tok == EOS {
                done[b] = true;
            } else {
                outputs[b].push(tok);
                done[b] = outputs[b].len() >= caps[b];
            }
        }
    }
    Ok(outputs)
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Beam search ranked by summed log-probability, ties broken towards the
/// lexicographically smaller sequence.
fn beam_one(model: &Model, src: &[usize], mask: &MaskSpec, interp: &InterpolationSpec, k: usize) -> Result<Vec<usize>> {
    let mut g = Graph::new();
    let bound = bind(&mut g, &model.config, &model.params, model.init.as_ref(), interp, false)?;
    let mut fwd = Forward::new(&model.config, bound, mask, Mode::Eval)?;
    let single = Padded::new(&[src.to_vec()]);
    let memory = fwd.encode(&mut g, &single)?;
    let cap = max_output_len(src.len());

    let better = |a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0));
    let mut alive: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    while !alive.is_empty() {
        let n = alive.len();
        let src_rep = Padded::new(&vec![src.to_vec(); n]);
        let rows: Vec<usize> = (0..n).flat_map(|_| 0..single.seq).collect();
        let mem_rep = g.gather_rows(memory, &rows)?;
        let prefixes: Vec<Vec<usize>> = alive
            .iter()
            .map(|(t, _)| std::iter::once(BOS).chain(t.iter().copied()).collect())
            .collect();
        let tgt = Padded::new(&prefixes);
        let hidden = fwd.decode(&mut g, mem_rep, &src_rep, &tgt)?;
        let last = g.gather_rows(hidden, &tgt.last_rows())?;
        let logits = fwd.project(&mut g, last)?;
        let logits = g.value(logits).clone();

        let mut cands: Vec<(Vec<usize>, f64)> = Vec::new();
        for (i, (tokens, score)) in alive.iter().enumerate() {
            for (tok, lp) in log_softmax(logits.row(i)).into_iter().enumerate() {
                let mut t = tokens.clone();
                t.push(tok);
                cands.push((t, score + lp));
            }
        }
        cands.sort_by(better);
        let mut next = Vec::with_capacity(k);
        for (mut tokens, score) in cands {
            if next.len() == k {
                break;
            }
            if tokens.last() == Some(&EOS) {
                tokens.pop();
                finished.push((tokens, score));
            } else if tokens.len() >= cap {
                finished.push((tokens, score));
            } else {
                next.push((tokens, score));
            }
        }
        alive = next;
        finished.sort_by(better);
        finished.truncate(k);
        // scores only decrease with length, so a full set of finished
        // hypotheses that beats every live one is final
        if finished.len() == k && alive.first().is_none_or(|a| finished[k - 1].1 >= a.1) {
            break;
        }
    }
    Ok(finished.into_iter().next().map(|(t, _)| t).unwrap_or_default())
}
