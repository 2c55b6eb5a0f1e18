use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::importance::{contribution_scores, fan_out, EvalContext, ImportanceGrid};
use crate::model::{ComponentId, InterpolationSpec, MaskSpec, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Re-evaluates every remaining candidate each round.
    Greedy,
    /// Follows single-component drops, smallest first.
    Static,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Greedy => "greedy",
            Strategy::Static => "static",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Strategy::Greedy),
            "static" => Ok(Strategy::Static),
            _ => Err(Error::InvalidArgument(format!("unknown strategy `{}`", s))),
        }
    }
}

/// BLEU after masking the first `k` components of `order`, for `k = 0..`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub strategy: Strategy,
    pub order: Vec<ComponentId>,
    /// `bleu[k]` has `k` components masked; `bleu[0]` is the baseline.
    pub bleu: Vec<f64>,
}

impl AblationCurve {
    /// `k,component,bleu` rows; the `k = 0` row has no component.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,component,bleu\n");
        for (k, b) in self.bleu.iter().enumerate() {
            let comp = if k == 0 { String::new() } else { self.order[k - 1].to_string() };
            out.push_str(&format!("{},{},{}\n", k, comp, b));
        }
        out
    }
}

/// Order used by the static strategy: ascending raw BLEU drop of the single
/// masks recorded in a contribution grid, ties in canonical order.
pub fn static_order(grid: &ImportanceGrid) -> Result<Vec<ComponentId>> {
    let baseline = grid
        .baseline_bleu
        .ok_or_else(|| Error::InvalidArgument("static order needs a contribution grid".into()))?;
    let mut ids: Vec<(ComponentId, f64)> = grid
        .scores
        .keys()
        .map(|id| {
            grid.meta
                .masked_bleu
                .get(id)
                .map(|b| (*id, baseline - b))
                .ok_or_else(|| Error::InvalidArgument(format!("grid has no masked BLEU for {}", id)))
        })
        .collect::<Result<_>>()?;
    ids.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ids.into_iter().map(|(id, _)| id).collect())
}

/// Masks up to `k_max` components together without retraining.
pub fn group_ablation(model: &Model, ctx: &EvalContext, k_max: usize, strategy: Strategy) -> Result<AblationCurve> {
    let all = model.config.components();
    if k_max > all.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {} exceeds the {} components",
            k_max,
            all.len()
        )));
    }
    let none = InterpolationSpec::none();
    let baseline = evaluate(model, ctx.corpus, &MaskSpec::none(), &none, ctx.beam)?;
    let mut bleu = vec![baseline];
    let mut order = Vec::new();
    match strategy {
        Strategy::Greedy => {
            let mut masked = BTreeSet::new();
            for _ in 0..k_max {
                let remaining: Vec<ComponentId> = all.iter().filter(|c| !masked.contains(*c)).copied().collect();
                let scores = fan_out(ctx.jobs, remaining.clone(), |c| {
                    let mut m = masked.clone();
                    m.insert(c);
                    evaluate(model, ctx.corpus, &MaskSpec { masked: m }, &none, ctx.beam)
                })?;
                // highest BLEU wins; the earliest canonical id wins ties
                let mut best = 0;
                for (i, &s) in scores.iter().enumerate() {
                    if s > scores[best] {
                        best = i;
                    }
                }
                masked.insert(remaining[best]);
                order.push(remaining[best]);
                bleu.push(scores[best]);
            }
        }
        Strategy::Static => {
            let grid = contribution_scores(model, "", ctx)?;
            let full = static_order(&grid)?;
            let prefixes: Vec<usize> = (1..=k_max).collect();
            let scores = fan_out(ctx.jobs, prefixes, |k| {
                evaluate(model, ctx.corpus, &MaskSpec::of(full[..k].iter().copied()), &none, ctx.beam)
            })?;
            order = full[..k_max].to_vec();
            bleu.extend(scores);
        }
    }
    Ok(AblationCurve { strategy, order, bleu })
}

/// The `⌈fraction · N⌉` lowest-scoring components, ties in canonical order.
pub fn select_unimportant(grid: &ImportanceGrid, fraction: f64) -> Result<Vec<ComponentId>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {} is outside (0, 1)", fraction)));
    }
    let n = grid.scores.len();
    // absorb representation error such as 0.7 · 10 = 7.000000000000001
    let k = ((fraction * n as f64) - 1e-9).ceil() as usize;
    let mut ids: Vec<(ComponentId, f64)> = grid.scores.iter().map(|(&id, &s)| (id, s)).collect();
    ids.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ids.into_iter().take(k).map(|(id, _)| id).collect())
}
