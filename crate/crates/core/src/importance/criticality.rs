use std::collections::BTreeMap;

use super::grid::{GridMeta, ImportanceGrid};
use super::{fan_out, EvalContext};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::model::{ComponentId, InterpolationSpec, MaskSpec, Model};

/// Points in the default interpolation grid (step 0.05).
pub const DEFAULT_ALPHA_POINTS: usize = 21;

/// `n` evenly spaced points from 0 to 1 inclusive.
pub fn uniform_alpha_grid(n: usize) -> Vec<f64> {
    match n {
        0 | 1 => vec![0.0, 1.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Default tolerance: `max(0.5, 1% of baseline)` BLEU.
pub fn default_epsilon(baseline: f64) -> f64 {
    (0.01 * baseline).max(0.5)
}

pub fn check_alpha_grid(grid: &[f64]) -> Result<()> {
    let bad = |m: &str| Err(Error::InvalidArgument(format!("alpha grid {:?}: {}", grid, m)));
    if grid.first() != Some(&0.0) || grid.last() != Some(&1.0) {
        return bad("must start at 0 and end at 1");
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return bad("must be strictly ascending");
    }
    Ok(())
}

/// First grid `α` whose BLEU drop is below `epsilon`; `1` if none is.
pub fn first_under(alphas: &[f64], drops: &[f64], epsilon: f64) -> f64 {
    alphas
        .iter()
        .zip(drops)
        .find(|(_, &d)| d < epsilon)
        .map_or(1.0, |(&a, _)| a)
}

/// Interpolates each component between θ⁰ and θ^f along `alphas` and
/// records the smallest `α` that keeps BLEU within `epsilon` of the
/// baseline, along with the full BLEU-vs-`α` curve.
pub fn criticality_scores(
    model: &Model,
    checkpoint: &str,
    ctx: &EvalContext,
    alphas: &[f64],
    epsilon: Option<f64>,
) -> Result<ImportanceGrid> {
    model.init()?;
    check_alpha_grid(alphas)?;
    if let Some(e) = epsilon {
        if !(e > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {} must be positive", e)));
        }
    }
    let mask = MaskSpec::none();
    let baseline = evaluate(model, ctx.corpus, &mask, &InterpolationSpec::none(), ctx.beam)?;
    let epsilon = epsilon.unwrap_or_else(|| default_epsilon(baseline));
    let ids = model.config.components();
    let jobs: Vec<(ComponentId, f64)> = ids.iter().flat_map(|&id| alphas.iter().map(move |&a| (id, a))).collect();
    let bleus = fan_out(ctx.jobs, jobs, |(id, a)| {
        evaluate(model, ctx.corpus, &mask, &InterpolationSpec::single(id, a), ctx.beam)
    })?;
    let mut scores = BTreeMap::new();
    let mut curves = BTreeMap::new();
    for (id, curve) in ids.into_iter().zip(bleus.chunks(alphas.len())) {
        let drops: Vec<f64> = curve.iter().map(|b| baseline - b).collect();
        scores.insert(id, first_under(alphas, &drops, epsilon));
        curves.insert(id, curve.to_vec());
    }
    let meta = GridMeta {
        checkpoint: checkpoint.to_string(),
        dataset: ctx.dataset.clone(),
        epsilon: Some(epsilon),
        alpha_grid: Some(alphas.to_vec()),
        curves,
        ..GridMeta::default()
    };
    Ok(ImportanceGrid::new("criticality", scores, Some(baseline), meta))
}
