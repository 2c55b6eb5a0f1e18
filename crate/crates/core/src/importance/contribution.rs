use std::collections::BTreeMap;

use super::grid::{GridMeta, ImportanceGrid};
use super::{fan_out, EvalContext};
use crate::error::Result;
use crate::evaluation::evaluate;
use crate::model::{ComponentId, InterpolationSpec, MaskSpec, Model};

/// Fraction of the baseline BLEU at which drops are clipped.
pub const CLIP_FRACTION: f64 = 0.10;

/// Normalized, clipped scores from raw BLEU drops.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub scores: BTreeMap<ComponentId, f64>,
    pub clip: f64,
    /// True when no drop is positive and all scores are therefore zero.
    pub degenerate: bool,
}

/// `clamp(drop, 0, C) / max clamp` with `C = 0.1 · baseline`; all zeros when
/// the maximum is zero.
pub fn contribution_from_drops(baseline: f64, drops: &BTreeMap<ComponentId, f64>) -> Contribution {
    let clip = CLIP_FRACTION * baseline.max(0.0);
    let clipped: BTreeMap<ComponentId, f64> = drops.iter().map(|(&id, &d)| (id, d.max(0.0).min(clip))).collect();
    let top = clipped.values().copied().fold(0.0, f64::max);
    let degenerate = top == 0.0;
    let scores = clipped
        .into_iter()
        .map(|(id, m)| (id, if degenerate { 0.0 } else { m / top }))
        .collect();
    Contribution {
        scores,
        clip,
        degenerate,
    }
}

/// Masks each component in turn and scores the BLEU drop.
pub fn contribution_scores(model: &Model, checkpoint: &str, ctx: &EvalContext) -> Result<ImportanceGrid> {
    let none = InterpolationSpec::none();
    let baseline = evaluate(model, ctx.corpus, &MaskSpec::none(), &none, ctx.beam)?;
    let ids = model.config.components();
    let masked = fan_out(ctx.jobs, ids.clone(), |id| {
        evaluate(model, ctx.corpus, &MaskSpec::single(id), &none, ctx.beam)
    })?;
    let masked_bleu: BTreeMap<ComponentId, f64> = ids.into_iter().zip(masked).collect();
    let drops = masked_bleu.iter().map(|(&id, &b)| (id, baseline - b)).collect();
    let c = contribution_from_drops(baseline, &drops);
    let meta = GridMeta {
        checkpoint: checkpoint.to_string(),
        dataset: ctx.dataset.clone(),
        clip: Some(c.clip),
        degenerate: c.degenerate,
        masked_bleu,
        ..GridMeta::default()
    };
    Ok(ImportanceGrid::new("contribution", c.scores, Some(baseline), meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drops(v: &[f64]) -> BTreeMap<ComponentId, f64> {
        v.iter().enumerate().map(|(i, &d)| (ComponentId::dec_ff(i), d)).collect()
    }

    #[test]
    fn hand_evaluated_triple() {
        let c = contribution_from_drops(30.0, &drops(&[5.0, 0.5, -0.2]));
        assert!((c.clip - 3.0).abs() < 1e-12);
        let s: Vec<f64> = c.scores.values().copied().collect();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!((s[1] - 0.5 / 3.0).abs() < 1e-12);
        assert_eq!(s[2], 0.0);
        assert!(!c.degenerate);
    }

    #[test]
    fn non_positive_drops_are_degenerate() {
        let c = contribution_from_drops(30.0, &drops(&[0.0, -1.0]));
        assert!(c.degenerate);
        assert!(c.scores.values().all(|&s| s == 0.0));
    }

    #[test]
    fn two_components_over_the_clip_both_score_one() {
        let c = contribution_from_drops(30.0, &drops(&[4.0, 9.0, 1.5]));
        let s: Vec<f64> = c.scores.values().copied().collect();
        assert_eq!(&s[..2], &[1.0, 1.0]);
        assert_eq!(s[2], 0.5);
    }
}
