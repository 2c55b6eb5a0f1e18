use std::path::Path;

use serde::{Deserialize, Serialize};

use super::table;
use crate::error::Result;
use crate::evaluation::evaluate;
use crate::importance::{fan_out, EvalContext};
use crate::model::{remove_components, ComponentId, InterpolationSpec, MaskSpec, ModelConfig};
use crate::training::{train, RunConfig, RunDir};

/// One architecture of the prune comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneArm {
    pub name: String,
    pub params: usize,
    pub config: ModelConfig,
    /// `None` when training failed; see `error`.
    pub bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub removed: Vec<ComponentId>,
    pub dataset: String,
    /// False when even a one-layer decoder exceeds the pruned count.
    pub shallow_matched: bool,
    pub arms: Vec<PruneArm>,
}

impl PruneReport {
    pub fn arm(&self, name: &str) -> Option<&PruneArm> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .arms
            .iter()
            .map(|a| {
                vec![
                    a.name.clone(),
                    a.params.to_string(),
                    a.bleu.map_or_else(|| "diverged".to_string(), |b| format!("{:.2}", b)),
                ]
            })
            .collect();
        table(&["Model", "#Params", "BLEU"], &rows)
    }
}

/// Deepest decoder below `base.dec_layers` whose parameter count does not
/// exceed `budget`, or one layer if none fits.
pub fn shallow_decoder(base: &ModelConfig, budget: usize) -> (ModelConfig, bool) {
    let mut cfg = ModelConfig {
        removed: Default::default(),
        ..base.clone()
    };
    for layers in (1..base.dec_layers).rev() {
        cfg.dec_layers = layers;
        if cfg.param_count() <= budget {
            return (cfg, true);
        }
    }
    cfg.dec_layers = 1;
    (cfg, false)
}

/// Compares the run's architecture with `ids` removed and with a
/// parameter-matched shallow decoder, all trained with the run's
/// hyper-parameters and seeds. The standard arm is the run itself: training
/// is deterministic, so retraining it would reproduce its checkpoint. New
/// arms are trained under `out/pruned` and `out/shallow-decoder`.
pub fn prune_model(run: &RunDir, ids: &[ComponentId], ctx: &EvalContext, out: &Path) -> Result<PruneReport> {
    let cfg = run.config()?;
    let standard = run.load_final()?;
    let pruned_model = remove_components(&cfg.model, ids)?;
    let (shallow, matched) = shallow_decoder(&cfg.model, pruned_model.param_count());
    let none = InterpolationSpec::none();

    let arms = vec![
        ("pruned", pruned_model),
        ("shallow-decoder", shallow),
    ];
    let trained = fan_out(ctx.jobs.min(arms.len()), arms, |(name, model)| {
        let arm_cfg = RunConfig {
            model: model.clone(),
            ..cfg.clone()
        };
        let bleu = train(&arm_cfg, &out.join(name), &mut |_| {})
            .and_then(|o| evaluate(&o.checkpoint.model, ctx.corpus, &MaskSpec::none(), &none, ctx.beam));
        Ok(PruneArm {
            name: name.to_string(),
            params: model.param_count(),
            bleu: bleu.as_ref().ok().copied(),
            error: bleu.err().map(|e| e.to_string()),
            config: model,
        })
    })?;
    let mut report = PruneReport {
        removed: ids.to_vec(),
        dataset: ctx.dataset.clone(),
        shallow_matched: matched,
        arms: vec![PruneArm {
            name: "standard".to_string(),
            params: standard.model.config.param_count(),
            bleu: Some(evaluate(&standard.model, ctx.corpus, &MaskSpec::none(), &none, ctx.beam)?),
            error: None,
            config: standard.model.config.clone(),
        }],
    };
    report.arms.extend(trained);
    Ok(report)
}
