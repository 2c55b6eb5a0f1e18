use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{select_unimportant, table};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::importance::{contribution_scores, criticality_scores, fan_out, uniform_alpha_grid, EvalContext, DEFAULT_ALPHA_POINTS};
use crate::model::{owned_names, Checkpoint, ComponentId, InterpolationSpec, MaskSpec};
use crate::training::{finetune, RunDir};

/// Score used to pick the components to rewind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Contribution,
    Criticality,
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contribution" => Ok(Selection::Contribution),
            "criticality" => Ok(Selection::Criticality),
            _ => Err(Error::InvalidArgument(format!("unknown selection metric `{}`", s))),
        }
    }
}

/// Scores `standard` with the selection metric.
pub fn selection_grid(
    standard: &Checkpoint,
    selection: Selection,
    ctx: &EvalContext,
) -> Result<crate::importance::ImportanceGrid> {
    match selection {
        Selection::Contribution => contribution_scores(&standard.model, "final.cscp", ctx),
        Selection::Criticality => {
            criticality_scores(&standard.model, "final.cscp", ctx, &uniform_alpha_grid(DEFAULT_ALPHA_POINTS), None)
        }
    }
}

/// Copies the initialization values of every parameter owned by `ids` into
/// the live parameters. Idempotent.
pub fn rewind_components(checkpoint: &Checkpoint, ids: &[ComponentId]) -> Result<Checkpoint> {
    let mut out = checkpoint.clone();
    let init = checkpoint.model.init()?;
    for id in ids {
        out.model.config.check_component(id)?;
        for name in owned_names(&out.model.config, id) {
            *out.model.params.get_mut(&name)? = init.get(&name)?.clone();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewindReport {
    pub rewound: Vec<ComponentId>,
    pub selection: Selection,
    pub dataset: String,
    pub extra_steps: u64,
    pub standard: f64,
    pub r#continue: f64,
    pub rewind: f64,
    /// Rewind arm before fine-tuning.
    pub rewind_step0: f64,
    /// Steps each fine-tuned arm actually took.
    pub continue_steps: u64,
    pub rewind_steps: u64,
}

impl RewindReport {
    pub fn to_table(&self) -> String {
        let rows = [
            ("Standard", self.standard),
            ("Continue", self.r#continue),
            ("Rewind", self.rewind),
        ]
        .iter()
        .map(|(name, b)| vec![name.to_string(), format!("{:.2}", b)])
        .collect::<Vec<_>>();
        table(&["Model", "BLEU"], &rows)
    }
}

/// Fine-tunes the run's final checkpoint as is ("continue") and after
/// rewinding its least important components ("rewind"), both for
/// `extra_steps` with identical seeds. Fine-tuned checkpoints are written to
/// `out/continue/final.cscp` and `out/rewind/final.cscp`.
pub fn rewind_experiment(
    run: &RunDir,
    fraction: f64,
    extra_steps: u64,
    selection: Selection,
    ctx: &EvalContext,
    out: &Path,
) -> Result<RewindReport> {
    if extra_steps == 0 {
        return Err(Error::InvalidArgument("extra_steps must be positive".into()));
    }
    let cfg = run.config()?;
    let standard = run.load_final()?;
    let grid = selection_grid(&standard, selection, ctx)?;
    let ids = select_unimportant(&grid, fraction)?;
    let rewound = rewind_components(&standard, &ids)?;
    let train_set = cfg.data.generate(Split::Train, cfg.model.max_len)?;

    let none = InterpolationSpec::none();
    let score = |ck: &Checkpoint| evaluate(&ck.model, ctx.corpus, &MaskSpec::none(), &none, ctx.beam);
    let starts = vec![("continue", standard.clone()), ("rewind", rewound.clone())];
    let tuned = fan_out(ctx.jobs.min(2), starts, |(name, start)| {
        let ck = finetune(&start, &cfg, &train_set, extra_steps)?;
        let dir = RunDir::new(out.join(name));
        std::fs::create_dir_all(dir.root()).map_err(|e| Error::io(dir.root(), e))?;
        ck.save(&dir.final_path())?;
        Ok((ck.step - start.step, score(&ck)?))
    })?;
    Ok(RewindReport {
        rewound: ids,
        selection,
        dataset: ctx.dataset.clone(),
        extra_steps,
        standard: score(&standard)?,
        r#continue: tuned[0].1,
        rewind: tuned[1].1,
        rewind_step0: score(&rewound)?,
        continue_steps: tuned[0].0,
        rewind_steps: tuned[1].0,
    })
}
