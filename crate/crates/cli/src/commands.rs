use std::path::Path;

use sublayer_core::data::Corpus;
use sublayer_core::importance::{
    contribution_scores, criticality_scores, isometry_check, learning_dynamics, pwcca_similarity, uniform_alpha_grid,
    ImportanceGrid, DEFAULT_ALPHA_POINTS,
};
use sublayer_core::report::{render_report, sweep, to_json, write_text};
use sublayer_core::surgery::{
    group_ablation, prune_model, rewind_experiment, select_unimportant, selection_grid,
};
use sublayer_core::training::train;
use sublayer_core::{Checkpoint, EvalContext, Result, RunConfig, RunDir};

use crate::{Analysis, Cli, Command};

const FINAL_LABEL: &str = "final.cscp";

struct Loaded {
    run: RunDir,
    checkpoint: Checkpoint,
    corpus: Corpus,
    dataset: String,
}

impl Loaded {
    fn open(a: &Analysis) -> Result<Self> {
        let run = RunDir::open(&a.run)?;
        let cfg = run.config()?;
        let checkpoint = run.load_final()?;
        let (corpus, dataset) = a.eval_set.load(&cfg)?;
        Ok(Self {
            run,
            checkpoint,
            corpus,
            dataset,
        })
    }

    fn ctx(&self, a: &Analysis, jobs: usize) -> EvalContext<'_> {
        EvalContext {
            beam: a.beam as usize,
            jobs,
            ..EvalContext::new(&self.corpus, self.dataset.clone())
        }
    }
}

fn emit(grid: &ImportanceGrid, run: &RunDir, stem: &str) -> Result<()> {
    if grid.meta.degenerate {
        eprintln!("warning: degenerate baseline: masking no component lowers BLEU, so every score is zero");
    }
    let paths = grid.write_all(&run.analysis_dir(), stem)?;
    print!("{}", grid.to_csv());
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let jobs = cli.jobs as usize;
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let outcome = train(&cfg, &out, &mut |m| {
                eprintln!(
                    "epoch {:>3}  step {:>6}  loss {:.4}  valid BLEU {:.2}",
                    m.epoch, m.step, m.train_loss, m.valid_bleu
                )
            })?;
            eprintln!("wrote {}", outcome.run.final_path().display());
        }
        Command::Defaults => print!("{}", RunConfig::default().to_toml()?),
        Command::Contribution(a) => {
            let l = Loaded::open(&a)?;
            let grid = contribution_scores(&l.checkpoint.model, FINAL_LABEL, &l.ctx(&a, jobs))?;
            emit(&grid, &l.run, "contribution")?;
        }
        Command::Criticality {
            analysis: a,
            alpha_grid,
            epsilon,
        } => {
            let l = Loaded::open(&a)?;
            let alphas = alpha_grid.unwrap_or_else(|| uniform_alpha_grid(DEFAULT_ALPHA_POINTS));
            let grid = criticality_scores(&l.checkpoint.model, FINAL_LABEL, &l.ctx(&a, jobs), &alphas, epsilon)?;
            emit(&grid, &l.run, "criticality")?;
        }
        Command::Pwcca { analysis: a, probes } => {
            let l = Loaded::open(&a)?;
            let grid = pwcca_similarity(&l.checkpoint.model, FINAL_LABEL, &l.ctx(&a, jobs), probes)?;
            emit(&grid, &l.run, "pwcca")?;
        }
        Command::Isometry { analysis: a, at, probes } => {
            let l = Loaded::open(&a)?;
            let grid = isometry_check(&l.checkpoint.model, FINAL_LABEL, &l.ctx(&a, jobs), at, probes)?;
            emit(&grid, &l.run, &format!("isometry-{}", at))?;
        }
        Command::Dynamics(a) => {
            let l = Loaded::open(&a)?;
            let dynamics = learning_dynamics(&l.run, &l.ctx(&a, jobs))?;
            dynamics.write_all(&l.run.analysis_dir())?;
            print!("{}", dynamics.to_csv());
            for &e in &dynamics.epochs {
                if let Some(rho) = dynamics.correlation_with_final(e) {
                    eprintln!("epoch {:>3}: Spearman with final {:+.3}", e, rho);
                }
            }
        }
        Command::GroupAblate {
            analysis: a,
            k,
            strategy,
        } => {
            let l = Loaded::open(&a)?;
            let curve = group_ablation(&l.checkpoint.model, &l.ctx(&a, jobs), k, strategy)?;
            let dir = l.run.analysis_dir();
            write_text(&dir.join(format!("ablation-{}.csv", strategy)), &curve.to_csv())?;
            write_text(&dir.join(format!("ablation-{}.json", strategy)), &to_json(&curve))?;
            print!("{}", curve.to_csv());
        }
        Command::Prune {
            analysis: a,
            fraction,
            by,
        } => {
            let l = Loaded::open(&a)?;
            let ctx = l.ctx(&a, jobs);
            let ids = select_unimportant(&selection_grid(&l.checkpoint, by, &ctx)?, fraction)?;
            let dir = l.run.analysis_dir();
            let report = prune_model(&l.run, &ids, &ctx, &dir.join("prune"))?;
            for arm in report.arms.iter().filter(|a| a.error.is_some()) {
                eprintln!("warning: arm {} failed: {}", arm.name, arm.error.as_deref().unwrap_or_default());
            }
            if !report.shallow_matched {
                eprintln!("warning: a one-layer decoder still has more parameters than the pruned model");
            }
            write_text(&dir.join("prune.txt"), &report.to_table())?;
            write_text(&dir.join("prune.json"), &to_json(&report))?;
            let names: Vec<String> = ids.iter().map(ToString::to_string).collect();
            println!("removed: {}", names.join(" "));
            print!("{}", report.to_table());
        }
        Command::Rewind {
            analysis: a,
            fraction,
            extra_steps,
            by,
        } => {
            let l = Loaded::open(&a)?;
            let ctx = l.ctx(&a, jobs);
            let steps = extra_steps.unwrap_or_else(|| (l.checkpoint.step / 5).max(1));
            let dir = l.run.analysis_dir();
            let report = rewind_experiment(&l.run, fraction, steps, by, &ctx, &dir.join("rewind"))?;
            write_text(&dir.join("rewind.txt"), &report.to_table())?;
            write_text(&dir.join("rewind.json"), &to_json(&report))?;
            let names: Vec<String> = report.rewound.iter().map(ToString::to_string).collect();
            println!("rewound: {}  (+{} steps)", names.join(" "), steps);
            print!("{}", report.to_table());
        }
        Command::Sweep {
            param,
            values,
            config,
            out,
            eval_set,
        } => {
            let base = load_config(config.as_deref())?;
            let values = values.unwrap_or_else(|| param.default_values());
            let report = sweep(&base, param, &values, &eval_set, jobs, &out, &mut |name| {
                eprintln!("training {}", name)
            })?;
            print!("{}", report.to_table());
        }
        Command::Report { run } => {
            let run = RunDir::open(&run)?;
            print!("{}", render_report(&run)?);
        }
    }
    Ok(())
}
