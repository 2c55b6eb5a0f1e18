use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::contribution::contribution_scores;
use super::grid::ImportanceGrid;
use super::stats::spearman;
use super::EvalContext;
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::training::RunDir;

/// Contribution grids of every epoch checkpoint of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub epochs: Vec<usize>,
    pub grids: Vec<ImportanceGrid>,
}

impl Dynamics {
    pub fn final_grid(&self) -> &ImportanceGrid {
        self.grids.last().expect("at least one epoch")
    }

    pub fn grid_at(&self, epoch: usize) -> Option<&ImportanceGrid> {
        self.epochs.iter().position(|&e| e == epoch).map(|i| &self.grids[i])
    }

    /// Spearman correlation of the epoch's grid with the final grid.
    pub fn correlation_with_final(&self, epoch: usize) -> Option<f64> {
        self.grid_at(epoch)
            .map(|g| spearman(&g.values(), &self.final_grid().values()))
    }

    /// The early epoch `⌈E/4⌉` for a run of `E` epochs.
    pub fn early_epoch(&self) -> usize {
        let last = self.epochs.last().copied().unwrap_or(0);
        last.div_ceil(4)
    }

    /// Matrix of scores: one row per epoch, one column per component.
    pub fn to_csv(&self) -> String {
        let ids: Vec<String> = self.final_grid().scores.keys().map(ToString::to_string).collect();
        let mut out = format!("epoch,baseline_bleu,{}\n", ids.join(","));
        for (epoch, grid) in self.epochs.iter().zip(&self.grids) {
            let cells: Vec<String> = grid.values().iter().map(f64::to_string).collect();
            out.push_str(&format!(
                "{},{},{}\n",
                epoch,
                grid.baseline_bleu.unwrap_or(f64::NAN),
                cells.join(",")
            ));
        }
        out
    }

    /// Writes `dynamics.csv` and one grid triple per epoch under `dynamics/`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        let sub = dir.join("dynamics");
        for (epoch, grid) in self.epochs.iter().zip(&self.grids) {
            grid.write_all(&sub, &format!("epoch-{:03}", epoch))?;
        }
        let path = dir.join("dynamics.csv");
        fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))
    }
}

/// Applies contribution scoring to every epoch checkpoint of `run`.
pub fn learning_dynamics(run: &RunDir, ctx: &EvalContext) -> Result<Dynamics> {
    let mut epochs = Vec::new();
    let mut grids = Vec::new();
    for (epoch, path) in run.epoch_checkpoints()? {
        let ck = Checkpoint::load(&path)?;
        let label = format!("checkpoints/epoch-{:03}.cscp", epoch);
        grids.push(contribution_scores(&ck.model, &label, ctx)?);
        epochs.push(epoch);
    }
    Ok(Dynamics { epochs, grids })
}
