//! Group-level operations on importance grids: multi-component ablation,
//! prune-and-retrain and rewind-and-finetune.

mod ablation;
mod prune;
mod rewind;

pub use ablation::{group_ablation, select_unimportant, static_order, AblationCurve, Strategy};
pub use prune::{prune_model, shallow_decoder, PruneArm, PruneReport};
pub use rewind::{rewind_components, rewind_experiment, selection_grid, RewindReport, Selection};

/// Plain-text table with left-aligned, space-padded columns.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{:<w$}", c, w = w))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&line(rule.iter().map(String::as_str).collect()));
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}
