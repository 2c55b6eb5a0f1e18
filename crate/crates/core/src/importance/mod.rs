//! Component importance analyzers.

mod contribution;
mod criticality;
mod dynamics;
mod grid;
mod isometry;
mod pwcca;
mod stats;

pub use contribution::{contribution_from_drops, contribution_scores, Contribution, CLIP_FRACTION};
pub use criticality::{check_alpha_grid, criticality_scores, default_epsilon, DEFAULT_ALPHA_POINTS, first_under, uniform_alpha_grid};
pub use dynamics::{learning_dynamics, Dynamics};
pub use grid::{GridMeta, ImportanceGrid, CSV_HEADER};
pub use isometry::{block_mean_singular_value, isometry_check, IsometryAt, DEFAULT_ISOMETRY_PROBES};
pub use pwcca::{pwcca, pwcca_similarity, DEFAULT_PROBES, RANK_TOL};
pub use stats::{average_ranks, pearson, spearman};

use rayon::prelude::*;

use crate::data::Corpus;
use crate::error::{Error, Result};

/// Evaluation set and execution settings shared by the analyzers.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub corpus: &'a Corpus,
    /// Label recorded in grid metadata.
    pub dataset: String,
    pub beam: usize,
    /// Worker threads for independent evaluations; `1` runs inline.
    pub jobs: usize,
}

impl<'a> EvalContext<'a> {
    pub fn new(corpus: &'a Corpus, dataset: impl Into<String>) -> Self {
        Self {
            corpus,
            dataset: dataset.into(),
            beam: 1,
            jobs: 1,
        }
    }
}

/// Maps `f` over `items` on up to `jobs` threads, returning results in
/// input order.
pub fn fan_out<T, R, F>(jobs: usize, items: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync + Send,
{
    if jobs <= 1 {
        return items.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {}", e)))?;
    pool.install(|| items.into_par_iter().map(f).collect())
}
