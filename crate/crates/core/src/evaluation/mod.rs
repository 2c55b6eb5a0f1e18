//! Decoding and corpus BLEU.

mod bleu;
mod decode;

pub use bleu::{bleu, bleu_text, BleuStats, MAX_ORDER};
pub use decode::{argmax, decode, max_output_len, DECODE_BATCH};

use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::error::Result;
use crate::model::{InterpolationSpec, MaskSpec, Model};

/// Outcome of one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub n_sentences: usize,
    pub mask: MaskSpec,
    pub interp: InterpolationSpec,
    pub checkpoint: String,
}

/// Corpus BLEU of `model` on `corpus` under the given specs.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    mask: &MaskSpec,
    interp: &InterpolationSpec,
    beam: usize,
) -> Result<f64> {
    let srcs: Vec<Vec<usize>> = corpus.pairs.iter().map(|p| p.src.clone()).collect();
    let refs: Vec<Vec<usize>> = corpus.pairs.iter().map(|p| p.tgt.clone()).collect();
    let hyps = decode(model, &srcs, mask, interp, beam)?;
    bleu(&hyps, &refs)
}

pub fn report(
    model: &Model,
    corpus: &Corpus,
    mask: &MaskSpec,
    interp: &InterpolationSpec,
    beam: usize,
    checkpoint: &str,
) -> Result<EvalReport> {
    Ok(EvalReport {
        bleu: evaluate(model, corpus, mask, interp, beam)?,
        n_sentences: corpus.len(),
        mask: mask.clone(),
        interp: interp.clone(),
        checkpoint: checkpoint.to_string(),
    })
}
