//! Synthetic sequence-to-sequence corpora.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Padded;
use crate::rng;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const FIRST_PAYLOAD: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Copy,
    Reverse,
    Sort,
    ToyTranslate,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Copy => "copy",
            Task::Reverse => "reverse",
            Task::Sort => "sort",
            Task::ToyTranslate => "toy_translate",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Task::Copy, Task::Reverse, Task::Sort, Task::ToyTranslate]
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown task `{}`", s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn bucket(self) -> u64 {
        match self {
            Split::Valid => 0,
            Split::Test => 1,
            Split::Train => 2,
        }
    }

    /// Maps a source-sequence hash to the split that owns it; one tenth each
    /// for valid and test.
    fn of_hash(h: u64) -> Split {
        match h % 10 {
            0 => Split::Valid,
            1 => Split::Test,
            _ => Split::Train,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub task: Task,
    pub split: Split,
    /// Token ids are below this bound.
    pub vocab: usize,
    pub pairs: Vec<Pair>,
}

/// Corpus generation settings, the `[data]` section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub task: Task,
    pub train_pairs: usize,
    pub valid_pairs: usize,
    pub test_pairs: usize,
    /// Vocabulary size including the three special tokens.
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            task: Task::ToyTranslate,
            train_pairs: 4000,
            valid_pairs: 200,
            test_pairs: 200,
            vocab: 32,
            min_len: 3,
            max_len: 9,
            seed: 1,
        }
    }
}

impl DataConfig {
    /// `model_max_len` bounds the target including its BOS/EOS marker.
    pub fn validate(&self, model_max_len: usize) -> Result<()> {
        if self.vocab <= FIRST_PAYLOAD {
            return Err(Error::config("data.vocab", format!("must exceed {}", FIRST_PAYLOAD)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config(
                "data.min_len",
                format!("length range {}..={} is empty or starts at 0", self.min_len, self.max_len),
            ));
        }
        if self.max_len + 1 > model_max_len {
            return Err(Error::config(
                "data.max_len",
                format!("{} plus the BOS/EOS marker exceeds model.max_len {}", self.max_len, model_max_len),
            ));
        }
        for (key, n) in [
            ("data.train_pairs", self.train_pairs),
            ("data.valid_pairs", self.valid_pairs),
            ("data.test_pairs", self.test_pairs),
        ] {
            if n == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn generate(&self, split: Split, model_max_len: usize) -> Result<Corpus> {
        let n = match split {
            Split::Train => self.train_pairs,
            Split::Valid => self.valid_pairs,
            Split::Test => self.test_pairs,
        };
        generate(self.task, n, self.seed, (self.min_len, self.max_len), self.vocab, split, model_max_len)
    }
}

/// Seeded permutation of the payload ids; special tokens map to themselves.
pub fn bijection(vocab: usize, seed: u64) -> Vec<usize> {
    let mut payload: Vec<usize> = (FIRST_PAYLOAD..vocab).collect();
    payload.shuffle(&mut rng::stream(seed, "bijection"));
    (0..FIRST_PAYLOAD).chain(payload).collect()
}

/// Maps every token through `map`, then swaps each position `i ≡ 0 (mod 3)`
/// with its right neighbour when there is one.
pub fn toy_translate(src: &[usize], map: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = src.iter().map(|&t| map[t]).collect();
    for i in (0..out.len()).step_by(3) {
        if i + 1 < out.len() {
            out.swap(i, i + 1);
        }
    }
    out
}

pub fn target(task: Task, src: &[usize], map: &[usize]) -> Vec<usize> {
    match task {
        Task::Copy => src.to_vec(),
        Task::Reverse => src.iter().rev().copied().collect(),
        Task::Sort => {
            let mut t = src.to_vec();
            t.sort_unstable();
            t
        }
        Task::ToyTranslate => toy_translate(src, map),
    }
}

fn split_hash(src: &[usize], seed: u64) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    for &t in src {
        bytes.extend_from_slice(&(t as u32).to_le_bytes());
    }
    rng::fnv1a(&bytes)
}

/// Draws `n_pairs` distinct pairs for `split`.
///
/// Each source sequence belongs to exactly one split, decided by a hash of
/// the sequence and the seed, so the three splits are disjoint whatever their
/// sizes.
pub fn generate(
    task: Task,
    n_pairs: usize,
    seed: u64,
    len_range: (usize, usize),
    vocab: usize,
    split: Split,
    max_len: usize,
) -> Result<Corpus> {
    let (lo, hi) = len_range;
    if n_pairs == 0 {
        return Err(Error::Data("n_pairs must be at least 1".into()));
    }
    if lo == 0 || lo > hi {
        return Err(Error::Data(format!("empty length range {}..={}", lo, hi)));
    }
    if hi + 1 > max_len {
        return Err(Error::Data(format!(
            "length range up to {} exceeds max_len {} (one slot is kept for BOS/EOS)",
            hi, max_len
        )));
    }
    if vocab <= FIRST_PAYLOAD {
        return Err(Error::Data(format!("vocabulary {} has no payload tokens", vocab)));
    }
    let map = bijection(vocab, seed);
    let mut r = rng::stream_at(seed, "data", split.bucket());
    let mut seen = HashSet::with_capacity(n_pairs);
    let mut pairs = Vec::with_capacity(n_pairs);
    let budget = 1000 * n_pairs as u64 + 100_000;
    let mut attempts = 0u64;
    while pairs.len() < n_pairs {
        attempts += 1;
        if attempts > budget {
            return Err(Error::Data(format!(
                "could only draw {} distinct {} pairs of the {} requested",
                pairs.len(),
                split.name(),
                n_pairs
            )));
        }
        let len = r.gen_range(lo..=hi);
        let src: Vec<usize> = (0..len).map(|_| r.gen_range(FIRST_PAYLOAD..vocab)).collect();
        if Split::of_hash(split_hash(&src, seed)) != split || !seen.insert(src.clone()) {
            continue;
        }
        let tgt = target(task, &src, &map);
        pairs.push(Pair { src, tgt });
    }
    Ok(Corpus {
        task,
        split,
        vocab,
        pairs,
    })
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// One pair per line: `src<TAB>tgt`, ids space-separated.
    pub fn to_tsv(&self) -> String {
        let join = |s: &[usize]| s.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&join(&p.src));
            out.push('\t');
            out.push_str(&join(&p.tgt));
            out.push('\n');
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// Reads pairs written by [`Corpus::to_tsv`].
    pub fn read_tsv(path: &Path, task: Task, split: Split, vocab: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ids = |field: &str, line: usize| -> Result<Vec<usize>> {
            let seq = field
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("{}:{}: {}", path.display(), line, e)))?;
            if seq.is_empty() || seq.iter().any(|&t| t < FIRST_PAYLOAD || t >= vocab) {
                return Err(Error::Data(format!(
                    "{}:{}: sequence empty or ids outside {}..{}",
                    path.display(),
                    line,
                    FIRST_PAYLOAD,
                    vocab
                )));
            }
            Ok(seq)
        };
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (src, tgt) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("{}:{}: missing tab", path.display(), i + 1)))?;
            pairs.push(Pair {
                src: ids(src, i + 1)?,
                tgt: ids(tgt, i + 1)?,
            });
        }
        if pairs.is_empty() {
            return Err(Error::Data(format!("{} has no pairs", path.display())));
        }
        Ok(Self {
            task,
            split,
            vocab,
            pairs,
        })
    }
}

/// Teacher-forcing batch: decoder input is `BOS + tgt`, the expected output
/// `tgt + EOS`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub src: Padded,
    pub tgt_in: Padded,
    /// One entry per decoder position; `None` at padding.
    pub targets: Vec<Option<usize>>,
}

impl Batch {
    pub fn new(pairs: &[&Pair]) -> Self {
        let src: Vec<Vec<usize>> = pairs.iter().map(|p| p.src.clone()).collect();
        let tgt_in: Vec<Vec<usize>> = pairs
            .iter()
            .map(|p| std::iter::once(BOS).chain(p.tgt.iter().copied()).collect())
            .collect();
        let tgt_in = Padded::new(&tgt_in);
        let mut targets = vec![None; tgt_in.batch * tgt_in.seq];
        for (b, p) in pairs.iter().enumerate() {
            for (i, &t) in p.tgt.iter().chain(std::iter::once(&EOS)).enumerate() {
                targets[b * tgt_in.seq + i] = Some(t);
            }
        }
        Self {
            src: Padded::new(&src),
            tgt_in,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.src.batch
    }

    pub fn is_empty(&self) -> bool {
        self.src.batch == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_targets() {
        let id: Vec<usize> = (0..12).collect();
        assert_eq!(target(Task::Copy, &[5, 7, 2], &id), vec![5, 7, 2]);
        assert_eq!(target(Task::Reverse, &[5, 7, 2], &id), vec![2, 7, 5]);
        assert_eq!(target(Task::Sort, &[5, 7, 3], &id), vec![3, 5, 7]);
    }

    #[test]
    fn toy_translate_swap_rule_by_hand() {
        let id: Vec<usize> = (0..12).collect();
        let (a, b, c, d) = (3, 4, 5, 6);
        assert_eq!(toy_translate(&[a, b, c, d], &id), vec![b, a, c, d]);
        // positions 0 and 3 swap with their right neighbours; 6 has none
        assert_eq!(toy_translate(&[3, 4, 5, 6, 7, 8, 9], &id), vec![4, 3, 5, 7, 6, 8, 9]);
    }

    #[test]
    fn bijection_is_a_permutation_fixing_specials() {
        let m = bijection(32, 9);
        assert_eq!(&m[..3], &[0, 1, 2]);
        let mut sorted = m.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..32).collect::<Vec<_>>());
        assert_ne!(m, bijection(32, 10));
    }

    #[test]
    fn generation_is_deterministic_and_splits_disjoint() {
        let cfg = DataConfig {
            train_pairs: 300,
            valid_pairs: 50,
            test_pairs: 50,
            ..DataConfig::default()
        };
        let train = cfg.generate(Split::Train, 24).unwrap();
        assert_eq!(train, cfg.generate(Split::Train, 24).unwrap());
        let valid = cfg.generate(Split::Valid, 24).unwrap();
        let test = cfg.generate(Split::Test, 24).unwrap();
        let set = |c: &Corpus| c.pairs.iter().cloned().collect::<HashSet<_>>();
        assert_eq!(set(&train).len(), 300);
        assert!(set(&train).is_disjoint(&set(&valid)));
        assert!(set(&train).is_disjoint(&set(&test)));
        assert!(set(&valid).is_disjoint(&set(&test)));
        for p in &train.pairs {
            assert!((3..=9).contains(&p.src.len()));
        }
    }

    #[test]
    fn overlong_range_is_rejected() {
        assert!(generate(Task::Copy, 5, 1, (3, 30), 32, Split::Train, 24).is_err());
        assert!(generate(Task::Copy, 0, 1, (3, 5), 32, Split::Train, 24).is_err());
    }

    #[test]
    fn exhausted_space_errors_instead_of_looping() {
        // a single payload token of length 1 admits one sequence in total
        assert!(generate(Task::Copy, 5, 1, (1, 1), 4, Split::Train, 24).is_err());
    }

    #[test]
    fn tsv_roundtrip() {
        let cfg = DataConfig {
            valid_pairs: 20,
            ..DataConfig::default()
        };
        let c = cfg.generate(Split::Valid, 24).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("valid.tsv");
        c.write_tsv(&path).unwrap();
        assert!(c.to_tsv().lines().next().unwrap().contains('\t'));
        assert_eq!(Corpus::read_tsv(&path, c.task, Split::Valid, 32).unwrap(), c);
    }

    #[test]
    fn batch_layout() {
        let p = Pair {
            src: vec![3, 4],
            tgt: vec![5, 6, 7],
        };
        let q = Pair {
            src: vec![8],
            tgt: vec![9],
        };
        let b = Batch::new(&[&p, &q]);
        assert_eq!(b.tgt_in.ids, vec![BOS, 5, 6, 7, BOS, 9, PAD, PAD]);
        assert_eq!(
            b.targets,
            vec![Some(5), Some(6), Some(7), Some(EOS), Some(9), Some(EOS), None, None]
        );
    }
}
