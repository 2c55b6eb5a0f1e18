use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::optim::{inverse_sqrt_lr, Adam};
use crate::data::{Batch, Corpus, Split};
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::model::{bind, Checkpoint, Forward, InterpolationSpec, MaskSpec, Mode, Model, Params, TrainNoise};
use crate::numerics::{Graph, NumericsError, Tensor};
use crate::rng::{self, SeedBundle};

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_bleu: f64,
}

/// File layout of a training run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// An existing run; fails if the config snapshot is missing.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let run = Self::new(root);
        if !run.config_path().is_file() {
            return Err(Error::InvalidArgument(format!(
                "{} is not a run directory (no config.toml)",
                run.root.display()
            )));
        }
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn epoch_path(&self, epoch: usize) -> PathBuf {
        self.checkpoints_dir().join(format!("epoch-{:03}.cscp", epoch))
    }

    pub fn final_path(&self) -> PathBuf {
        self.root.join("final.cscp")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    /// Where analyzers write grids, curves and tables.
    pub fn analysis_dir(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config_path())
    }

    pub fn load_final(&self) -> Result<Checkpoint> {
        Checkpoint::load(&self.final_path())
    }

    /// Epoch checkpoints present on disk, by ascending epoch.
    pub fn epoch_checkpoints(&self) -> Result<Vec<(usize, PathBuf)>> {
        let dir = self.checkpoints_dir();
        if !dir.is_dir() {
            return Err(Error::MissingCheckpoint(dir));
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let epoch = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("epoch-"))
                .and_then(|n| n.strip_suffix(".cscp"))
                .and_then(|n| n.parse::<usize>().ok());
            if let Some(epoch) = epoch {
                out.push((epoch, path));
            }
        }
        out.sort();
        if out.is_empty() {
            return Err(Error::MissingCheckpoint(dir));
        }
        Ok(out)
    }

    pub fn metrics(&self) -> Result<Vec<MetricsRecord>> {
        let path = self.metrics_path();
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::InvalidArgument(format!("{}: {}", path.display(), e))))
            .collect()
    }

    fn append_metrics(&self, record: &MetricsRecord) -> Result<()> {
        let path = self.metrics_path();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let line = serde_json::to_string(record).expect("plain record serializes");
        writeln!(f, "{}", line).map_err(|e| Error::io(&path, e))
    }
}

/// Mean label-smoothed cross-entropy of a batch and, when `noise` is given,
/// training-mode gradients for every parameter reached by the loss.
pub fn loss_and_grads(
    model: &Model,
    batch: &Batch,
    smoothing: f64,
    noise: Option<TrainNoise>,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let trainable = noise.is_some();
    let bound = bind(&mut g, &model.config, &model.params, None, &InterpolationSpec::none(), trainable)?;
    let mode = match noise {
        Some(n) => Mode::Train(n),
        None => Mode::Eval,
    };
    let mask = MaskSpec::none();
    let mut fwd = Forward::new(&model.config, bound, &mask, mode)?;
    let logits = fwd.logits(&mut g, &batch.src, &batch.tgt_in)?;
    let loss = g.cross_entropy(logits, &batch.targets, smoothing)?;
    let value = g.value(loss).data()[0];
    let mut grads = BTreeMap::new();
    if trainable {
        let all = g.backward(loss)?;
        for (name, var) in fwd.bound().iter() {
            if let Some(t) = all.get(*var) {
                grads.insert(name.clone(), t.clone());
            }
        }
    }
    Ok((value, grads))
}

fn noise_at(seeds: &SeedBundle, step: u64) -> TrainNoise {
    TrainNoise {
        dropout: rng::stream_at(seeds.dropout, "dropout", step),
        layerdrop: rng::stream_at(seeds.layerdrop, "layerdrop", step),
    }
}

fn shuffled_batches(corpus: &Corpus, batch_size: usize, seed: u64, label: &str, index: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng::stream_at(seed, label, index));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn batch_of(corpus: &Corpus, idx: &[usize]) -> Batch {
    let pairs: Vec<_> = idx.iter().map(|&i| &corpus.pairs[i]).collect();
    Batch::new(&pairs)
}

/// Eval-mode mean batch loss over `corpus`.
pub fn mean_loss(model: &Model, corpus: &Corpus, batch_size: usize, smoothing: f64) -> Result<f64> {
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let mut total = 0.0;
    let chunks: Vec<&[usize]> = idx.chunks(batch_size).collect();
    for chunk in &chunks {
        total += loss_and_grads(model, &batch_of(corpus, chunk), smoothing, None)?.0;
    }
    Ok(total / chunks.len() as f64)
}

fn step_once(
    model: &mut Model,
    adam: &mut Adam,
    batch: &Batch,
    smoothing: f64,
    noise: TrainNoise,
    step: u64,
    lr: f64,
) -> Result<f64> {
    let (loss, grads) = loss_and_grads(model, batch, smoothing, Some(noise)).map_err(|e| match e {
        Error::Numerics(NumericsError::NonFinite { .. }) => Error::Divergence { step, loss: f64::NAN },
        other => other,
    })?;
    if !loss.is_finite() {
        return Err(Error::Divergence { step, loss });
    }
    adam.update(&mut model.params, &grads, lr);
    Ok(loss)
}

/// Result of a completed training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run: RunDir,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRecord>,
}

/// Trains from scratch into `out`, writing the config snapshot, one
/// checkpoint per epoch (epoch 0 is the initialization), `final.cscp` and
/// `metrics.jsonl`. `progress` sees every metrics record as it is written.
pub fn train(cfg: &RunConfig, out: &Path, progress: &mut dyn FnMut(&MetricsRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let run = RunDir::new(out);
    fs::create_dir_all(run.checkpoints_dir()).map_err(|e| Error::io(run.checkpoints_dir(), e))?;
    let snapshot = run.config_path();
    fs::write(&snapshot, cfg.to_toml()?).map_err(|e| Error::io(&snapshot, e))?;
    let metrics_path = run.metrics_path();
    fs::write(&metrics_path, "").map_err(|e| Error::io(&metrics_path, e))?;

    let train_set = cfg.data.generate(Split::Train, cfg.model.max_len)?;
    let valid_set = cfg.data.generate(Split::Valid, cfg.model.max_len)?;
    let tc = &cfg.train;
    let mut model = Model::new(cfg.model.clone(), tc.seeds.init)?;
    let mut adam = Adam::new(tc.beta1, tc.beta2, tc.adam_eps);
    let mut step = 0u64;
    let mut metrics = Vec::new();

    let mut record = |model: &Model, step: u64, epoch: usize, train_loss: f64| -> Result<Checkpoint> {
        let rec = MetricsRecord {
            step,
            epoch,
            train_loss,
            valid_bleu: evaluate(model, &valid_set, &MaskSpec::none(), &InterpolationSpec::none(), 1)?,
        };
        run.append_metrics(&rec)?;
        progress(&rec);
        metrics.push(rec);
        let ck = Checkpoint {
            model: model.clone(),
            seeds: tc.seeds,
            step,
            epoch,
        };
        ck.save(&run.epoch_path(epoch))?;
        Ok(ck)
    };

    let initial = mean_loss(&model, &train_set, tc.batch_size, tc.label_smoothing)?;
    let mut last = record(&model, 0, 0, initial)?;
    for epoch in 1..=tc.epochs {
        let mut total = 0.0;
        let batches = shuffled_batches(&train_set, tc.batch_size, tc.seeds.shuffle, "shuffle", epoch as u64);
        for idx in &batches {
            step += 1;
            let lr = inverse_sqrt_lr(step, cfg.model.d_model, tc.warmup, tc.lr_scale);
            let batch = batch_of(&train_set, idx);
            total += step_once(&mut model, &mut adam, &batch, tc.label_smoothing, noise_at(&tc.seeds, step), step, lr)?;
        }
        last = record(&model, step, epoch, total / batches.len() as f64)?;
    }
    last.save(&run.final_path())?;
    Ok(TrainOutcome {
        run,
        checkpoint: last,
        metrics,
    })
}

/// Continues training `start` for `extra_steps` with fresh Adam moments and
/// the constant fine-tuning rate. Batch order and noise depend only on the
/// seeds and the starting step, so two fine-tunes from checkpoints at the
/// same step see identical data.
pub fn finetune(start: &Checkpoint, cfg: &RunConfig, train_set: &Corpus, extra_steps: u64) -> Result<Checkpoint> {
    let tc = &cfg.train;
    let mut model = start.model.clone();
    let mut adam = Adam::new(tc.beta1, tc.beta2, tc.adam_eps);
    let lr = tc.finetune_rate(model.config.d_model);
    let mut done = 0u64;
    let mut pass = 0u64;
    while done < extra_steps {
        pass += 1;
        for idx in shuffled_batches(train_set, tc.batch_size, tc.seeds.shuffle, "finetune", pass) {
            if done == extra_steps {
                break;
            }
            done += 1;
            let step = start.step + done;
            let batch = batch_of(train_set, &idx);
            step_once(&mut model, &mut adam, &batch, tc.label_smoothing, noise_at(&tc.seeds, step), step, lr)?;
        }
    }
    Ok(Checkpoint {
        model,
        seeds: start.seeds,
        step: start.step + extra_steps,
        epoch: start.epoch,
    })
}

/// Fine-tunes the final checkpoint of `run` (optionally with its parameters
/// replaced) into `out`, writing `final.cscp` and a one-line metrics log.
pub fn finetune_run(
    run: &RunDir,
    extra_steps: u64,
    override_params: Option<Params>,
    out: &Path,
) -> Result<(Checkpoint, MetricsRecord)> {
    let cfg = run.config()?;
    let mut start = run.load_final()?;
    if let Some(p) = override_params {
        crate::model::check_shapes(&start.model.config, &p)?;
        start.model.params = p;
    }
    let train_set = cfg.data.generate(Split::Train, cfg.model.max_len)?;
    let valid_set = cfg.data.generate(Split::Valid, cfg.model.max_len)?;
    let ck = finetune(&start, &cfg, &train_set, extra_steps)?;
    let rec = MetricsRecord {
        step: ck.step,
        epoch: ck.epoch,
        train_loss: mean_loss(&ck.model, &train_set, cfg.train.batch_size, cfg.train.label_smoothing)?,
        valid_bleu: evaluate(&ck.model, &valid_set, &MaskSpec::none(), &InterpolationSpec::none(), 1)?,
    };
    let dir = RunDir::new(out);
    fs::create_dir_all(dir.root()).map_err(|e| Error::io(dir.root(), e))?;
    ck.save(&dir.final_path())?;
    let line = serde_json::to_string(&rec).expect("plain record serializes") + "\n";
    fs::write(dir.metrics_path(), line).map_err(|e| Error::io(dir.metrics_path(), e))?;
    Ok((ck, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataConfig;
    use crate::model::ModelConfig;
    use crate::training::TrainConfig;

    fn tiny() -> RunConfig {
        RunConfig {
            model: ModelConfig {
                d_model: 16,
                d_ff: 32,
                n_heads: 2,
                src_vocab: 12,
                tgt_vocab: 12,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 2,
                batch_size: 16,
                warmup: 20,
                ..TrainConfig::default()
            },
            data: DataConfig {
                task: crate::data::Task::Copy,
                train_pairs: 96,
                valid_pairs: 16,
                test_pairs: 16,
                vocab: 12,
                min_len: 2,
                max_len: 5,
                seed: 4,
            },
        }
    }

    #[test]
    fn training_writes_layout_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = train(&tiny(), &dir.path().join("a"), &mut |_| {}).unwrap();
        let b = train(&tiny(), &dir.path().join("b"), &mut |_| {}).unwrap();
        let bytes = |r: &RunDir| fs::read(r.final_path()).unwrap();
        assert_eq!(bytes(&a.run), bytes(&b.run));
        assert_eq!(a.run.epoch_checkpoints().unwrap().len(), 3);
        assert_eq!(a.run.metrics().unwrap(), a.metrics);
        assert_eq!(a.run.config().unwrap(), tiny());
        assert!(a.metrics[1].train_loss < a.metrics[0].train_loss);
        let init = a.checkpoint.model.init.clone().unwrap();
        for (_, path) in a.run.epoch_checkpoints().unwrap() {
            assert!(Checkpoint::load(&path).unwrap().model.init.unwrap().bit_eq(&init));
        }
    }

    #[test]
    fn finetune_consumes_exact_budget() {
        let dir = tempfile::tempdir().unwrap();
        let out = train(&tiny(), &dir.path().join("run"), &mut |_| {}).unwrap();
        let (ck, rec) = finetune_run(&out.run, 9, None, &dir.path().join("ft")).unwrap();
        assert_eq!(ck.step, out.checkpoint.step + 9);
        assert_eq!(rec.step, ck.step);
        assert!(!ck.model.params.bit_eq(&out.checkpoint.model.params));
    }

    #[test]
    fn missing_run_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(RunDir::open(dir.path()).is_err());
        let run = RunDir::new(dir.path());
        assert!(matches!(run.load_final(), Err(Error::MissingCheckpoint(_))));
    }
}
