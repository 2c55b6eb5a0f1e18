//! Experiment orchestration shared by the command-line front end: evaluation
//! set resolution, hyper-parameter sweeps and report rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Split};
use crate::error::{Error, Result};
use crate::importance::{contribution_scores, EvalContext, ImportanceGrid};
use crate::model::ComponentId;
use crate::rng::SeedBundle;
use crate::surgery::table;
use crate::training::{train, RunConfig, RunDir};

/// Contribution below which a component counts as unimportant in sweeps.
pub const UNIMPORTANT_BELOW: f64 = 0.1;

/// Where analyses draw their sentences from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalSet {
    Valid,
    Test,
    /// A file in the `src<TAB>tgt` format.
    File(PathBuf),
}

impl FromStr for EvalSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "valid" => EvalSet::Valid,
            "test" => EvalSet::Test,
            "" => return Err(Error::InvalidArgument("empty evaluation set".into())),
            path => EvalSet::File(PathBuf::from(path)),
        })
    }
}

impl fmt::Display for EvalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalSet::Valid => f.write_str("valid"),
            EvalSet::Test => f.write_str("test"),
            EvalSet::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl EvalSet {
    /// The sentences and the label recorded in artifacts.
    pub fn load(&self, cfg: &RunConfig) -> Result<(Corpus, String)> {
        let corpus = match self {
            EvalSet::Valid => cfg.data.generate(Split::Valid, cfg.model.max_len)?,
            EvalSet::Test => cfg.data.generate(Split::Test, cfg.model.max_len)?,
            EvalSet::File(p) => Corpus::read_tsv(p, cfg.data.task, Split::Test, cfg.data.vocab)?,
        };
        if corpus.is_empty() {
            return Err(Error::Data(format!("evaluation set `{}` is empty", self)));
        }
        Ok((corpus, self.to_string()))
    }
}

/// Hyper-parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Dropout,
    DataSize,
    Seed,
    Depth,
    Width,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dropout" => SweepParam::Dropout,
            "data-size" => SweepParam::DataSize,
            "seed" => SweepParam::Seed,
            "depth" => SweepParam::Depth,
            "width" => SweepParam::Width,
            _ => return Err(Error::InvalidArgument(format!("unknown sweep parameter `{}`", s))),
        })
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Dropout => "dropout",
            SweepParam::DataSize => "data-size",
            SweepParam::Seed => "seed",
            SweepParam::Depth => "depth",
            SweepParam::Width => "width",
        })
    }
}

impl SweepParam {
    /// `base` with this parameter set to `value`. Seeds change every training
    /// stream but keep the data; depth sets both stacks; width scales `d_ff`
    /// with `d_model`.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let bad = |e: &dyn fmt::Display| Error::config("sweep.values", format!("`{}`: {}", value, e));
        let int = || value.parse::<usize>().map_err(|e| bad(&e));
        match self {
            SweepParam::Dropout => cfg.model.dropout = value.parse::<f64>().map_err(|e| bad(&e))?,
            SweepParam::DataSize => cfg.data.train_pairs = int()?,
            SweepParam::Seed => cfg.train.seeds = SeedBundle::uniform(value.parse::<u64>().map_err(|e| bad(&e))?),
            SweepParam::Depth => {
                cfg.model.enc_layers = int()?;
                cfg.model.dec_layers = int()?;
            }
            SweepParam::Width => {
                let d = int()?;
                cfg.model.d_ff = d * base.model.d_ff / base.model.d_model;
                cfg.model.d_model = d;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default sweep points.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepParam::Dropout => &["0.0", "0.1", "0.3", "0.5"],
            SweepParam::DataSize => &["1000", "2000", "4000", "8000"],
            SweepParam::Seed => &["1", "66", "99"],
            SweepParam::Depth => &["1", "2", "3"],
            SweepParam::Width => &["16", "32", "64"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

/// One trained configuration of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub value: String,
    pub run: String,
    pub grid: ImportanceGrid,
}

impl SweepRun {
    pub fn unimportant(&self) -> usize {
        self.grid.scores.values().filter(|&&s| s < UNIMPORTANT_BELOW).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub param: SweepParam,
    pub runs: Vec<SweepRun>,
}

impl SweepReport {
    /// One row per run: baseline, counts, then every component's score.
    pub fn to_csv(&self) -> String {
        let ids: Vec<ComponentId> = self
            .runs
            .iter()
            .flat_map(|r| r.grid.scores.keys().copied())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut out = format!("{},run,baseline_bleu,unimportant,important", self.param);
        for id in &ids {
            out.push(',');
            out.push_str(&id.to_string());
        }
        out.push('\n');
        for r in &self.runs {
            let n = r.grid.scores.len();
            let u = r.unimportant();
            out.push_str(&format!(
                "{},{},{},{},{}",
                r.value,
                r.run,
                r.grid.baseline_bleu.unwrap_or(f64::NAN),
                u,
                n - u
            ));
            for id in &ids {
                out.push(',');
                if let Some(v) = r.grid.get(id) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| {
                vec![
                    r.value.clone(),
                    format!("{:.2}", r.grid.baseline_bleu.unwrap_or(f64::NAN)),
                    r.unimportant().to_string(),
                    (r.grid.scores.len() - r.unimportant()).to_string(),
                ]
            })
            .collect();
        table(&[&self.param.to_string(), "BLEU", "Unimportant", "Important"], &rows)
    }
}

/// Trains one run per value under `out/<param>-<value>`, scores each with
/// contribution on `eval_set`, and writes `sweep.csv`, `sweep.json` and
/// `sweep.txt` into `out`.
pub fn sweep(
    base: &RunConfig,
    param: SweepParam,
    values: &[String],
    eval_set: &EvalSet,
    jobs: usize,
    out: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::config("sweep.values", "no values given"));
    }
    let configs: Vec<(String, RunConfig)> = values
        .iter()
        .map(|v| Ok((v.clone(), param.apply(base, v)?)))
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for (value, cfg) in configs {
        let name = format!("{}-{}", param, value);
        progress(&name);
        let outcome = train(&cfg, &out.join(&name), &mut |_| {})?;
        let (corpus, label) = eval_set.load(&cfg)?;
        let ctx = EvalContext {
            jobs,
            ..EvalContext::new(&corpus, label)
        };
        let grid = contribution_scores(&outcome.checkpoint.model, "final.cscp", &ctx)?;
        grid.write_all(&outcome.run.analysis_dir(), "contribution")?;
        runs.push(SweepRun {
            value,
            run: name,
            grid,
        });
    }
    let report = SweepReport { param, runs };
    write_text(&out.join("sweep.csv"), &report.to_csv())?;
    write_text(&out.join("sweep.txt"), &report.to_table())?;
    write_text(&out.join("sweep.json"), &to_json(&report))?;
    Ok(report)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Grids found under a run's `analysis/` directory, keyed by path relative
/// to it.
pub fn collect_grids(run: &RunDir) -> Result<BTreeMap<String, ImportanceGrid>> {
    let root = run.analysis_dir();
    let mut found = BTreeMap::new();
    let mut stack = vec![root.clone()];
    while let Some(dir) = stack.pop() {
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        };
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "json") {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                if let Ok(grid) = ImportanceGrid::from_json(&text) {
                    let rel = path.strip_prefix(&root).unwrap_or(&path).with_extension("");
                    found.insert(rel.to_string_lossy().replace('\\', "/"), grid);
                }
            }
        }
    }
    Ok(found)
}

/// Re-renders every grid of `run` to CSV and SVG and writes a plain-text
/// summary to `analysis/report.txt`. Returns the summary.
pub fn render_report(run: &RunDir) -> Result<String> {
    let cfg = run.config()?;
    let grids = collect_grids(run)?;
    let root = run.analysis_dir();
    let mut summary = format!(
        "task: {}\nmodel: {}+{} layers, d_model {}, {} parameters\n",
        cfg.data.task,
        cfg.model.enc_layers,
        cfg.model.dec_layers,
        cfg.model.d_model,
        cfg.model.param_count()
    );
    if let Ok(metrics) = run.metrics() {
        if let Some(last) = metrics.last() {
            summary.push_str(&format!("final valid BLEU: {:.2} (epoch {})\n", last.valid_bleu, last.epoch));
        }
    }
    let families = ["E:SA", "E:FF", "D:SA", "D:EA", "D:FF"];
    let mut rows = Vec::new();
    for (name, grid) in &grids {
        let stem = Path::new(name);
        let dir = root.join(stem.parent().unwrap_or(Path::new("")));
        let file = stem.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        write_text(&dir.join(format!("{}.csv", file)), &grid.to_csv())?;
        write_text(&dir.join(format!("{}.svg", file)), &grid.to_svg())?;
        let mut row = vec![name.clone(), grid.metric.clone()];
        for f in families {
            row.push(grid.column_mean(f).map_or_else(String::new, |m| format!("{:.3}", m)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        summary.push_str("no analysis grids found\n");
    } else {
        summary.push_str("\ncolumn means\n");
        let mut header = vec!["grid", "metric"];
        header.extend(families);
        summary.push_str(&table(&header, &rows));
    }
    for name in ["prune.txt", "rewind.txt"] {
        if let Ok(text) = fs::read_to_string(root.join(name)) {
            summary.push_str(&format!("\n{}\n{}", name.trim_end_matches(".txt"), text));
        }
    }
    write_text(&root.join("report.txt"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_values_apply_to_the_right_keys() {
        let base = RunConfig::default();
        assert_eq!(SweepParam::Dropout.apply(&base, "0.3").unwrap().model.dropout, 0.3);
        assert_eq!(SweepParam::DataSize.apply(&base, "500").unwrap().data.train_pairs, 500);
        let s = SweepParam::Seed.apply(&base, "66").unwrap();
        assert_eq!(s.train.seeds, SeedBundle::uniform(66));
        assert_eq!(s.data, base.data);
        let d = SweepParam::Depth.apply(&base, "3").unwrap();
        assert_eq!((d.model.enc_layers, d.model.dec_layers), (3, 3));
        let w = SweepParam::Width.apply(&base, "64").unwrap();
        assert_eq!((w.model.d_model, w.model.d_ff), (64, 128));
    }

    #[test]
    fn bad_sweep_values_name_the_key() {
        let base = RunConfig::default();
        assert!(matches!(
            SweepParam::Dropout.apply(&base, "lots"),
            Err(Error::Config { key, .. }) if key == "sweep.values"
        ));
        assert!(matches!(
            SweepParam::Dropout.apply(&base, "1.5"),
            Err(Error::Config { key, .. }) if key == "model.dropout"
        ));
    }

    #[test]
    fn eval_set_parsing() {
        assert_eq!("valid".parse::<EvalSet>().unwrap(), EvalSet::Valid);
        assert_eq!("test".parse::<EvalSet>().unwrap(), EvalSet::Test);
        assert_eq!("x.tsv".parse::<EvalSet>().unwrap(), EvalSet::File("x.tsv".into()));
    }

    #[test]
    fn sweep_csv_counts_unimportant_components() {
        let scores = [(ComponentId::enc_sa(0), 0.05), (ComponentId::dec_ff(0), 1.0)];
        let grid = ImportanceGrid::new("contribution", scores.into_iter().collect(), Some(80.0), Default::default());
        let report = SweepReport {
            param: SweepParam::Dropout,
            runs: vec![SweepRun {
                value: "0.1".into(),
                run: "dropout-0.1".into(),
                grid,
            }],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "dropout,run,baseline_bleu,unimportant,important,E:SA/0,D:FF/0");
        assert_eq!(lines[1], "0.1,dropout-0.1,80,1,1,0.05,1");
    }
}
