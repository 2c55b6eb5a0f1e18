//! Acceptance suite: one pass/fail line per criterion. Runs without the
//! libtest harness so the lines are visible in plain `cargo test` output.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use sublayer_core::data::{Batch, Corpus, DataConfig, Split, Task};
use sublayer_core::evaluation::{bleu, bleu_text, evaluate};
use sublayer_core::importance::{
    contribution_from_drops, contribution_scores, criticality_scores, first_under, isometry_check, learning_dynamics,
    pwcca, pwcca_similarity, spearman, uniform_alpha_grid, Dynamics, EvalContext, ImportanceGrid, IsometryAt,
    DEFAULT_ALPHA_POINTS,
};
use sublayer_core::model::{ComponentId, InterpolationSpec, MaskSpec, Model, ModelConfig};
use sublayer_core::numerics::svd;
use sublayer_core::report::{to_json, write_text};
use sublayer_core::rng::SeedBundle;
use sublayer_core::surgery::{
    group_ablation, prune_model, rewind_components, rewind_experiment, select_unimportant, Selection, Strategy,
};
use sublayer_core::training::{train, RunConfig, RunDir, TrainConfig};

/// Pinned regression bound: pruned-model BLEU may trail the standard model
/// by at most this much on the desk task.
const PRUNE_BOUND: f64 = 2.0;
const DESK_BUDGET_SECS: f64 = 600.0;
const WAIVER_SEEDS: [u64; 2] = [66, 99];

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Waived,
}

struct Suite {
    rows: Vec<(String, Status, String)>,
}

impl Suite {
    fn record(&mut self, id: &str, status: Status, detail: impl AsRef<str>) {
        let tag = match status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Waived => "WAIVED",
        };
        let line = format!("[{:<6}] {:<4} {}", tag, id, detail.as_ref());
        println!("{}", line);
        self.rows.push((id.to_string(), status, line));
    }

    fn check(&mut self, id: &str, pass: bool, detail: impl AsRef<str>) -> bool {
        self.record(id, if pass { Status::Pass } else { Status::Fail }, detail);
        pass
    }

    fn info(&self, detail: impl AsRef<str>) {
        println!("[info  ]      {}", detail.as_ref());
    }
}

fn gradients(s: &mut Suite) {
    let t = Instant::now();
    let mut worst_op = ("", 0.0f64);
    for seed in 0..10 {
        for (op, e) in common::all_op_errors(seed) {
            if e > worst_op.1 {
                worst_op = (op, e);
            }
        }
    }
    let model = (0..10).map(common::model_gradient_error).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    s.check(
        "1",
        worst_op.1 <= common::FD_TOL && model <= common::FD_TOL && secs < 60.0,
        format!(
            "gradient check, 10 seeds, h=1e-5: worst op {} {:.2e}, full model loss {:.2e} (tol 1e-4), {:.1} s",
            worst_op.0, worst_op.1, model, secs
        ),
    );
}

fn masking(s: &mut Suite) {
    let t = Instant::now();
    let config = ModelConfig::default();
    let mut ok = true;
    for seed in [1, 2] {
        let model = Model::new(config.clone(), seed).unwrap();
        let corpus = DataConfig::default().generate(Split::Valid, config.max_len).unwrap();
        let pairs: Vec<_> = corpus.pairs[..16].iter().collect();
        let batch = Batch::new(&pairs);
        for id in config.components() {
            let masked = model
                .logits(&batch.src, &batch.tgt_in, &MaskSpec::single(id), &InterpolationSpec::none())
                .unwrap();
            ok &= masked.bit_eq(&common::instrumented_logits(&model, &batch, id));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    s.check(
        "2",
        ok && secs < 60.0,
        format!("masked forward bit-identical to zeroed sub-layer output, 10 components x 2 models, {:.1} s", secs),
    );
}

fn formulas(s: &mut Suite) {
    let ids = [ComponentId::dec_ff(0), ComponentId::dec_ff(1), ComponentId::dec_sa(0)];
    let drops: BTreeMap<_, _> = ids.iter().copied().zip([5.0, 0.5, -0.2]).collect();
    let c = contribution_from_drops(30.0, &drops);
    let expect = [1.0, 0.5 / 3.0, 0.0];
    let err = ids.iter().zip(expect).map(|(id, e)| (c.scores[id] - e).abs()).fold(0.0, f64::max);

    let alphas = uniform_alpha_grid(DEFAULT_ALPHA_POINTS);
    // (BLEU drops along the grid, epsilon, first alpha with drop < epsilon)
    let tables: [(Vec<f64>, f64, f64); 5] = [
        (alphas.iter().map(|a| 10.0 * (1.0 - a)).collect(), 2.1, 0.8),
        (alphas.iter().map(|a| 10.0 * (1.0 - a)).collect(), 0.5, 1.0),
        (alphas.iter().map(|_| 0.0).collect(), 0.5, 0.0),
        (alphas.iter().enumerate().map(|(i, _)| if i == 6 || i == 20 { 0.0 } else { 3.0 }).collect(), 0.5, 0.3),
        (alphas.iter().enumerate().map(|(i, _)| if i < 20 { 0.5 } else { 0.0 }).collect(), 0.5, 1.0),
    ];
    let crit_ok = tables.iter().all(|(d, eps, want)| first_under(&alphas, d, *eps) == *want);
    s.check(
        "3",
        err <= 1e-12 && crit_ok,
        format!(
            "contribution triple (5, 0.5, -0.2) at baseline 30: max error {:.1e}; criticality tables exact: {}",
            err, crit_ok
        ),
    );
}

fn endpoints(s: &mut Suite, model: &Model, test: &Corpus) {
    let none = InterpolationSpec::none();
    let baseline = evaluate(model, test, &MaskSpec::none(), &none, 1).unwrap();
    let at_one = model
        .config
        .components()
        .into_iter()
        .all(|id| evaluate(model, test, &MaskSpec::none(), &InterpolationSpec::single(id, 1.0), 1).unwrap() == baseline);
    let pairs: Vec<_> = test.pairs[..32].iter().collect();
    let batch = Batch::new(&pairs);
    let ck = sublayer_core::Checkpoint {
        model: model.clone(),
        seeds: SeedBundle::default(),
        step: 0,
        epoch: 0,
    };
    let rewind_ok = model.config.components().into_iter().all(|id| {
        let rewound = rewind_components(&ck, &[id]).unwrap();
        let a = rewound.model.logits(&batch.src, &batch.tgt_in, &MaskSpec::none(), &none).unwrap();
        let b = model
            .logits(&batch.src, &batch.tgt_in, &MaskSpec::none(), &InterpolationSpec::single(id, 0.0))
            .unwrap();
        a.bit_eq(&b)
    });
    s.check(
        "4",
        at_one && rewind_ok,
        format!(
            "trained desk model: BLEU at alpha=1 equals baseline bit-exactly: {}; rewind({{c}}) logits equal alpha=0 logits bit-exactly: {}",
            at_one, rewind_ok
        ),
    );
}

fn bleu_checks(s: &mut Suite) {
    let b = bleu_text(&["a b c d"], &["a b c d e"]).unwrap();
    let x = vec![vec![3, 4, 5, 6, 7], vec![9, 9, 8]];
    let same = bleu(&x, &x).unwrap();
    s.check(
        "5",
        (b - 77.88).abs() <= 0.01 && same == 100.0,
        format!("brevity example {:.4} (want 77.88 +/- 0.01); bleu(X, X) = {}", b, same),
    );
}

fn pwcca_checks(s: &mut Suite) {
    let mut worst: f64 = 0.0;
    let mut out_of_range = 0;
    for seed in 0..20 {
        let x = common::random(&[80, 6], seed, "x");
        worst = worst.max((pwcca(&x, &x).unwrap() - 1.0).abs());
        let q = svd(&common::random(&[6, 6], seed, "q")).unwrap().u;
        let y = x.matmul(&q).unwrap();
        worst = worst.max((pwcca(&x, &y).unwrap() - 1.0).abs());
        let z = common::random(&[80, 4], seed, "z");
        let v = pwcca(&x, &z).unwrap();
        if !(0.0..=1.0 + 1e-9).contains(&v) {
            out_of_range += 1;
        }
    }
    s.check(
        "6",
        worst <= 1e-6 && out_of_range == 0,
        format!(
            "self and orthogonal-transform similarity within {:.1e} of 1 (tol 1e-6); {} of 20 random pairs outside [0, 1+1e-9]",
            worst, out_of_range
        ),
    );
}

fn jacobian_checks(s: &mut Suite) {
    let jac = (0..3).map(common::layerwise_jacobian_error).fold(0.0, f64::max);
    let mut recon: f64 = 0.0;
    for (seed, (r, c)) in [(1, (10, 10)), (2, (40, 16)), (3, (16, 40)), (4, (120, 64))] {
        let m = common::random(&[r, c], seed, "svd");
        recon = recon.max(svd(&m).unwrap().reconstruct().max_abs_diff(&m));
    }
    s.check(
        "7",
        jac <= common::FD_TOL && recon < 1e-8,
        format!("block Jacobians vs central differences {:.2e} (tol 1e-4); SVD reconstruction {:.2e} (tol 1e-8)", jac, recon),
    );
}

/// Scores behind criteria 8(b)-(d) for one trained run.
#[derive(Default, Clone)]
struct Shape {
    dsa: f64,
    dff: f64,
    rho: Option<f64>,
    early: Option<(usize, f64, f64)>,
}

impl Shape {
    fn b(&self) -> bool {
        self.dsa <= self.dff
    }
    fn c(&self) -> Option<bool> {
        self.rho.map(|r| r > 0.0)
    }
    fn d(&self) -> Option<bool> {
        self.early.map(|(_, early, zero)| early > zero)
    }
}

fn shape_of(contribution: &ImportanceGrid) -> Shape {
    Shape {
        dsa: contribution.column_mean("D:SA").unwrap(),
        dff: contribution.column_mean("D:FF").unwrap(),
        ..Shape::default()
    }
}

fn dynamics_shape(d: &Dynamics) -> (usize, f64, f64) {
    let e = d.early_epoch();
    (e, d.correlation_with_final(e).unwrap(), d.correlation_with_final(0).unwrap())
}

struct Desk {
    run: RunDir,
    model: Model,
    test: Corpus,
    contribution: ImportanceGrid,
}

fn desk(s: &mut Suite, root: &Path) -> Desk {
    let cfg = RunConfig::default();
    let t = Instant::now();
    let outcome = train(&cfg, &root.join("desk"), &mut |m| {
        println!(
            "[info  ]      desk epoch {:>2}: loss {:.4}, valid BLEU {:.2}",
            m.epoch, m.train_loss, m.valid_bleu
        )
    })
    .unwrap();
    let run = outcome.run.clone();
    let model = outcome.checkpoint.model.clone();
    let (test, label) = sublayer_core::EvalSet::Test.load(&cfg).unwrap();
    let ctx = EvalContext::new(&test, label);
    let contribution = contribution_scores(&model, "final.cscp", &ctx).unwrap();
    let criticality =
        criticality_scores(&model, "final.cscp", &ctx, &uniform_alpha_grid(DEFAULT_ALPHA_POINTS), None).unwrap();
    let dynamics = learning_dynamics(&run, &ctx).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let analysis = run.analysis_dir();
    contribution.write_all(&analysis, "contribution").unwrap();
    criticality.write_all(&analysis, "criticality").unwrap();
    dynamics.write_all(&analysis).unwrap();

    let valid = outcome.metrics.last().unwrap().valid_bleu;
    s.check(
        "8a",
        valid >= 85.0 && secs <= DESK_BUDGET_SECS,
        format!(
            "desk run (toy_translate, 4000 pairs, 2+2 layers, seed 1, {} epochs): valid BLEU {:.2} (need >= 85); train + contribution + criticality + dynamics {:.0} s (budget {:.0} s)",
            cfg.train.epochs, valid, secs, DESK_BUDGET_SECS
        ),
    );
    s.info(format!("contribution grid (test set, baseline {:.2}):", contribution.baseline_bleu.unwrap()));
    for line in contribution.to_csv().lines() {
        s.info(format!("  {}", line));
    }
    s.info("criticality grid:");
    for line in criticality.to_csv().lines() {
        s.info(format!("  {}", line));
    }

    let mut seed1 = shape_of(&contribution);
    seed1.rho = Some(spearman(&contribution.values(), &criticality.values()));
    seed1.early = Some(dynamics_shape(&dynamics));
    let mut shapes = vec![(1u64, seed1.clone())];

    let needs_waiver = !seed1.b() || seed1.c() == Some(false) || seed1.d() == Some(false);
    if needs_waiver {
        for seed in WAIVER_SEEDS {
            let mut cfg = RunConfig::default();
            cfg.train.seeds = SeedBundle::uniform(seed);
            s.info(format!("seed sweep: training seed {}", seed));
            let o = train(&cfg, &root.join(format!("seed-{}", seed)), &mut |_| {}).unwrap();
            let grid = contribution_scores(&o.checkpoint.model, "final.cscp", &ctx).unwrap();
            let mut sh = shape_of(&grid);
            if seed1.c() == Some(false) {
                let crit = criticality_scores(
                    &o.checkpoint.model,
                    "final.cscp",
                    &ctx,
                    &uniform_alpha_grid(DEFAULT_ALPHA_POINTS),
                    None,
                )
                .unwrap();
                sh.rho = Some(spearman(&grid.values(), &crit.values()));
            }
            if seed1.d() == Some(false) {
                sh.early = Some(dynamics_shape(&learning_dynamics(&o.run, &ctx).unwrap()));
            }
            shapes.push((seed, sh));
        }
        let mut report = String::from("seed,D:SA mean,D:FF mean,8b,spearman,8c,early epoch,rho early,rho epoch0,8d\n");
        for (seed, sh) in &shapes {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{:.4}", x));
            let flag = |v: Option<bool>| v.map_or(String::new(), |x| x.to_string());
            report.push_str(&format!(
                "{},{:.4},{:.4},{},{},{},{},{},{},{}\n",
                seed,
                sh.dsa,
                sh.dff,
                sh.b(),
                opt(sh.rho),
                flag(sh.c()),
                sh.early.map_or(String::new(), |e| e.0.to_string()),
                opt(sh.early.map(|e| e.1)),
                opt(sh.early.map(|e| e.2)),
                flag(sh.d())
            ));
        }
        let path = root.join("seed-sweep.csv");
        write_text(&path, &report).unwrap();
        s.info(format!("seed-sweep report written to {}", path.display()));
        for line in report.lines() {
            s.info(format!("  {}", line));
        }
    }

    let majority = |f: &dyn Fn(&Shape) -> Option<bool>| -> (usize, usize) {
        let votes: Vec<bool> = shapes.iter().filter_map(|(_, sh)| f(sh)).collect();
        (votes.iter().filter(|v| **v).count(), votes.len())
    };
    let mut sub = |id: &str, own: bool, f: &dyn Fn(&Shape) -> Option<bool>, detail: String| {
        if own {
            s.record(id, Status::Pass, detail);
        } else {
            let (yes, n) = majority(f);
            let status = if n == 3 && 2 * yes > n { Status::Waived } else { Status::Fail };
            s.record(
                id,
                status,
                format!("{}; seed sweep {{1, 66, 99}}: direction holds in {} of {} seeds", detail, yes, n),
            );
        }
    };
    sub(
        "8b",
        seed1.b(),
        &|sh| Some(sh.b()),
        format!("seed 1: mean contribution D:SA {:.3} <= D:FF {:.3}: {}", seed1.dsa, seed1.dff, seed1.b()),
    );
    sub(
        "8c",
        seed1.c().unwrap(),
        &|sh| sh.c(),
        format!("seed 1: Spearman(contribution, criticality) = {:.3} > 0", seed1.rho.unwrap()),
    );
    let (e, early, zero) = seed1.early.unwrap();
    sub(
        "8d",
        seed1.d().unwrap(),
        &|sh| sh.d(),
        format!("seed 1: Spearman with final grid at epoch {} = {:.3} vs epoch 0 = {:.3}", e, early, zero),
    );

    Desk {
        run,
        model,
        test,
        contribution,
    }
}

fn small_config() -> RunConfig {
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
            epochs: 4,
            batch_size: 16,
            warmup: 40,
            ..TrainConfig::default()
        },
        data: DataConfig {
            task: Task::Reverse,
            train_pairs: 320,
            valid_pairs: 40,
            test_pairs: 40,
            vocab: 12,
            min_len: 3,
            max_len: 7,
            seed: 3,
        },
    }
}

/// Every analysis artifact of one pipeline run, written under `dir`.
fn pipeline(dir: &Path) {
    let cfg = small_config();
    let outcome = train(&cfg, dir, &mut |_| {}).unwrap();
    let run = &outcome.run;
    let model = &outcome.checkpoint.model;
    let (test, label) = sublayer_core::EvalSet::Test.load(&cfg).unwrap();
    let ctx = EvalContext::new(&test, label);
    let out = run.analysis_dir();
    contribution_scores(model, "final.cscp", &ctx).unwrap().write_all(&out, "contribution").unwrap();
    criticality_scores(model, "final.cscp", &ctx, &uniform_alpha_grid(11), None)
        .unwrap()
        .write_all(&out, "criticality")
        .unwrap();
    pwcca_similarity(model, "final.cscp", &ctx, 40).unwrap().write_all(&out, "pwcca").unwrap();
    isometry_check(model, "final.cscp", &ctx, IsometryAt::Final, 8)
        .unwrap()
        .write_all(&out, "isometry-final")
        .unwrap();
    learning_dynamics(run, &ctx).unwrap().write_all(&out).unwrap();
    for strategy in [Strategy::Greedy, Strategy::Static] {
        let curve = group_ablation(model, &ctx, 4, strategy).unwrap();
        write_text(&out.join(format!("ablation-{}.csv", strategy)), &curve.to_csv()).unwrap();
        write_text(&out.join(format!("ablation-{}.json", strategy)), &to_json(&curve)).unwrap();
    }
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(s: &mut Suite, root: &Path) {
    let (a, b) = (root.join("det-a"), root.join("det-b"));
    pipeline(&a);
    pipeline(&b);
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<String> = fa
        .iter()
        .filter(|(p, bytes)| fb.get(*p) != Some(bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    let same_set = fa.keys().eq(fb.keys());
    s.check(
        "9",
        same_set && differing.is_empty() && !fa.is_empty(),
        format!(
            "two pipeline runs (train, contribution, criticality, pwcca, isometry, dynamics, group ablation): {} files, {} differ{}",
            fa.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    );
}

fn surgery(s: &mut Suite, d: &Desk) {
    let ctx = EvalContext::new(&d.test, "test");
    let ids = select_unimportant(&d.contribution, 0.2).unwrap();
    let names: Vec<String> = ids.iter().map(ToString::to_string).collect();
    let analysis = d.run.analysis_dir();
    let prune = prune_model(&d.run, &ids, &ctx, &analysis.join("prune")).unwrap();
    write_text(&analysis.join("prune.txt"), &prune.to_table()).unwrap();
    let standard = prune.arm("standard").unwrap();
    let pruned = prune.arm("pruned").unwrap();
    for line in prune.to_table().lines() {
        s.info(format!("  {}", line));
    }
    let extra = d.run.load_final().unwrap().step / 5;
    let rewind = rewind_experiment(&d.run, 0.2, extra, Selection::Contribution, &ctx, &analysis.join("rewind")).unwrap();
    write_text(&analysis.join("rewind.txt"), &rewind.to_table()).unwrap();
    for line in rewind.to_table().lines() {
        s.info(format!("  {}", line));
    }
    s.info(format!(
        "rewind arm before fine-tuning: {:.2} (standard {:.2}; expected not above standard: {})",
        rewind.rewind_step0,
        rewind.standard,
        rewind.rewind_step0 <= rewind.standard
    ));
    let greedy = group_ablation(&d.model, &ctx, 5, Strategy::Greedy).unwrap();
    let fixed = group_ablation(&d.model, &ctx, 5, Strategy::Static).unwrap();
    let violations = greedy.bleu.iter().zip(&fixed.bleu).filter(|(g, f)| g < f).count();
    s.info(format!(
        "group ablation k=0..5 greedy {:?} vs static {:?}; greedy below static at {} points (soft check)",
        greedy.bleu.iter().map(|b| format!("{:.1}", b)).collect::<Vec<_>>(),
        fixed.bleu.iter().map(|b| format!("{:.1}", b)).collect::<Vec<_>>(),
        violations
    ));

    let gap = standard.bleu.unwrap() - pruned.bleu.unwrap_or(f64::NEG_INFINITY);
    let budgets = rewind.continue_steps == extra && rewind.rewind_steps == extra;
    s.check(
        "10",
        pruned.params < standard.params && gap <= PRUNE_BOUND && budgets,
        format!(
            "prune {}: {} -> {} params, BLEU {:.2} -> {:.2} (gap {:.2}, bound {:.1}); rewind and continue arms both took {} / {} steps",
            names.join(" "),
            standard.params,
            pruned.params,
            standard.bleu.unwrap(),
            pruned.bleu.unwrap_or(f64::NAN),
            gap,
            PRUNE_BOUND,
            rewind.rewind_steps,
            rewind.continue_steps
        ),
    );
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();
    let started = Instant::now();
    let mut s = Suite { rows: Vec::new() };
    println!("acceptance criteria (artifacts under {})", root.display());
    gradients(&mut s);
    masking(&mut s);
    formulas(&mut s);
    bleu_checks(&mut s);
    pwcca_checks(&mut s);
    jacobian_checks(&mut s);
    let d = desk(&mut s, &root);
    endpoints(&mut s, &d.model, &d.test);
    determinism(&mut s, &root);
    surgery(&mut s, &d);

    let mut rows: Vec<_> = s.rows.iter().collect();
    rows.sort_by_key(|(id, _, _)| {
        let digits: String = id.chars().take_while(char::is_ascii_digit).collect();
        (digits.parse::<u32>().unwrap_or(0), id.clone())
    });
    println!("\nsummary:");
    for (_, _, line) in &rows {
        println!("{}", line);
    }
    let failed: Vec<&str> = rows.iter().filter(|(_, st, _)| *st == Status::Fail).map(|(id, _, _)| id.as_str()).collect();
    let waived = rows.iter().filter(|(_, st, _)| *st == Status::Waived).count();
    println!(
        "acceptance: {} checks, {} failed, {} waived, {:.0} s",
        s.rows.len(),
        failed.len(),
        waived,
        started.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
