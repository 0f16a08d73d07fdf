//! Acceptance criteria 1-9. Prints one pass/fail line per criterion and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=2,5` runs a subset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use eventgc_cli::pipeline::{fresh_model, run_pipeline, PipelineConfig};
use eventgc_core::attribution::{axiom_harness, AxiomReport, HarnessConfig, Method};
use eventgc_core::causality::{batched_statistic, benchmark_speedup, naive_statistic, BenchConfig, CausalityConfig};
use eventgc_core::generators::{default_config, uniform_sequences, Process, ProcessConfig, Scale};
use eventgc_core::npp::{
    cumulative_intensity, intensity, objective, objective_grad, BasisFamily, ModelConfig, NppModel, StepInput,
    TrainConfig,
};
use eventgc_core::seqdata::{Batch, EventSequence, Matrix};
use eventgc_core::stats::{exp1_cdf, ks_test, median};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = (bool, String);

// Pinned tolerances.
const IG_TOL: f64 = 1e-8;
const IG_COMPLETENESS: f64 = 1e-4;
const IG_STEPS: usize = 200;
const SHAPLEY_TOL: f64 = 1e-10;
const AXIOM_CASES: usize = 200;
const AXIOM_MAX_DIM: usize = 16;
const AXIOM_SECONDS: f64 = 60.0;
const BATCH_REL: f64 = 1e-4;
const BATCH_SECONDS: f64 = 120.0;
const QUAD_REL: f64 = 1e-6;
const FD_REL: f64 = 1e-4;
const KS_P: f64 = 0.01;
const RADIUS: f64 = 0.8;
const RADIUS_TOL: f64 = 1e-9;
const AUC_MIN: [(Process, f64); 3] = [(Process::Excitation, 0.85), (Process::Inhibition, 0.80), (Process::Synergy, 0.85)];
const TAU_MIN: f64 = 0.3;
const DATASET_SECONDS: f64 = 30.0 * 60.0;
const TRUTH_NLL_SLACK: f64 = 0.15;
const SPEEDUP_MIN: f64 = 50.0;

fn crit1() -> Check {
    let start = Instant::now();
    let ig = axiom_harness(&HarnessConfig {
        method: Method::IntegratedGradients { steps: IG_STEPS },
        cases: AXIOM_CASES,
        max_dim: AXIOM_MAX_DIM,
        tol: IG_TOL,
        completeness_tol: IG_COMPLETENESS,
        ..HarnessConfig::default()
    })
    .expect("ig harness");
    let shapley = axiom_harness(&HarnessConfig {
        method: Method::Shapley,
        cases: AXIOM_CASES,
        max_dim: AXIOM_MAX_DIM,
        tol: SHAPLEY_TOL,
        completeness_tol: SHAPLEY_TOL,
        ..HarnessConfig::default()
    })
    .expect("shapley harness");
    let secs = start.elapsed().as_secs_f64();
    let worst = |r: &AxiomReport| {
        r.checks.iter().map(|c| format!("{}={:.1e}", c.axiom, c.max_error)).collect::<Vec<_>>().join(" ")
    };
    let pass = ig.passed() && shapley.passed() && secs < AXIOM_SECONDS;
    (
        pass,
        format!(
            "IG m={IG_STEPS}: {} violations [{}]; Shapley: {} violations [{}]; budget {AXIOM_SECONDS}s",
            ig.violations.len(),
            worst(&ig),
            shapley.violations.len(),
            worst(&shapley)
        ),
    )
}

fn livelier(k: usize, seed: u64) -> NppModel {
    let mc = ModelConfig { num_types: k, embed_dim: 6, hidden: 8 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = NppModel::init(mc, BasisFamily::new(4, 3.0).unwrap(), &mut rng).unwrap();
    for a in m.params.iter_mut() {
        for v in a.data_mut() {
            *v *= 3.0;
        }
    }
    m
}

fn max_rel(a: &Matrix, b: &Matrix) -> f64 {
    let scale = b.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().flatten().zip(b.iter().flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

fn crit2() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut calls_ok = true;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lengths: Vec<usize> = (0..8).map(|_| rng.random_range(1..=20)).collect();
        let ds = uniform_sequences(3, &lengths, &mut rng).unwrap();
        let model = livelier(3, seed + 100);
        for b in [16usize, 3] {
            let cfg = CausalityConfig { ig_steps: 50, batch_size: b, include_survival: true };
            let fast = batched_statistic(&model, &ds, &cfg).unwrap();
            let slow = naive_statistic(&model, &ds, &cfg).unwrap();
            worst = worst.max(max_rel(&fast.y, &slow.y));
            calls_ok &= fast.calls == ds.len().div_ceil(b) * 3;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst < BATCH_REL && calls_ok && secs < BATCH_SECONDS,
        format!("max relative error {worst:.2e}, calls = ceil(S/B)*K: {calls_ok}; budget {BATCH_SECONDS}s"),
    )
}

fn random_model(rng: &mut ChaCha8Rng) -> NppModel {
    let k = rng.random_range(1..=4);
    let cfg = ModelConfig { num_types: k, embed_dim: rng.random_range(2..=6), hidden: rng.random_range(2..=8) };
    let basis = BasisFamily::new(rng.random_range(1..=5), rng.random_range(1.0..20.0)).unwrap();
    NppModel::init(cfg, basis, rng).unwrap()
}

fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

fn crit3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = random_model(&mut rng);
        let h: Vec<f64> = (0..m.config.hidden).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dt = rng.random_range(0.05..2.0 * m.basis.length());
        let closed = cumulative_intensity(&m, &h, dt).unwrap();
        for (k, c) in closed.iter().enumerate() {
            let quad = trapezoid(|s| intensity(&m, &h, s).unwrap()[k], 0.0, dt, 10_000);
            worst = worst.max((c - quad).abs() / quad.abs());
        }
    }
    (worst < QUAD_REL, format!("100 models, worst relative error {worst:.2e}"))
}

fn crit4() -> Check {
    let seq = EventSequence::from_pairs(&[(0.4, 1), (1.3, 0), (1.7, 1)], 2.5);
    let batch = Batch::from_sequences(&[&seq], vec![0], 2);
    let input = StepInput::from_batch(&batch);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let (eta, h) = (1.0, 1e-4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let cfg = ModelConfig { num_types: 2, embed_dim: 3, hidden: 4 };
        let m = NppModel::init(cfg, BasisFamily::new(3, 2.0).unwrap(), &mut rng).unwrap();
        let (_, grads) = objective_grad(&m, &input, eta).unwrap();
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
        let theta = m.params.flatten();
        // the null-type embedding row is fixed at zero
        let null_row = 6..9;
        for (i, &g) in analytic.iter().enumerate().filter(|(i, _)| !null_row.contains(i)) {
            let at = |offset: f64| {
                let mut probe = m.clone();
                let mut t = theta.clone();
                t[i] += offset;
                probe.params.unflatten(&t);
                objective(&probe, &batch, eta).unwrap()
            };
            // five-point central difference
            let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            worst = worst.max((g - fd).abs() / fd.abs().max(g.abs()).max(1e-6));
        }
    }
    (worst < FD_REL, format!("20 parameter points, worst relative error {worst:.2e}"))
}

fn eig_radius(m: &Matrix) -> f64 {
    let n = m.len();
    let dm = DMatrix::from_fn(n, n, |i, j| m[i][j]);
    dm.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn crit5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let hawkes = match default_config(Process::Excitation, Scale::Desk, &mut rng) {
        ProcessConfig::Excitation(c) => c,
        _ => unreachable!(),
    };
    let (ds, _) = ProcessConfig::Excitation(hawkes.clone()).sample(&mut rng).unwrap();
    let params = hawkes.params();
    let res: Vec<f64> = ds.sequences.iter().flat_map(|s| params.residuals(s)).take(10_000).collect();
    let (_, p_hawkes) = ks_test(&res, exp1_cdf);
    let n_hawkes = res.len();

    let sc = match default_config(Process::Inhibition, Scale::Desk, &mut rng) {
        ProcessConfig::Inhibition(c) => c,
        _ => unreachable!(),
    };
    let (ds, _) = ProcessConfig::Inhibition(sc.clone()).sample(&mut rng).unwrap();
    let res: Vec<f64> = ds.sequences.iter().flat_map(|s| sc.residuals(s)).take(10_000).collect();
    let (_, p_sc) = ks_test(&res, exp1_cdf);
    let n_sc = res.len();

    let mut radius_err: f64 = 0.0;
    for seed in 0..5 {
        for scale in [Scale::Desk, Scale::Full] {
            if let ProcessConfig::Excitation(c) = default_config(Process::Excitation, scale, &mut ChaCha8Rng::seed_from_u64(seed)) {
                radius_err = radius_err.max((eig_radius(&c.scaled_alpha()) - RADIUS).abs());
            }
        }
    }
    let pass = p_hawkes > KS_P && p_sc > KS_P && n_hawkes == 10_000 && n_sc == 10_000 && radius_err < RADIUS_TOL;
    (
        pass,
        format!(
            "KS p Hawkes {p_hawkes:.3} (n={n_hawkes}), self-correcting {p_sc:.3} (n={n_sc}); |radius-0.8| <= {radius_err:.1e}"
        ),
    )
}

/// Training settings used for every desk run.
/// One setting for all three processes.
fn desk_train() -> TrainConfig {
    TrainConfig { learning_rate: 0.005, epochs: 60, ..TrainConfig::default() }
}

struct DeskRun {
    process: Process,
    seed: u64,
    auc: f64,
    tau: f64,
    nll: f64,
    poisson: f64,
    truth: Option<f64>,
    secs: f64,
}

fn desk_runs() -> Vec<DeskRun> {
    let mut runs = Vec::new();
    for (process, _) in AUC_MIN {
        for seed in 0..3u64 {
            let start = Instant::now();
            let cfg = PipelineConfig {
                process,
                scale: Scale::Desk,
                num_sequences: None,
                seed,
                folds: 5,
                train: desk_train(),
                causality: CausalityConfig::default(),
                axioms: None,
                bench: None,
            };
            let out = run_pipeline(&cfg).expect("pipeline");
            let r = &out.report;
            let run = DeskRun {
                process,
                seed,
                auc: r.auc.unwrap_or(f64::NAN),
                tau: r.kendall_tau.unwrap_or(f64::NAN),
                nll: r.holdout_nll_per_event.unwrap(),
                poisson: r.poisson_nll_per_event.unwrap(),
                truth: r.truth_nll_per_event,
                secs: start.elapsed().as_secs_f64(),
            };
            eprintln!(
                "  desk {} seed {}: auc {:.3} tau {:.3} nll {:.4} poisson {:.4} truth {} ({:.0}s)",
                run.process,
                run.seed,
                run.auc,
                run.tau,
                run.nll,
                run.poisson,
                run.truth.map_or("n/a".into(), |t| format!("{t:.4}")),
                run.secs
            );
            runs.push(run);
        }
    }
    runs
}

fn crit6(runs: &[DeskRun]) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for (process, auc_min) in AUC_MIN {
        let of: Vec<&DeskRun> = runs.iter().filter(|r| r.process == process).collect();
        let auc = median(&of.iter().map(|r| r.auc).collect::<Vec<_>>());
        let tau = median(&of.iter().map(|r| r.tau).collect::<Vec<_>>());
        let slowest = of.iter().map(|r| r.secs).fold(0.0, f64::max);
        let tau_ok = process == Process::Synergy || tau > TAU_MIN;
        pass &= auc >= auc_min && tau_ok && slowest < DATASET_SECONDS;
        parts.push(format!("{process} auc {auc:.3} (>= {auc_min}) tau {tau:.3} slowest {slowest:.0}s"));
    }
    (pass, format!("medians over seeds 0-2: {}", parts.join("; ")))
}

fn crit7(runs: &[DeskRun]) -> Check {
    let beats = runs.iter().filter(|r| r.nll <= r.poisson).count();
    let mut gaps = Vec::new();
    let mut parts = Vec::new();
    for r in runs.iter().filter(|r| r.process == Process::Excitation) {
        let truth = r.truth.expect("Hawkes likelihood");
        let gap = (r.nll - truth) / truth.abs();
        gaps.push(gap);
        parts.push(format!("s{} {:+.1}%", r.seed, 100.0 * gap));
    }
    // same aggregation as the recovery targets: median over seeds
    let gap = median(&gaps);
    (
        beats == runs.len() && gap <= TRUTH_NLL_SLACK,
        format!(
            "model <= Poisson on {beats}/{} runs; excitation vs truth median {:+.1}% (<= {}%) [{}]",
            runs.len(),
            100.0 * gap,
            100.0 * TRUTH_NLL_SLACK,
            parts.join(", ")
        ),
    )
}

fn crit8() -> Check {
    let model = fresh_model(5, 0).unwrap();
    let cfg = BenchConfig { lengths: vec![25, 100], batch_sizes: vec![1, 16], repetitions: 3, ..BenchConfig::default() };
    let rows = benchmark_speedup(&model, &cfg).unwrap();
    let at = |n: usize, b: usize| rows.iter().find(|r| r.length == n && r.batch_size == b).unwrap().speedup;
    let (big, small) = (at(100, 16), at(25, 1));
    (big >= SPEEDUP_MIN && big > small, format!("speedup {big:.1}x at n=100 B=16, {small:.1}x at n=25 B=1"))
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// bench.csv without its three timing columns.
fn untimed(csv: &[u8]) -> String {
    String::from_utf8_lossy(csv)
        .lines()
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            format!("{},{},{},{}", c[0], c[1], c[5], c[6])
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn session(dir: &Path) -> Result<(), String> {
    let steps: [&[&str]; 8] = [
        &["generate", "--num-sequences", "12", "--seed", "3", "--out", "data"],
        &["train", "--data", "data/dataset.jsonl", "--epochs", "2", "--embed-dim", "8", "--hidden", "8", "--out", "model"],
        &["attribute", "--model", "model/model.ckpt", "--data", "data/dataset.jsonl", "--ig-steps", "8", "--out", "attr/Y.csv"],
        &["attribute", "--model", "model/model.ckpt", "--data", "data/dataset.jsonl", "--ig-steps", "8", "--naive", "--out", "naive/Y.csv"],
        &[
            "evaluate", "--estimate", "attr/Y.csv", "--truth", "data/ground_truth.csv", "--model", "model/model.ckpt",
            "--data", "data/dataset.jsonl", "--fit-data", "data/dataset.jsonl", "--generator", "data/generator.json",
            "--out", "eval/report.json",
        ],
        &["bench", "--lengths", "5,10", "--batch-sizes", "1,2", "--repetitions", "1", "--out", "bench/bench.csv"],
        &["axioms", "--cases", "20", "--out", "axioms/axioms.json"],
        &[
            "pipeline", "--process", "synergy", "--num-sequences", "10", "--epochs", "2", "--embed-dim", "4", "--hidden",
            "4", "--ig-steps", "4", "--axiom-cases", "6", "--bench-lengths", "4", "--bench-batch-sizes", "1", "--out", "run",
        ],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_eventgc")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn crit9() -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        if let Err(e) = session(d.path()) {
            return (false, e);
        }
    }
    let (fa, fb) = (files(a.path()), files(b.path()));
    let mut differing = Vec::new();
    for (name, bytes) in &fa {
        let same = match fb.get(name) {
            Some(other) if name.file_name().is_some_and(|f| f == "bench.csv") => untimed(bytes) == untimed(other),
            Some(other) => bytes == other,
            None => false,
        };
        if !same {
            differing.push(name.display().to_string());
        }
    }
    let pass = differing.is_empty() && fa.len() == fb.len();
    (
        pass,
        format!("{} artifacts from 8 subcommand runs compared byte-for-byte (bench.csv timing columns excluded); differing: {:?}", fa.len(), differing),
    )
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let names = [
        "",
        "attribution axioms",
        "batched vs naive statistic",
        "closed-form compensator",
        "objective gradient",
        "generator fidelity",
        "desk causality recovery",
        "fit quality",
        "speedup",
        "determinism",
    ];
    let mut failed = 0;
    let mut report = |i: usize, start: Instant, (pass, detail): Check| {
        if !pass {
            failed += 1;
        }
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {i} [{verdict}] {}: {detail} ({:.1}s)", names[i], start.elapsed().as_secs_f64());
    };
    let simple: [(usize, fn() -> Check); 5] = [(1, crit1), (2, crit2), (3, crit3), (4, crit4), (5, crit5)];
    for (i, f) in simple {
        if wanted(i) {
            let t = Instant::now();
            report(i, t, f());
        }
    }
    if wanted(6) || wanted(7) {
        let t = Instant::now();
        let runs = desk_runs();
        if wanted(6) {
            report(6, t, crit6(&runs));
        }
        if wanted(7) {
            report(7, t, crit7(&runs));
        }
    }
    for (i, f) in [(8usize, crit8 as fn() -> Check), (9, crit9)] {
        if wanted(i) {
            let t = Instant::now();
            report(i, t, f());
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
