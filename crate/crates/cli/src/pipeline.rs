//! Generate, train, attribute and evaluate on one synthetic config.

use std::path::Path;

use eventgc_core::attribution::{axiom_harness, AxiomReport, HarnessConfig};
use eventgc_core::causality::{batched_statistic, benchmark_speedup, BenchConfig, BenchRow, CausalityConfig, CausalityMatrix};
use eventgc_core::eval::{holdout_nll, poisson_nll, EvalReport};
use eventgc_core::generators::{default_config, uniform_sequences, Process, ProcessConfig, Scale};
use eventgc_core::npp::{BasisFamily, ModelConfig, NppModel, TrainConfig, Trained};
use eventgc_core::seqdata::{kfold_split, save_matrix_csv, Dataset, Matrix};
use eventgc_core::{npp, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator parameters, samples and the true causality matrix.
pub struct Generated {
    pub config: ProcessConfig,
    pub dataset: Dataset,
    pub truth: Matrix,
}

/// Draws the process parameters and the sequences from `seed`.
pub fn generate(process: Process, scale: Scale, num_sequences: Option<usize>, seed: u64) -> Result<Generated> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = default_config(process, scale, &mut rng);
    if let Some(n) = num_sequences {
        match &mut config {
            ProcessConfig::Excitation(c) => c.num_sequences = n,
            ProcessConfig::Inhibition(c) => c.num_sequences = n,
            ProcessConfig::Synergy(c) => c.num_sequences = n,
        }
    }
    let (dataset, truth) = config.sample(&mut rng)?;
    Ok(Generated { config, dataset, truth })
}

/// Per-event NLL of `test` under the generating process.
pub fn truth_nll(config: &ProcessConfig, test: &Dataset) -> Option<f64> {
    let events = test.num_events();
    if events == 0 {
        return None;
    }
    let mut total = 0.0;
    for s in &test.sequences {
        total -= config.log_likelihood(s)?;
    }
    Some(total / events as f64)
}

/// Model timed when no checkpoint is given: random weights, basis sized
/// for unit-rate gaps.
pub fn fresh_model(num_types: usize, seed: u64) -> Result<NppModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let sample = uniform_sequences(num_types, &[1000], &mut rng)?;
    let gaps: Vec<f64> = sample.sequences[0].gaps().collect();
    let basis = BasisFamily::from_gaps(&gaps)?;
    let cfg = TrainConfig::default();
    let mc = ModelConfig { num_types, embed_dim: cfg.embed_dim, hidden: cfg.hidden };
    NppModel::init(mc, basis, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub process: Process,
    pub scale: Scale,
    pub num_sequences: Option<usize>,
    pub seed: u64,
    pub folds: usize,
    pub train: TrainConfig,
    pub causality: CausalityConfig,
    pub axioms: Option<HarnessConfig>,
    pub bench: Option<BenchConfig>,
}

pub struct PipelineOutput {
    pub generated: Generated,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub trained: Trained,
    pub statistic: CausalityMatrix,
    pub report: EvalReport,
    pub axioms: Option<AxiomReport>,
    pub bench: Option<Vec<BenchRow>>,
}

/// Fold 0 of a `folds`-way split: the model and `Y` use the training part,
/// the NLLs the held-out part.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let generated = generate(cfg.process, cfg.scale, cfg.num_sequences, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let (train_idx, test_idx) = kfold_split(generated.dataset.len(), cfg.folds, &mut rng)?.swap_remove(0);
    let train_set = generated.dataset.subset(&train_idx);
    let test_set = generated.dataset.subset(&test_idx);

    let train_cfg = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    let trained = npp::train(&train_set, &train_cfg)?;
    let statistic = batched_statistic(&trained.model, &train_set, &cfg.causality)?;

    let mut report = EvalReport::score(&statistic.y, &generated.truth)?;
    report.holdout_nll_per_event = Some(holdout_nll(&trained.model, &test_set)?);
    report.poisson_nll_per_event = Some(poisson_nll(&train_set, &test_set)?);
    report.truth_nll_per_event = truth_nll(&generated.config, &test_set);
    report.config = serde_json::to_value(cfg)?;

    let axioms = match &cfg.axioms {
        Some(h) => Some(axiom_harness(&HarnessConfig { seed: cfg.seed, ..h.clone() })?),
        None => None,
    };
    let bench = match &cfg.bench {
        Some(b) => Some(benchmark_speedup(&trained.model, &BenchConfig { seed: cfg.seed, ..b.clone() })?),
        None => None,
    };
    Ok(PipelineOutput { generated, train_idx, test_idx, trained, statistic, report, axioms, bench })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut text = String::from(BenchRow::CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
pub struct History<'a> {
    pub selected_epoch: usize,
    pub epochs: &'a [npp::EpochStats],
}

#[derive(Serialize)]
pub struct Split<'a> {
    pub train: &'a [usize],
    pub test: &'a [usize],
}

/// Writes every pipeline artifact into `dir`.
pub fn write_outputs(out: &PipelineOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    out.generated.dataset.save_jsonl(dir.join("dataset.jsonl"))?;
    save_matrix_csv(&out.generated.truth, dir.join("ground_truth.csv"))?;
    write_json(&out.generated.config, &dir.join("generator.json"))?;
    write_json(&Split { train: &out.train_idx, test: &out.test_idx }, &dir.join("split.json"))?;
    out.trained.model.save(dir.join("model.ckpt"))?;
    write_json(&History { selected_epoch: out.trained.selected_epoch, epochs: &out.trained.history }, &dir.join("history.json"))?;
    save_matrix_csv(&out.statistic.y, dir.join("Y.csv"))?;
    write_json(&out.statistic, &dir.join("Y.json"))?;
    write_json(&out.report, &dir.join("report.json"))?;
    if let Some(a) = &out.axioms {
        write_json(a, &dir.join("axioms.json"))?;
    }
    if let Some(b) = &out.bench {
        write_bench_csv(b, &dir.join("bench.csv"))?;
    }
    Ok(())
}
