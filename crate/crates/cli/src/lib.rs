//! `eventgc` command line: generate, train, attribute, evaluate, bench,
//! axioms and the end-to-end pipeline.

mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use eventgc_core::attribution::{axiom_harness, Family, HarnessConfig, Method};
use eventgc_core::causality::{batched_statistic, benchmark_speedup, naive_statistic, BenchConfig, CausalityConfig};
use eventgc_core::eval::{holdout_nll, poisson_nll, EvalReport};
use eventgc_core::generators::{Process, ProcessConfig, Scale};
use eventgc_core::npp::{self, NppModel, TrainConfig};
use eventgc_core::seqdata::{load_matrix_csv, save_matrix_csv, Dataset};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use config::ConfigError;
use pipeline::{write_bench_csv, write_json, History, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "eventgc", version, about = "Granger causality between event types")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// JSON config file: top-level `seed`/`threads` plus one object per subcommand [default: none].
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset with its ground-truth causality matrix.
    Generate(GenerateArgs),
    /// Fit the neural point process.
    Train(TrainArgs),
    /// Compute the causality matrix Y from a trained model.
    Attribute(AttributeArgs),
    /// Score Y against the truth; optionally hold-out NLL.
    Evaluate(EvaluateArgs),
    /// Time the batched statistic against the per-interval one.
    Bench(BenchArgs),
    /// Check attribution axioms on random smooth targets.
    Axioms(AxiomsArgs),
    /// generate, train, attribute and evaluate in one run.
    Pipeline(PipelineArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Attribute(_) => "attribute",
            Command::Evaluate(_) => "evaluate",
            Command::Bench(_) => "bench",
            Command::Axioms(_) => "axioms",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct GenerateArgs {
    /// excitation | inhibition | synergy
    #[arg(long, default_value_t = Process::Excitation)]
    process: Process,
    /// desk | full
    #[arg(long, default_value_t = Scale::Desk)]
    scale: Scale,
    /// Overrides the scale's sequence count [default: from --scale].
    #[arg(long)]
    num_sequences: Option<usize>,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct TrainOpts {
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    /// Weight of the baseline-output penalty.
    #[arg(long, default_value_t = TrainConfig::default().eta)]
    eta: f64,
    #[arg(long, default_value_t = TrainConfig::default().valid_fraction)]
    valid_fraction: f64,
    #[arg(long, default_value_t = TrainConfig::default().embed_dim)]
    embed_dim: usize,
    #[arg(long, default_value_t = TrainConfig::default().hidden)]
    hidden: usize,
    /// Number of basis functions [default: from the gap percentiles].
    #[arg(long)]
    num_bases: Option<usize>,
    /// Largest basis mean [default: from the gap percentiles].
    #[arg(long)]
    basis_length: Option<f64>,
    /// Keep the epoch with the lowest validation objective.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    select_best: bool,
}

impl TrainOpts {
    fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            eta: self.eta,
            valid_fraction: self.valid_fraction,
            seed,
            select_best: self.select_best,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            num_bases: self.num_bases,
            basis_length: self.basis_length,
        }
    }
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct TrainArgs {
    #[arg(long, default_value = "data/dataset.jsonl")]
    data: PathBuf,
    /// Output directory for model.ckpt and history.json.
    #[arg(long, default_value = "model")]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    opts: TrainOpts,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct AttributeArgs {
    #[arg(long, default_value = "model/model.ckpt")]
    model: PathBuf,
    #[arg(long, default_value = "data/dataset.jsonl")]
    data: PathBuf,
    #[arg(long, default_value = "Y.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = CausalityConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = CausalityConfig::default().ig_steps)]
    ig_steps: usize,
    /// Include each sequence's trailing interval up to its horizon.
    #[arg(long, default_value_t = CausalityConfig::default().include_survival, action = clap::ArgAction::Set)]
    include_survival: bool,
    /// One attribution call per interval and effect type [default: off].
    #[arg(long, default_value_t = false)]
    naive: bool,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct EvaluateArgs {
    #[arg(long, default_value = "Y.csv")]
    estimate: PathBuf,
    #[arg(long, default_value = "data/ground_truth.csv")]
    truth: PathBuf,
    /// Checkpoint for the hold-out NLL; needs --data [default: none].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Hold-out sequences [default: none].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sequences for the homogeneous Poisson baseline fit; needs --data [default: none].
    #[arg(long)]
    fit_data: Option<PathBuf>,
    /// generator.json of the true process, for its NLL on --data [default: none].
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct BenchArgs {
    /// Checkpoint to time [default: a fresh model seeded by --seed].
    #[arg(long)]
    model: Option<PathBuf>,
    /// Event types of the fresh model.
    #[arg(long, default_value_t = 5)]
    num_types: usize,
    #[arg(long, value_delimiter = ',', default_values_t = BenchConfig::default().lengths)]
    lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = BenchConfig::default().batch_sizes)]
    batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = BenchConfig::default().ig_steps)]
    ig_steps: usize,
    #[arg(long, default_value_t = BenchConfig::default().repetitions)]
    repetitions: usize,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Ig,
    Shapley,
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct AxiomsArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Ig)]
    method: MethodArg,
    /// IG path steps.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = HarnessConfig::default().cases)]
    cases: usize,
    #[arg(long, default_value_t = HarnessConfig::default().max_dim)]
    max_dim: usize,
    #[arg(long, default_value_t = HarnessConfig::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = HarnessConfig::default().completeness_tol)]
    completeness_tol: f64,
    #[arg(long, value_delimiter = ',', default_values_t = Family::ALL.to_vec())]
    families: Vec<Family>,
    #[arg(long, default_value = "axioms.json")]
    out: PathBuf,
}

impl AxiomsArgs {
    fn to_config(&self, seed: u64) -> HarnessConfig {
        HarnessConfig {
            method: match self.method {
                MethodArg::Ig => Method::IntegratedGradients { steps: self.steps },
                MethodArg::Shapley => Method::Shapley,
            },
            cases: self.cases,
            max_dim: self.max_dim,
            seed,
            tol: self.tol,
            completeness_tol: self.completeness_tol,
            families: self.families.clone(),
        }
    }
}

#[derive(Args, Debug, Serialize, Deserialize)]
struct PipelineArgs {
    /// excitation | inhibition | synergy
    #[arg(long, default_value_t = Process::Excitation)]
    process: Process,
    /// desk | full
    #[arg(long, default_value_t = Scale::Desk)]
    scale: Scale,
    /// Overrides the scale's sequence count [default: from --scale].
    #[arg(long)]
    num_sequences: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Cross-validation folds; fold 0 is used.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[command(flatten)]
    #[serde(flatten)]
    train: TrainOpts,
    #[arg(long, default_value_t = CausalityConfig::default().ig_steps)]
    ig_steps: usize,
    /// Sequences per attribution call.
    #[arg(long, default_value_t = CausalityConfig::default().batch_size)]
    attr_batch_size: usize,
    #[arg(long, default_value_t = CausalityConfig::default().include_survival, action = clap::ArgAction::Set)]
    include_survival: bool,
    /// Axiom harness cases; 0 skips it.
    #[arg(long, default_value_t = 50)]
    axiom_cases: usize,
    /// Run the speedup check.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    bench: bool,
    /// Sequence lengths of the speedup check.
    #[arg(long, value_delimiter = ',', default_values_t = vec![25usize, 50])]
    bench_lengths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 4])]
    bench_batch_sizes: Vec<usize>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 on a configuration error, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = Cli::command().mut_subcommands(|s| s.allow_negative_numbers(true));
    let matches = match cmd.try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            exit_code(&e)
        }
    }
}

/// The error chain joined with ": ", skipping causes a message already quotes.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn exit_code(e: &anyhow::Error) -> i32 {
    let config = e.chain().any(|c| {
        c.downcast_ref::<ConfigError>().is_some()
            || matches!(c.downcast_ref::<eventgc_core::Error>(), Some(eventgc_core::Error::Config(_)))
    });
    if config {
        2
    } else {
        1
    }
}

/// Everything that shapes a run, after merging flags, file and defaults.
#[derive(Serialize)]
struct Resolved<'a, T> {
    command: &'a str,
    seed: u64,
    threads: usize,
    #[serde(flatten)]
    args: &'a T,
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    let cli = Cli::from_arg_matches(matches).map_err(|e| ConfigError(e.to_string()))?;
    let (sub_name, sub) = matches.subcommand().expect("subcommand is required");
    let mut file = match &cli.config {
        Some(p) => config::load_file(p)?,
        None => Map::new(),
    };
    let mut globals = Map::new();
    for key in ["seed", "threads"] {
        if let Some(v) = file.remove(key) {
            globals.insert(key.to_string(), v);
        }
    }
    let section = match file.remove(sub_name) {
        Some(Value::Object(m)) => Some(m),
        Some(_) => return Err(ConfigError(format!("config section '{sub_name}' must be an object")).into()),
        None => None,
    };
    if let Some(key) = file.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        return Err(ConfigError(format!("unknown config key '{key}'")).into());
    }

    let g = config::resolve(&Globals { seed: cli.seed, threads: cli.threads }, matches, Some(&globals), "top level")?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(g.threads).build().context("building thread pool")?;
    let section = section.as_ref();
    pool.install(|| match &cli.command {
        Command::Generate(a) => cmd_generate(&config::resolve(a, sub, section, sub_name)?, &g),
        Command::Train(a) => cmd_train(&config::resolve(a, sub, section, sub_name)?, &g),
        Command::Attribute(a) => cmd_attribute(&config::resolve(a, sub, section, sub_name)?, &g),
        Command::Evaluate(a) => cmd_evaluate(&config::resolve(a, sub, section, sub_name)?, &g),
        Command::Bench(a) => cmd_bench(&config::resolve(a, sub, section, sub_name)?, &g),
        Command::Axioms(a) => cmd_axioms(&config::resolve(a, sub, section, sub_name)?, &g),
        Command::Pipeline(a) => cmd_pipeline(&config::resolve(a, sub, section, sub_name)?, &g),
    })
    .with_context(|| cli.command.name())
}

#[derive(Serialize, Deserialize)]
struct Globals {
    seed: u64,
    threads: usize,
}

const SECTIONS: [&str; 7] = ["generate", "train", "attribute", "evaluate", "bench", "axioms", "pipeline"];

fn echo<T: Serialize>(dir: &Path, command: &str, g: &Globals, args: &T) -> Result<()> {
    let (seed, threads) = (g.seed, g.threads);
    std::fs::create_dir_all(dir)?;
    write_json(&Resolved { command, seed, threads, args }, &dir.join("config.resolved.json"))?;
    Ok(())
}

fn parent(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

fn cmd_generate(a: &GenerateArgs, g: &Globals) -> Result<()> {
    let seed = g.seed;
    let gen = pipeline::generate(a.process, a.scale, a.num_sequences, seed)?;
    std::fs::create_dir_all(&a.out)?;
    gen.dataset.save_jsonl(a.out.join("dataset.jsonl"))?;
    save_matrix_csv(&gen.truth, a.out.join("ground_truth.csv"))?;
    write_json(&gen.config, &a.out.join("generator.json"))?;
    echo(&a.out, "generate", g, a)
}

fn cmd_train(a: &TrainArgs, g: &Globals) -> Result<()> {
    let seed = g.seed;
    let ds = Dataset::load_jsonl(&a.data).with_context(|| a.data.display().to_string())?;
    let cfg = a.opts.to_config(seed);
    let trained = match npp::train(&ds, &cfg) {
        Ok(t) => t,
        Err(eventgc_core::Error::Diverged { epoch, msg, last_good }) => {
            std::fs::create_dir_all(&a.out)?;
            last_good.save(a.out.join("model.diverged.ckpt"))?;
            anyhow::bail!("training diverged at epoch {epoch}: {msg}; last good model saved as model.diverged.ckpt");
        }
        Err(e) => return Err(e.into()),
    };
    std::fs::create_dir_all(&a.out)?;
    trained.model.save(a.out.join("model.ckpt"))?;
    write_json(&History { selected_epoch: trained.selected_epoch, epochs: &trained.history }, &a.out.join("history.json"))?;
    echo(&a.out, "train", g, a)
}

fn cmd_attribute(a: &AttributeArgs, g: &Globals) -> Result<()> {
    let model = NppModel::load(&a.model).with_context(|| a.model.display().to_string())?;
    let ds = Dataset::load_jsonl(&a.data).with_context(|| a.data.display().to_string())?;
    let cfg = CausalityConfig { ig_steps: a.ig_steps, batch_size: a.batch_size, include_survival: a.include_survival };
    let y = if a.naive { naive_statistic(&model, &ds, &cfg)? } else { batched_statistic(&model, &ds, &cfg)? };
    let dir = parent(&a.out);
    std::fs::create_dir_all(dir)?;
    save_matrix_csv(&y.y, &a.out)?;
    write_json(&y, &a.out.with_extension("json"))?;
    echo(dir, "attribute", g, a)
}

fn cmd_evaluate(a: &EvaluateArgs, g: &Globals) -> Result<()> {
    let estimate = load_matrix_csv(&a.estimate).with_context(|| a.estimate.display().to_string())?;
    let truth = load_matrix_csv(&a.truth).with_context(|| a.truth.display().to_string())?;
    let mut report = EvalReport::score(&estimate, &truth)?;
    let needs_data = a.model.is_some() || a.fit_data.is_some() || a.generator.is_some();
    match &a.data {
        Some(path) => {
            let test = Dataset::load_jsonl(path).with_context(|| path.display().to_string())?;
            if let Some(m) = &a.model {
                let model = NppModel::load(m).with_context(|| m.display().to_string())?;
                report.holdout_nll_per_event = Some(holdout_nll(&model, &test)?);
            }
            if let Some(f) = &a.fit_data {
                let fit = Dataset::load_jsonl(f).with_context(|| f.display().to_string())?;
                report.poisson_nll_per_event = Some(poisson_nll(&fit, &test)?);
            }
            if let Some(p) = &a.generator {
                let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
                let gen: ProcessConfig = serde_json::from_str(&text).with_context(|| p.display().to_string())?;
                report.truth_nll_per_event = pipeline::truth_nll(&gen, &test);
            }
        }
        None if needs_data => return Err(ConfigError("--model, --fit-data and --generator need --data".into()).into()),
        None => {}
    }
    let (seed, threads) = (g.seed, g.threads);
    report.config = serde_json::to_value(Resolved { command: "evaluate", seed, threads, args: a })?;
    let dir = parent(&a.out);
    std::fs::create_dir_all(dir)?;
    write_json(&report, &a.out)?;
    echo(dir, "evaluate", g, a)
}

fn cmd_bench(a: &BenchArgs, g: &Globals) -> Result<()> {
    let seed = g.seed;
    let model = match &a.model {
        Some(p) => NppModel::load(p).with_context(|| p.display().to_string())?,
        None => pipeline::fresh_model(a.num_types, seed)?,
    };
    let cfg = BenchConfig {
        lengths: a.lengths.clone(),
        batch_sizes: a.batch_sizes.clone(),
        ig_steps: a.ig_steps,
        repetitions: a.repetitions,
        seed,
    };
    let rows = benchmark_speedup(&model, &cfg)?;
    let dir = parent(&a.out);
    std::fs::create_dir_all(dir)?;
    write_bench_csv(&rows, &a.out)?;
    echo(dir, "bench", g, a)
}

fn cmd_axioms(a: &AxiomsArgs, g: &Globals) -> Result<()> {
    let seed = g.seed;
    let report = axiom_harness(&a.to_config(seed))?;
    let dir = parent(&a.out);
    std::fs::create_dir_all(dir)?;
    write_json(&report, &a.out)?;
    for c in &report.checks {
        eprintln!("{:<26} {:>5} checked {:>4} violations  max error {:.3e}", c.axiom, c.evaluated, c.violations, c.max_error);
    }
    echo(dir, "axioms", g, a)
}

fn cmd_pipeline(a: &PipelineArgs, g: &Globals) -> Result<()> {
    let seed = g.seed;
    let cfg = PipelineConfig {
        process: a.process,
        scale: a.scale,
        num_sequences: a.num_sequences,
        seed,
        folds: a.folds,
        train: a.train.to_config(seed),
        causality: CausalityConfig { ig_steps: a.ig_steps, batch_size: a.attr_batch_size, include_survival: a.include_survival },
        axioms: (a.axiom_cases > 0).then(|| HarnessConfig { cases: a.axiom_cases, ..HarnessConfig::default() }),
        bench: a.bench.then(|| BenchConfig {
            lengths: a.bench_lengths.clone(),
            batch_sizes: a.bench_batch_sizes.clone(),
            repetitions: 1,
            ..BenchConfig::default()
        }),
    };
    let out = pipeline::run_pipeline(&cfg)?;
    pipeline::write_outputs(&out, &a.out)?;
    echo(&a.out, "pipeline", g, a)
}
