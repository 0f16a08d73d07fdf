use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batched_statistic, naive_statistic, CausalityConfig};
use crate::error::{Error, Result};
use crate::npp::NppModel;
use crate::generators::uniform_sequences;
use crate::stats::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    /// The speedup does not depend on the step count, so a small one keeps
    /// the naive side affordable.
    pub ig_steps: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { lengths: vec![25, 50, 100, 150], batch_sizes: vec![1, 4, 16], ig_steps: 2, repetitions: 3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub length: usize,
    pub batch_size: usize,
    pub naive_seconds: f64,
    pub batched_seconds: f64,
    pub speedup: f64,
    pub naive_calls: usize,
    pub batched_calls: usize,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str =
        "length,batch_size,naive_seconds,batched_seconds,speedup,naive_calls,batched_calls";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{},{}",
            self.length,
            self.batch_size,
            self.naive_seconds,
            self.batched_seconds,
            self.speedup,
            self.naive_calls,
            self.batched_calls
        )
    }
}

/// Median wall time of the naive and batched statistic on `B` sequences of
/// length `n` at every grid point, on a single worker thread.
pub fn benchmark_speedup(model: &NppModel, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repetitions == 0 || cfg.ig_steps == 0 {
        return Err(Error::Config("repetitions and ig_steps must be positive".into()));
    }
    if cfg.lengths.contains(&0) || cfg.batch_sizes.contains(&0) {
        return Err(Error::Config("lengths and batch sizes must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &n in &cfg.lengths {
        for &b in &cfg.batch_sizes {
            let ds = uniform_sequences(model.num_types(), &vec![n; b], &mut rng)?;
            let ccfg = CausalityConfig { ig_steps: cfg.ig_steps, batch_size: b, include_survival: true };
            let mut naive = Vec::new();
            let mut batched = Vec::new();
            let (mut nc, mut bc) = (0, 0);
            for _ in 0..cfg.repetitions {
                let start = Instant::now();
                nc = pool.install(|| naive_statistic(model, &ds, &ccfg))?.calls;
                naive.push(start.elapsed().as_secs_f64());
                let start = Instant::now();
                bc = pool.install(|| batched_statistic(model, &ds, &ccfg))?.calls;
                batched.push(start.elapsed().as_secs_f64());
            }
            let (ns, bs) = (median(&naive), median(&batched));
            rows.push(BenchRow {
                length: n,
                batch_size: b,
                naive_seconds: ns,
                batched_seconds: bs,
                speedup: ns / bs,
                naive_calls: nc,
                batched_calls: bc,
            });
        }
    }
    Ok(rows)
}
