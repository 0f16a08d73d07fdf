//! Exact samplers for synthetic event data with known causal structure.
//!
//! * `excitation`: multivariate Hawkes process with exponential kernels,
//!   sampled by Ogata thinning.
//! * `inhibition`: multivariate self-correcting process, sampled by exact
//!   inversion of its closed-form compensator.
//! * `synergy`: proximal graphical event model with piecewise-constant
//!   intensities driven by recent parent activity.
//!
//! Each sequence draws from its own ChaCha stream keyed by the sequence
//! index, so output depends only on the seed and the config.

mod hawkes;
mod pgem;
mod self_correcting;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

pub use hawkes::{sample_hawkes, HawkesConfig, HawkesParams};
pub use pgem::{sample_pgem, PgemConfig};
pub use self_correcting::{sample_self_correcting, SelfCorrectingConfig};

use crate::error::{Error, Result};
use crate::seqdata::{Dataset, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    Excitation,
    Inhibition,
    Synergy,
}

impl FromStr for Process {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excitation" => Ok(Process::Excitation),
            "inhibition" => Ok(Process::Inhibition),
            "synergy" => Ok(Process::Synergy),
            _ => Err(Error::Config(format!("unknown process '{s}'"))),
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Process::Excitation => "excitation",
            Process::Inhibition => "inhibition",
            Process::Synergy => "synergy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// The published experiment sizes (S=1000, K=10).
    Full,
    /// Laptop-sized variant (S=200, K=5, about 100 events per sequence).
    Desk,
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            _ => Err(Error::Config(format!("unknown scale '{s}'"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Full => "full",
            Scale::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "lowercase")]
pub enum ProcessConfig {
    Excitation(HawkesConfig),
    Inhibition(SelfCorrectingConfig),
    Synergy(PgemConfig),
}

impl ProcessConfig {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Dataset, Matrix)> {
        match self {
            ProcessConfig::Excitation(c) => sample_hawkes(c, rng),
            ProcessConfig::Inhibition(c) => sample_self_correcting(c, rng),
            ProcessConfig::Synergy(c) => sample_pgem(c, rng),
        }
    }

    /// Log-likelihood of `seq` under the generating process; `None` for
    /// the synergy process.
    pub fn log_likelihood(&self, seq: &crate::seqdata::EventSequence) -> Option<f64> {
        match self {
            ProcessConfig::Excitation(c) => Some(c.params().log_likelihood(seq)),
            ProcessConfig::Inhibition(c) => Some(c.log_likelihood(seq)),
            ProcessConfig::Synergy(_) => None,
        }
    }

    pub fn num_types(&self) -> usize {
        match self {
            ProcessConfig::Excitation(c) => c.num_types,
            ProcessConfig::Inhibition(c) => c.num_types,
            ProcessConfig::Synergy(c) => c.num_types(),
        }
    }
}

/// Number of random off-diagonal entries in the sparse weight matrices: 16
/// at full scale (K=10); at desk scale the same density, 16/90 of the
/// off-diagonal cells, rounded.
fn off_diagonal_count(k: usize, scale: Scale) -> usize {
    match scale {
        Scale::Full if k == 10 => 16,
        _ => ((16.0 / 90.0) * (k * (k - 1)) as f64).round() as usize,
    }
}

/// Diagonal plus `m` distinct random off-diagonal cells.
fn sparse_support<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let off: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let picked = rand::seq::index::sample(rng, off.len(), m.min(off.len()));
    let mut cells: Vec<(usize, usize)> = (0..k).map(|i| (i, i)).collect();
    let mut chosen: Vec<(usize, usize)> = picked.into_iter().map(|i| off[i]).collect();
    chosen.sort_unstable();
    cells.extend(chosen);
    cells
}

/// Parameters of the three synthetic processes at the given scale.
/// Random parameters (baseline rates, weights, decays) come from `rng`.
pub fn default_config<R: Rng + ?Sized>(process: Process, scale: Scale, rng: &mut R) -> ProcessConfig {
    let (k, s, mean_len) = match scale {
        Scale::Full => (10, 1000, 250.0),
        Scale::Desk => (5, 200, 100.0),
    };
    match process {
        Process::Excitation => {
            let mu: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.01)).collect();
            let exp = Exp::new(0.05).expect("positive rate");
            let beta: Matrix = (0..k)
                .map(|_| (0..k).map(|_| exp.sample(rng)).collect())
                .collect();
            let mut alpha = vec![vec![0.0; k]; k];
            for (i, j) in sparse_support(k, off_diagonal_count(k, scale), rng) {
                alpha[i][j] = rng.random_range(0.0..1.0);
            }
            ProcessConfig::Excitation(HawkesConfig {
                num_types: k,
                num_sequences: s,
                mean_length: mean_len,
                mu,
                alpha,
                beta,
                target_spectral_radius: Some(0.8),
            })
        }
        Process::Inhibition => {
            let alpha_rate: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.05)).collect();
            let mut weights = vec![vec![0.0; k]; k];
            for (i, j) in sparse_support(k, off_diagonal_count(k, scale), rng) {
                weights[i][j] = rng.random_range(-0.5..0.0);
            }
            ProcessConfig::Inhibition(SelfCorrectingConfig {
                num_types: k,
                num_sequences: s,
                mean_length: mean_len,
                alpha_rate,
                weights,
            })
        }
        Process::Synergy => {
            let (motifs, horizon) = match scale {
                Scale::Full => (2, 1000.0),
                Scale::Desk => (1, 300.0),
            };
            ProcessConfig::Synergy(PgemConfig::synergy_motifs(motifs, s, horizon))
        }
    }
}

/// Structureless data: one sequence per entry of `lengths`, unit-rate
/// exponential gaps, uniform types, and a horizon one exponential gap past
/// the last event.
pub fn uniform_sequences<R: Rng + ?Sized>(num_types: usize, lengths: &[usize], rng: &mut R) -> Result<Dataset> {
    if num_types == 0 {
        return Err(Error::Config("num_types must be positive".into()));
    }
    let exp = Exp::new(1.0).expect("positive rate");
    let seqs = lengths
        .iter()
        .map(|&n| {
            let mut t = 0.0;
            let events = (0..n)
                .map(|_| {
                    t += exp.sample(rng);
                    crate::seqdata::Event::new(t, rng.random_range(0..num_types))
                })
                .collect();
            crate::seqdata::EventSequence::new(events, t + exp.sample(rng))
        })
        .collect();
    Dataset::new(seqs, num_types)
}

/// Stream-keyed rng for sequence `index`; `base` comes from the caller's rng.
pub(crate) fn sequence_rng(base: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(base);
    r.set_stream(index as u64);
    r
}

pub(crate) fn base_seed<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.next_u64()
}

/// Target event count `~ Poisson(mean)`, redrawn until positive so every
/// sequence has a well-defined horizon.
pub(crate) fn target_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<usize> {
    let p = Poisson::new(mean).map_err(|e| Error::Config(format!("mean length: {e}")))?;
    loop {
        let n: f64 = p.sample(rng);
        if n >= 1.0 {
            return Ok(n as usize);
        }
    }
}

pub(crate) fn check_matrix(name: &str, m: &Matrix, k: usize) -> Result<()> {
    if m.len() != k || m.iter().any(|r| r.len() != k) {
        return Err(Error::Config(format!("{name} must be {k}x{k}")));
    }
    Ok(())
}
