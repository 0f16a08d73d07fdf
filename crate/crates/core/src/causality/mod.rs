//! The causality matrix `Y`: attributions of each effect type's cumulative
//! intensity to the types of past events, summed per (effect, cause) and
//! divided by the number of events of the cause type.
//!
//! [`batched_statistic`] makes one attribution call per effect type and
//! mini-batch by attributing the sum of all interval targets in the batch.
//! [`naive_statistic`] makes one call per interval and effect type and is
//! kept as the reference.

mod bench;

use std::sync::atomic::{AtomicUsize, Ordering};

use eventgc_autodiff::{Tape, Var};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{integrated_gradients, Target};
use crate::error::{Error, Result};
use crate::npp::{unroll, NppModel, ParamVars, StepInput};
use crate::seqdata::{sequential_batches, Batch, Dataset, EventSequence, Matrix};

pub use bench::{benchmark_speedup, BenchConfig, BenchRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalityConfig {
    pub ig_steps: usize,
    pub batch_size: usize,
    /// Include the trailing interval `(t_n, T]` of every sequence.
    pub include_survival: bool,
}

impl Default for CausalityConfig {
    fn default() -> Self {
        CausalityConfig { ig_steps: 50, batch_size: 16, include_survival: true }
    }
}

impl CausalityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::Config("ig_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `y[k][k']` is the influence of cause `k'` on effect `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityMatrix {
    pub y: Matrix,
    /// Events of each type in the dataset; the column divisors of `y`.
    pub counts: Vec<usize>,
    /// Attribution calls made.
    pub calls: usize,
}

impl CausalityMatrix {
    fn from_sums(sums: Matrix, counts: Vec<usize>, calls: usize) -> Result<Self> {
        let y: Matrix = sums
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .zip(&counts)
                    .map(|(v, &c)| if c == 0 { 0.0 } else { v / c as f64 })
                    .collect()
            })
            .collect();
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("causality statistic".into()));
        }
        Ok(CausalityMatrix { y, counts, calls })
    }

    pub fn num_types(&self) -> usize {
        self.y.len()
    }
}

/// The null-type baseline: same timestamps and mask, every type indicator zero.
pub fn make_baseline(input: &StepInput) -> StepInput {
    input.baseline()
}

/// Sum of effect `k`'s cumulative intensity over every predicted interval
/// of a padded batch, as a function of the flat batch input.
///
/// Interval blocks `1..steps` are the gaps between consecutive events and
/// block `steps` is each row's trailing interval; padded blocks have zero
/// length and contribute exactly zero.
pub struct BundleTarget<'a> {
    model: &'a NppModel,
    input: &'a StepInput,
    effect: usize,
    /// Interval blocks `[first, end)` in the sum.
    blocks: (usize, usize),
}

impl<'a> BundleTarget<'a> {
    pub fn new(model: &'a NppModel, input: &'a StepInput, effect: usize, include_survival: bool) -> Self {
        assert!(effect < model.num_types(), "effect type out of range");
        let end = if include_survival { input.steps + 1 } else { input.steps };
        BundleTarget { model, input, effect, blocks: (1, end.max(1)) }
    }

    /// Only the trailing block `(t_steps, T]`.
    fn trailing(model: &'a NppModel, input: &'a StepInput, effect: usize) -> Self {
        BundleTarget { model, input, effect, blocks: (input.steps, input.steps + 1) }
    }

    fn build<'t>(&self, tape: &'t Tape, x: &[f64], differentiable: bool) -> (Var<'t>, Var<'t>, Var<'t>) {
        let p = ParamVars::new(tape, &self.model.params, false);
        let (t, z) = self.input.leaves(tape, x, differentiable);
        let u = unroll(self.model, &p, self.input, t, z, false);
        let rows = self.input.rows;
        let (first, end) = self.blocks;
        let out = if end <= first {
            tape.scalar(0.0)
        } else {
            u.f.slice_rows(first * rows, end * rows).slice_cols(self.effect, self.effect + 1).sum()
        };
        (out, t, z)
    }
}

impl Target for BundleTarget<'_> {
    fn dim(&self) -> usize {
        self.input.flat_len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let tape = Tape::new();
        self.build(&tape, x, false).0.item()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let (out, t, z) = self.build(&tape, x, true);
        match tape.backward(out) {
            Ok(g) => {
                let mut v = g.wrt(t).into_data();
                v.extend_from_slice(g.wrt(z).data());
                v
            }
            Err(_) => vec![f64::NAN; x.len()],
        }
    }
}

/// Adds the per-event type attributions of one attribution call into
/// `sums[effect][cause]`.
fn scatter(input: &StepInput, scores: &[f64], row: &mut [f64]) {
    for step in 0..input.steps {
        for r in 0..input.rows {
            if input.mask[step * input.rows + r] == 0.0 {
                continue;
            }
            let base = input.onehot_index(step, r, 0);
            let kind = (0..input.num_types)
                .find(|&c| input.onehot[base - input.times.len() + c] == 1.0)
                .expect("real event without a type");
            let a: f64 = scores[base..base + input.num_types].iter().sum();
            row[kind] += a;
        }
    }
}

fn check_inputs(model: &NppModel, ds: &Dataset, cfg: &CausalityConfig) -> Result<()> {
    cfg.validate()?;
    if model.num_types() != ds.num_types {
        return Err(Error::Precondition(format!(
            "model has {} types, data has {}",
            model.num_types(),
            ds.num_types
        )));
    }
    Ok(())
}

/// One attribution call per mini-batch and effect type.
pub fn batched_statistic(model: &NppModel, ds: &Dataset, cfg: &CausalityConfig) -> Result<CausalityMatrix> {
    check_inputs(model, ds, cfg)?;
    let k = ds.num_types;
    let inputs: Vec<StepInput> = sequential_batches(ds, cfg.batch_size).iter().map(StepInput::from_batch).collect();
    let calls = AtomicUsize::new(0);
    let units: Vec<(usize, usize)> = (0..inputs.len()).flat_map(|b| (0..k).map(move |e| (b, e))).collect();
    let rows: Vec<Vec<f64>> = units
        .par_iter()
        .map(|&(b, effect)| {
            let input = &inputs[b];
            let x = input.flat();
            let xb = make_baseline(input).flat();
            let target = BundleTarget::new(model, input, effect, cfg.include_survival);
            calls.fetch_add(1, Ordering::Relaxed);
            let a = integrated_gradients(&target, &x, &xb, cfg.ig_steps)?;
            let mut row = vec![0.0; k];
            scatter(input, &a.scores, &mut row);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![vec![0.0; k]; k];
    for (&(_, effect), row) in units.iter().zip(&rows) {
        for (s, v) in sums[effect].iter_mut().zip(row) {
            *s += v;
        }
    }
    CausalityMatrix::from_sums(sums, ds.type_counts(), calls.into_inner())
}

/// One attribution call per predicted interval and effect type, each on
/// the history truncated at the interval's start.
pub fn naive_statistic(model: &NppModel, ds: &Dataset, cfg: &CausalityConfig) -> Result<CausalityMatrix> {
    check_inputs(model, ds, cfg)?;
    let k = ds.num_types;
    let mut units = Vec::new();
    for seq in &ds.sequences {
        let n = seq.len();
        let last = if cfg.include_survival { n } else { n.saturating_sub(1) };
        for i in 1..=last {
            for effect in 0..k {
                units.push((seq, i, effect));
            }
        }
    }
    let calls = AtomicUsize::new(0);
    let rows: Vec<Vec<f64>> = units
        .par_iter()
        .map(|&(seq, i, effect)| {
            let horizon = seq.events.get(i).map_or(seq.horizon, |e| e.t);
            let prefix = EventSequence::new(seq.events[..i].to_vec(), horizon);
            let input = StepInput::from_batch(&Batch::from_sequences(&[&prefix], vec![0], k));
            // the prefix's trailing interval is (t_i, t_{i+1}]
            let target = BundleTarget::trailing(model, &input, effect);
            calls.fetch_add(1, Ordering::Relaxed);
            let a = integrated_gradients(&target, &input.flat(), &make_baseline(&input).flat(), cfg.ig_steps)?;
            let mut row = vec![0.0; k];
            scatter(&input, &a.scores, &mut row);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![vec![0.0; k]; k];
    for (&(_, _, effect), row) in units.iter().zip(&rows) {
        for (s, v) in sums[effect].iter_mut().zip(row) {
            *s += v;
        }
    }
    CausalityMatrix::from_sums(sums, ds.type_counts(), calls.into_inner())
}
