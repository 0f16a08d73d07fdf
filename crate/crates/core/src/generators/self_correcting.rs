use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{base_seed, check_matrix, sequence_rng, target_count};
use crate::error::{Error, Result};
use crate::seqdata::{Dataset, Event, EventSequence, Matrix};

/// Below this drift the compensator is evaluated in its linear limit.
const SMALL_RATE: f64 = 1e-12;
/// Largest log-intensity accepted before the config is declared pathological.
const MAX_LOG_INTENSITY: f64 = 700.0;

/// Self-correcting process `λ_k(t) = exp(α_k t + Σ_{t_i < t} w_{k,k_i})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCorrectingConfig {
    pub num_types: usize,
    pub num_sequences: usize,
    pub mean_length: f64,
    pub alpha_rate: Vec<f64>,
    pub weights: Matrix,
}

impl SelfCorrectingConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_types;
        if k == 0 || self.alpha_rate.len() != k {
            return Err(Error::Config("alpha_rate must have K entries".into()));
        }
        check_matrix("weights", &self.weights, k)?;
        if self.alpha_rate.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::Config("alpha_rate must be positive".into()));
        }
        if self.weights.iter().flatten().any(|&w| !(w <= 0.0)) {
            return Err(Error::Config("weights must be nonpositive".into()));
        }
        if !(self.mean_length > 0.0) {
            return Err(Error::Config("mean_length must be positive".into()));
        }
        Ok(())
    }

    /// Samples until `n` events by competing risks over the per-type
    /// closed-form compensators.
    pub fn simulate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<EventSequence> {
        let k = self.num_types;
        let mut w_acc = vec![0.0; k];
        let mut t = 0.0;
        let mut events = Vec::with_capacity(n);
        while events.len() < n {
            let mut best = (f64::INFINITY, 0);
            for j in 0..k {
                let e: f64 = Exp1.sample(rng);
                let next = next_arrival(t, self.alpha_rate[j], w_acc[j], e);
                if next < best.0 {
                    best = (next, j);
                }
            }
            let (next, kind) = best;
            if !next.is_finite() {
                return Err(Error::NonFinite(format!("arrival time after t={t}")));
            }
            t = next;
            for (j, w) in w_acc.iter_mut().enumerate() {
                *w += self.weights[j][kind];
            }
            let peak = (0..k)
                .map(|j| self.alpha_rate[j] * t + w_acc[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if peak > MAX_LOG_INTENSITY {
                return Err(Error::NonFinite(format!(
                    "log-intensity {peak} at t={t} overflows; reduce alpha_rate or mean_length"
                )));
            }
            events.push(Event::new(t, kind));
        }
        Ok(EventSequence::new(events, t))
    }

    /// Exact log-likelihood of one sequence on `[0, T]`.
    pub fn log_likelihood(&self, seq: &EventSequence) -> f64 {
        let k = self.num_types;
        let mut w_acc = vec![0.0; k];
        let mut t = 0.0;
        let mut ll = 0.0;
        for e in &seq.events {
            for j in 0..k {
                ll -= compensator(t, e.t, self.alpha_rate[j], w_acc[j]);
            }
            ll += self.alpha_rate[e.k] * e.t + w_acc[e.k];
            for (j, w) in w_acc.iter_mut().enumerate() {
                *w += self.weights[j][e.k];
            }
            t = e.t;
        }
        for j in 0..k {
            ll -= compensator(t, seq.horizon, self.alpha_rate[j], w_acc[j]);
        }
        ll
    }

    /// Pooled compensator increments between consecutive events, `t_0 = 0`.
    pub fn residuals(&self, seq: &EventSequence) -> Vec<f64> {
        let k = self.num_types;
        let mut w_acc = vec![0.0; k];
        let mut t = 0.0;
        let mut out = Vec::with_capacity(seq.len());
        for e in &seq.events {
            out.push(
                (0..k)
                    .map(|j| compensator(t, e.t, self.alpha_rate[j], w_acc[j]))
                    .sum(),
            );
            for (j, w) in w_acc.iter_mut().enumerate() {
                *w += self.weights[j][e.k];
            }
            t = e.t;
        }
        out
    }
}

/// `∫_{t0}^{t} e^{αs + W} ds = e^{W}(e^{αt} − e^{αt0})/α`, or `e^W (t − t0)`
/// as `α → 0`.
pub(crate) fn compensator(t0: f64, t: f64, alpha: f64, w: f64) -> f64 {
    let dt = t - t0;
    if alpha.abs() < SMALL_RATE {
        return (w + alpha * t0).exp() * dt;
    }
    (w + alpha * t0).exp() * (alpha * dt).exp_m1() / alpha
}

/// Solves `Λ(t0, t) = e` for `t`. With `x = ln(αe) − W − αt0` the gap is
/// `softplus(x)/α`, which stays finite for very negative `W`.
pub(crate) fn next_arrival(t0: f64, alpha: f64, w: f64, e: f64) -> f64 {
    if alpha.abs() < SMALL_RATE {
        return t0 + e * (-w - alpha * t0).exp();
    }
    let x = (alpha * e).ln() - w - alpha * t0;
    let sp = if x > 30.0 { x + (-x).exp() } else { x.exp().ln_1p() };
    t0 + sp / alpha
}

/// Samples `num_sequences` self-correcting sequences; ground truth is the
/// weight matrix itself.
pub fn sample_self_correcting<R: Rng + ?Sized>(
    cfg: &SelfCorrectingConfig,
    rng: &mut R,
) -> Result<(Dataset, Matrix)> {
    cfg.validate()?;
    let base = base_seed(rng);
    let sequences = (0..cfg.num_sequences)
        .map(|i| {
            let mut r = sequence_rng(base, i);
            let n = target_count(cfg.mean_length, &mut r)?;
            cfg.simulate(n, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = cfg.weights.clone();
    let ds = Dataset::new(sequences, cfg.num_types)?.with_ground_truth(truth.clone())?;
    Ok((ds, truth))
}
