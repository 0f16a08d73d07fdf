use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{base_seed, check_matrix, sequence_rng, target_count};
use crate::error::{Error, Result};
use crate::seqdata::{Dataset, Event, EventSequence, Matrix};
use crate::stats::spectral_radius;

/// Hawkes process with kernels `φ_{k,k'}(t) = α_{k,k'} β_{k,k'} e^{-β_{k,k'} t}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesConfig {
    pub num_types: usize,
    pub num_sequences: usize,
    /// Mean of the Poisson-distributed per-sequence event count.
    pub mean_length: f64,
    pub mu: Vec<f64>,
    /// Excitation weights before spectral rescaling.
    pub alpha: Matrix,
    pub beta: Matrix,
    /// When set, `alpha` is rescaled to this spectral radius.
    pub target_spectral_radius: Option<f64>,
}

impl HawkesConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.num_types;
        if k == 0 || self.mu.len() != k {
            return Err(Error::Config("mu must have K entries".into()));
        }
        check_matrix("alpha", &self.alpha, k)?;
        check_matrix("beta", &self.beta, k)?;
        if self.mu.iter().any(|&m| !(m >= 0.0)) || self.mu.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("mu must be nonnegative with positive sum".into()));
        }
        if self.alpha.iter().flatten().any(|&a| !(a >= 0.0)) {
            return Err(Error::Config("alpha must be nonnegative".into()));
        }
        if self.beta.iter().flatten().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if !(self.mean_length > 0.0) {
            return Err(Error::Config("mean_length must be positive".into()));
        }
        Ok(())
    }

    /// The excitation matrix actually used for sampling.
    pub fn scaled_alpha(&self) -> Matrix {
        match self.target_spectral_radius {
            None => self.alpha.clone(),
            Some(target) => {
                let rho = spectral_radius(&self.alpha);
                if rho == 0.0 {
                    return self.alpha.clone();
                }
                let c = target / rho;
                self.alpha
                    .iter()
                    .map(|r| r.iter().map(|a| a * c).collect())
                    .collect()
            }
        }
    }

    pub fn params(&self) -> HawkesParams {
        HawkesParams {
            mu: self.mu.clone(),
            alpha: self.scaled_alpha(),
            beta: self.beta.clone(),
        }
    }
}

/// Concrete Hawkes intensity parameters, used for sampling and for the exact
/// likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct HawkesParams {
    pub mu: Vec<f64>,
    pub alpha: Matrix,
    pub beta: Matrix,
}

impl HawkesParams {
    fn k(&self) -> usize {
        self.mu.len()
    }

    /// Kernel state `S[k][k'] = Σ_{events of type k'} αβ e^{-β(t - t_j)}`.
    fn decay(&self, state: &mut Matrix, dt: f64) {
        for (row, brow) in state.iter_mut().zip(&self.beta) {
            for (s, b) in row.iter_mut().zip(brow) {
                *s *= (-b * dt).exp();
            }
        }
    }

    fn excite(&self, state: &mut Matrix, source: usize) {
        for (k, row) in state.iter_mut().enumerate() {
            row[source] += self.alpha[k][source] * self.beta[k][source];
        }
    }

    fn intensities(&self, state: &Matrix) -> Vec<f64> {
        self.mu
            .iter()
            .zip(state)
            .map(|(m, row)| m + row.iter().sum::<f64>())
            .collect()
    }

    /// `Σ_k ∫_{t}^{t+dt} λ_k` given the kernel state at `t`.
    fn total_compensator(&self, state: &Matrix, dt: f64) -> f64 {
        let mut total = self.mu.iter().sum::<f64>() * dt;
        for (row, brow) in state.iter().zip(&self.beta) {
            for (s, b) in row.iter().zip(brow) {
                total += s * -(-b * dt).exp_m1() / b;
            }
        }
        total
    }

    /// Ogata thinning until `n` events; the bound is the current total
    /// intensity, valid until the next candidate because kernels only decay.
    pub fn simulate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<EventSequence> {
        let k = self.k();
        let mut state = vec![vec![0.0; k]; k];
        let mut t = 0.0;
        let mut events = Vec::with_capacity(n);
        while events.len() < n {
            let bound: f64 = self.intensities(&state).iter().sum();
            if !bound.is_finite() || bound <= 0.0 {
                return Err(Error::NonFinite(format!(
                    "Hawkes intensity bound {bound} at t={t}"
                )));
            }
            let w = Exp::new(bound).expect("positive bound").sample(rng);
            self.decay(&mut state, w);
            t += w;
            let lam = self.intensities(&state);
            let total: f64 = lam.iter().sum();
            let u: f64 = rng.random::<f64>() * bound;
            if u <= total {
                let mut acc = 0.0;
                let mut kind = k - 1;
                for (i, l) in lam.iter().enumerate() {
                    acc += l;
                    if u <= acc {
                        kind = i;
                        break;
                    }
                }
                events.push(Event::new(t, kind));
                self.excite(&mut state, kind);
            }
        }
        Ok(EventSequence::new(events, t))
    }

    /// Exact log-likelihood of one sequence on `[0, T]`.
    pub fn log_likelihood(&self, seq: &EventSequence) -> f64 {
        let k = self.k();
        let mut state = vec![vec![0.0; k]; k];
        let mut t = 0.0;
        let mut ll = 0.0;
        for e in &seq.events {
            let dt = e.t - t;
            ll -= self.total_compensator(&state, dt);
            self.decay(&mut state, dt);
            ll += self.intensities(&state)[e.k].ln();
            self.excite(&mut state, e.k);
            t = e.t;
        }
        ll - self.total_compensator(&state, seq.horizon - t)
    }

    /// Pooled-process compensator increments `Λ(t_{i-1}, t_i)` with `t_0 = 0`;
    /// Exp(1) distributed when the sequence follows these parameters.
    pub fn residuals(&self, seq: &EventSequence) -> Vec<f64> {
        let k = self.k();
        let mut state = vec![vec![0.0; k]; k];
        let mut t = 0.0;
        let mut out = Vec::with_capacity(seq.len());
        for e in &seq.events {
            let dt = e.t - t;
            out.push(self.total_compensator(&state, dt));
            self.decay(&mut state, dt);
            self.excite(&mut state, e.k);
            t = e.t;
        }
        out
    }
}

/// Samples `num_sequences` Hawkes sequences. Each stops at a Poisson-drawn
/// event count and takes its last event time as horizon. The ground truth is
/// the ℓ1 norm of each kernel, i.e. the scaled `α`.
pub fn sample_hawkes<R: Rng + ?Sized>(cfg: &HawkesConfig, rng: &mut R) -> Result<(Dataset, Matrix)> {
    cfg.validate()?;
    let params = cfg.params();
    let base = base_seed(rng);
    let sequences = (0..cfg.num_sequences)
        .map(|i| {
            let mut r = sequence_rng(base, i);
            let n = target_count(cfg.mean_length, &mut r)?;
            params.simulate(n, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = params.alpha.clone();
    let ds = Dataset::new(sequences, cfg.num_types)?.with_ground_truth(truth.clone())?;
    Ok((ds, truth))
}
