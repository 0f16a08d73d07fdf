use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{base_seed, sequence_rng};
use crate::error::{Error, Result};
use crate::seqdata::{Dataset, Event, EventSequence, Matrix};

const BASE_RATE: f64 = 0.05;
const WINDOW: f64 = 10.0;
/// Rates of the effect type of the motif, indexed by the parent bit pattern
/// (A = bit 0, B = bit 1, C = bit 2).
const EFFECT_TABLE: [f64; 8] = [0.05, 0.1, 0.1, 0.5, 0.2, 0.25, 0.25, 0.65];

/// Proximal graphical event model: the rate of type `k` is looked up from
/// `rates[k]` by which of its parents fired within their lookback windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgemConfig {
    pub num_sequences: usize,
    pub horizon: f64,
    pub parents: Vec<Vec<usize>>,
    /// `windows[k][j]` belongs to `parents[k][j]`.
    pub windows: Vec<Vec<f64>>,
    /// `rates[k][pattern]`, bit `j` of `pattern` set when `parents[k][j]` is active.
    pub rates: Vec<Vec<f64>>,
}

impl PgemConfig {
    pub fn num_types(&self) -> usize {
        self.parents.len()
    }

    /// `motifs` copies of the five-type motif A, B, C, D, E in which E has
    /// parents {A, B, C}: A or B alone raise its rate slightly, both together
    /// sharply, C on its own moderately. D is an unconnected distractor.
    pub fn synergy_motifs(motifs: usize, num_sequences: usize, horizon: f64) -> Self {
        let mut parents = Vec::new();
        let mut windows = Vec::new();
        let mut rates = Vec::new();
        for m in 0..motifs {
            let o = 5 * m;
            for _ in 0..4 {
                parents.push(vec![]);
                windows.push(vec![]);
                rates.push(vec![BASE_RATE]);
            }
            parents.push(vec![o, o + 1, o + 2]);
            windows.push(vec![WINDOW; 3]);
            rates.push(EFFECT_TABLE.to_vec());
        }
        PgemConfig { num_sequences, horizon, parents, windows, rates }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_types();
        if k == 0 {
            return Err(Error::Config("PGEM needs at least one type".into()));
        }
        if self.windows.len() != k || self.rates.len() != k {
            return Err(Error::Config("parents, windows and rates must have K entries".into()));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config("horizon must be positive".into()));
        }
        for (i, ps) in self.parents.iter().enumerate() {
            if ps.iter().any(|&p| p >= k) {
                return Err(Error::Config(format!("type {i} has a parent out of range")));
            }
            if self.windows[i].len() != ps.len() || self.windows[i].iter().any(|&w| !(w > 0.0)) {
                return Err(Error::Config(format!("type {i} needs one positive window per parent")));
            }
            if self.rates[i].len() != 1 << ps.len() {
                return Err(Error::Config(format!(
                    "type {i} table must have {} entries",
                    1 << ps.len()
                )));
            }
            if self.rates[i].iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
                return Err(Error::Config(format!("type {i} rates must be positive")));
            }
        }
        Ok(())
    }

    /// Parent bit pattern of type `k` just after time `t`, given the last
    /// occurrence time of every type: a parent that fired at `s` is active
    /// on `[s, s + w)`.
    pub fn pattern(&self, k: usize, last: &[f64], t: f64) -> usize {
        self.parents[k]
            .iter()
            .zip(&self.windows[k])
            .enumerate()
            .filter(|(_, (&p, &w))| last[p] <= t && t < last[p] + w)
            .fold(0, |acc, (j, _)| acc | (1 << j))
    }

    pub fn ground_truth(&self) -> Matrix {
        let k = self.num_types();
        let mut m = vec![vec![0.0; k]; k];
        for (i, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                m[i][p] = 1.0;
            }
        }
        m
    }

    /// Simulates one sequence on `[0, horizon]`. Rates are constant between
    /// events and window expiries, so each piece is sampled exactly.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> EventSequence {
        let k = self.num_types();
        let mut last = vec![f64::NEG_INFINITY; k];
        let mut t = 0.0;
        let mut events = Vec::new();
        loop {
            let rates: Vec<f64> = (0..k).map(|i| self.rates[i][self.pattern(i, &last, t)]).collect();
            let change = self
                .parents
                .iter()
                .zip(&self.windows)
                .flat_map(|(ps, ws)| ps.iter().zip(ws).map(|(&p, &w)| last[p] + w))
                .filter(|&c| c > t)
                .fold(self.horizon, f64::min);
            let total: f64 = rates.iter().sum();
            let e: f64 = Exp1.sample(rng);
            let cand = t + e / total;
            if cand > change {
                if change >= self.horizon {
                    break;
                }
                t = change;
                continue;
            }
            let mut u = rng.random::<f64>() * total;
            let mut kind = k - 1;
            for (i, r) in rates.iter().enumerate() {
                if u < *r {
                    kind = i;
                    break;
                }
                u -= r;
            }
            t = cand;
            last[kind] = t;
            events.push(Event::new(t, kind));
        }
        EventSequence::new(events, self.horizon)
    }
}

/// Samples `num_sequences` PGEM sequences on the configured horizon; the
/// ground truth is the binary parent adjacency.
pub fn sample_pgem<R: Rng + ?Sized>(cfg: &PgemConfig, rng: &mut R) -> Result<(Dataset, Matrix)> {
    cfg.validate()?;
    let base = base_seed(rng);
    let sequences = (0..cfg.num_sequences)
        .map(|i| cfg.simulate(&mut sequence_rng(base, i)))
        .collect();
    let truth = cfg.ground_truth();
    let ds = Dataset::new(sequences, cfg.num_types())?.with_ground_truth(truth.clone())?;
    Ok((ds, truth))
}
