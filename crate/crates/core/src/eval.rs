//! Scores for an estimated causality matrix against the truth, and
//! held-out fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npp::{nll, NppModel};
use crate::seqdata::{Dataset, Matrix};

fn flatten(m: &Matrix) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn check_pair(scores: &Matrix, truth: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = truth.len();
    let square = |m: &Matrix| m.len() == k && m.iter().all(|r| r.len() == k);
    if !square(scores) || !square(truth) {
        return Err(Error::Precondition("scores and truth must both be K×K".into()));
    }
    let (s, t) = (flatten(scores), flatten(truth));
    if s.iter().chain(&t).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input".into()));
    }
    Ok((s, t))
}

/// ROC AUC of `scores` for the labels `truth > 0`, over all K² entries.
/// Tied positive/negative pairs count one half.
pub fn auc(scores: &Matrix, truth: &Matrix) -> Result<f64> {
    let (s, t) = check_pair(scores, truth)?;
    let pos: Vec<f64> = s.iter().zip(&t).filter(|(_, &y)| y > 0.0).map(|(&x, _)| x).collect();
    let neg: Vec<f64> = s.iter().zip(&t).filter(|(_, &y)| y <= 0.0).map(|(&x, _)| x).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Precondition("AUC needs both positive and non-positive truth entries".into()));
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Kendall's τ-b between the flattened matrices.
pub fn kendall_tau(scores: &Matrix, truth: &Matrix) -> Result<f64> {
    let (s, t) = check_pair(scores, truth)?;
    let n = s.len();
    if n < 2 {
        return Err(Error::Precondition("Kendall's tau needs at least two entries".into()));
    }
    let (mut concordant, mut discordant, mut tied_s, mut tied_t) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = (s[i] - s[j]).signum() * f64::from(s[i] != s[j]);
            let b = (t[i] - t[j]).signum() * f64::from(t[i] != t[j]);
            match (a == 0.0, b == 0.0) {
                (true, true) => {}
                (true, false) => tied_s += 1,
                (false, true) => tied_t += 1,
                (false, false) if a == b => concordant += 1,
                (false, false) => discordant += 1,
            }
        }
    }
    let n_s = concordant + discordant + tied_t;
    let n_t = concordant + discordant + tied_s;
    if n_s == 0 || n_t == 0 {
        return Err(Error::Precondition("Kendall's tau undefined for a constant argument".into()));
    }
    Ok((concordant - discordant) as f64 / ((n_s as f64) * (n_t as f64)).sqrt())
}

/// Negative log-likelihood of `test` per event.
pub fn holdout_nll(model: &NppModel, test: &Dataset) -> Result<f64> {
    let events = test.num_events();
    if events == 0 {
        return Err(Error::Precondition("test set has no events".into()));
    }
    let mut total = 0.0;
    for s in &test.sequences {
        total += nll(model, s)?;
    }
    Ok(total / events as f64)
}

/// Per-event NLL on `test` of the homogeneous Poisson process whose rates
/// are the maximum-likelihood fit to `fit` (type count over total time).
pub fn poisson_nll(fit: &Dataset, test: &Dataset) -> Result<f64> {
    let events = test.num_events();
    if events == 0 {
        return Err(Error::Precondition("test set has no events".into()));
    }
    let exposure: f64 = fit.sequences.iter().map(|s| s.horizon).sum();
    if !(exposure > 0.0) {
        return Err(Error::Precondition("fit set has no observed time".into()));
    }
    let rates: Vec<f64> = fit.type_counts().iter().map(|&c| c as f64 / exposure).collect();
    let test_time: f64 = test.sequences.iter().map(|s| s.horizon).sum();
    let log_sum: f64 = test.type_counts().iter().zip(&rates).map(|(&c, &r)| if c == 0 { 0.0 } else { c as f64 * r.ln() }).sum();
    Ok((rates.iter().sum::<f64>() * test_time - log_sum) / events as f64)
}

/// Which way the truth was read when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Positive truth entries are causal links.
    Positive,
    /// The truth has only non-positive weights (inhibition); both matrices
    /// are negated so inhibitory links count as the positive class.
    Negated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: Option<f64>,
    pub kendall_tau: Option<f64>,
    pub orientation: Orientation,
    pub holdout_nll_per_event: Option<f64>,
    pub poisson_nll_per_event: Option<f64>,
    /// Held-out NLL per event under the generating process, when known.
    pub truth_nll_per_event: Option<f64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    /// AUC and τ of `estimate` against `truth`. A metric is `None` when it
    /// is undefined for this truth (a single class, or constant input).
    pub fn score(estimate: &Matrix, truth: &Matrix) -> Result<EvalReport> {
        check_pair(estimate, truth)?;
        let t = flatten(truth);
        let negate = !t.iter().any(|&v| v > 0.0) && t.iter().any(|&v| v < 0.0);
        let (est, tr) = if negate { (neg(estimate), neg(truth)) } else { (estimate.clone(), truth.clone()) };
        let defined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::Precondition(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(EvalReport {
            auc: defined(auc(&est, &tr))?,
            kendall_tau: defined(kendall_tau(&est, &tr))?,
            orientation: if negate { Orientation::Negated } else { Orientation::Positive },
            holdout_nll_per_event: None,
            poisson_nll_per_event: None,
            truth_nll_per_event: None,
            config: serde_json::Value::Null,
        })
    }
}

fn neg(m: &Matrix) -> Matrix {
    m.iter().map(|r| r.iter().map(|v| -v).collect()).collect()
}
