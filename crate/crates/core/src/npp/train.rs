use eventgc_autodiff::Array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::StepInput;
use super::{objective_grad, BasisFamily, ModelConfig, NppModel};
use crate::error::{Error, Result};
use crate::seqdata::{bucket_batches, holdout_split, sequential_batches, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the baseline-output penalty.
    pub eta: f64,
    pub valid_fraction: f64,
    pub seed: u64,
    /// Return the epoch with the lowest validation objective rather than the last.
    pub select_best: bool,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Overrides the number of bases chosen from the gap percentiles.
    pub num_bases: Option<usize>,
    /// Overrides the largest basis mean chosen from the gap percentiles.
    pub basis_length: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 30,
            batch_size: 16,
            eta: 1.0,
            valid_fraction: 0.1,
            seed: 0,
            select_best: true,
            embed_dim: 64,
            hidden: 64,
            num_bases: None,
            basis_length: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config("eta must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::Config("batch_size, embed_dim and hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(Error::Config("valid_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Basis sized from the dataset's gaps, with any explicit overrides.
    pub fn basis_for(&self, ds: &Dataset) -> Result<BasisFamily> {
        let gaps: Vec<f64> = ds.sequences.iter().flat_map(|s| s.gaps()).collect();
        match (self.num_bases, self.basis_length) {
            (Some(r), Some(l)) => BasisFamily::new(r, l),
            (r, l) => {
                let auto = BasisFamily::from_gaps(&gaps)?;
                BasisFamily::new(r.unwrap_or(auto.len()), l.unwrap_or(auto.length()))
            }
        }
    }
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Array], grads: &[Array]) {
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let pd = p.data_mut();
            for (((pi, &gi), mi), vi) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *pi -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective per training event.
    pub train_objective: f64,
    /// Mean objective per validation event (the training value when there
    /// is no validation split).
    pub valid_objective: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: NppModel,
    pub history: Vec<EpochStats>,
    /// 1-based epoch of the returned snapshot; 0 if no epoch ran.
    pub selected_epoch: usize,
}

/// Builds a model sized for `ds` and fits it.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if ds.num_events() == 0 {
        return Err(Error::Precondition("dataset has no events".into()));
    }
    let basis = cfg.basis_for(ds)?;
    let mc = ModelConfig { num_types: ds.num_types, embed_dim: cfg.embed_dim, hidden: cfg.hidden };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let model = NppModel::init(mc, basis, &mut rng)?;
    fit(model, ds, cfg)
}

/// Adam on the regularized objective with a held-out validation split.
pub fn fit(mut model: NppModel, ds: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Precondition("empty dataset".into()));
    }
    if model.num_types() != ds.num_types {
        return Err(Error::Precondition(format!(
            "model has {} types, data has {}",
            model.num_types(),
            ds.num_types
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (kept, held) = holdout_split(ds.len(), cfg.valid_fraction, &mut rng);
    let train_ds = ds.subset(&kept);
    let valid: Vec<StepInput> = sequential_batches(&ds.subset(&held), cfg.batch_size)
        .iter()
        .map(StepInput::from_batch)
        .collect();

    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let mut events = 0usize;
        for batch in bucket_batches(&train_ds, cfg.batch_size, &mut rng) {
            let input = StepInput::from_batch(&batch);
            let n = input.num_events().max(1);
            let (v, mut grads) = objective_grad(&model, &input, cfg.eta).map_err(|e| Error::Diverged {
                epoch,
                msg: e.to_string(),
                last_good: Box::new(best.1.clone()),
            })?;
            for g in &mut grads {
                *g = g.scale(1.0 / n as f64);
            }
            adam.step(&mut model.params.iter_mut(), &grads);
            if model.params.iter().iter().any(|a| !a.all_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    msg: "non-finite parameters".into(),
                    last_good: Box::new(best.1),
                });
            }
            total += v;
            events += input.num_events();
        }
        let train_objective = total / events.max(1) as f64;
        let valid_objective = if valid.is_empty() {
            train_objective
        } else {
            mean_objective(&model, &valid, cfg.eta).map_err(|e| Error::Diverged {
                epoch,
                msg: e.to_string(),
                last_good: Box::new(best.1.clone()),
            })?
        };
        history.push(EpochStats { epoch, train_objective, valid_objective });
        if valid_objective < best.0 {
            best = (valid_objective, model.clone(), epoch);
        }
    }
    let (model, selected_epoch) = if cfg.select_best && best.2 > 0 {
        (best.1, best.2)
    } else {
        (model, cfg.epochs)
    };
    Ok(Trained { model, history, selected_epoch })
}

/// Objective per event over pre-built batches.
pub(crate) fn mean_objective(model: &NppModel, inputs: &[StepInput], eta: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut events = 0;
    for input in inputs {
        let tape = eventgc_autodiff::Tape::new();
        let p = super::ParamVars::new(&tape, &model.params, false);
        let v = super::forward::objective(model, &p, input, eta).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("validation objective".into()));
        }
        total += v;
        events += input.num_events();
    }
    Ok(total / events.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqdata::{Event, EventSequence};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { epochs: 2, batch_size: 4, embed_dim: 4, hidden: 6, learning_rate: 0.01, ..TrainConfig::default() }
    }

    fn toy_data() -> Dataset {
        let seqs = (0..12)
            .map(|s| {
                let events = (0..5 + s % 3).map(|i| Event::new(0.7 * (i + 1) as f64 + 0.1 * s as f64, (i + s) % 2)).collect();
                EventSequence::new(events, 10.0)
            })
            .collect();
        Dataset::new(seqs, 2).unwrap()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Array::row(&[1.0, -2.0]);
        let g = Array::row(&[0.5, -3.0]);
        let mut adam = Adam::new(0.1);
        adam.step(&mut [&mut p], &[g]);
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy_data();
        let a = train(&ds, &tiny_cfg()).unwrap();
        let b = train(&ds, &tiny_cfg()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn selected_snapshot_is_best_validation() {
        let ds = toy_data();
        let cfg = TrainConfig { epochs: 6, valid_fraction: 0.25, ..tiny_cfg() };
        let t = train(&ds, &cfg).unwrap();
        let chosen = t.history[t.selected_epoch - 1].valid_objective;
        assert!(chosen <= t.history.last().unwrap().valid_objective);
        assert!(t.history.iter().all(|h| chosen <= h.valid_objective));
    }

    #[test]
    fn null_embedding_row_stays_zero() {
        let ds = toy_data();
        let t = train(&ds, &tiny_cfg()).unwrap();
        let d = 4;
        assert!(t.model.params.type_embedding.data()[2 * d..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_config() {
        let ds = toy_data();
        let cfg = TrainConfig { learning_rate: 0.0, ..tiny_cfg() };
        assert!(matches!(train(&ds, &cfg), Err(Error::Config(_))));
    }
}
