//! Semi-parametric neural point process.
//!
//! An event `(t_i, k_i)` is embedded as `[t_i − t_{i−1}; V[k_i]]` and fed to
//! a gated recurrent cell. The hidden state `h_i` drives a softplus network
//! producing weights `α_{k,r}(h_i) > 0`, and on `(t_i, t_{i+1}]`
//!
//! ```text
//! λ_k(t) = Σ_r α_{k,r}(h_i) ψ_r(t − t_i)     f_k(h_i, Δt) = Σ_r α_{k,r}(h_i) Ψ_r(Δt)
//! ```
//!
//! where `ψ_r` are Gaussian densities and `Ψ_r` their integrals from zero,
//! so every likelihood term is closed-form.

mod basis;
mod forward;
mod model;
mod train;

use eventgc_autodiff::{softplus, Array, Tape};

pub use basis::BasisFamily;
pub use forward::StepInput;
pub use model::{ModelConfig, NppModel, Params, CHECKPOINT_VERSION, PARAM_NAMES};
pub use train::{fit, train, Adam, EpochStats, TrainConfig, Trained};

pub(crate) use forward::{unroll, ParamVars};

use crate::error::{Error, Result};
use crate::seqdata::{Batch, EventSequence};

/// Input vector of one event: `[dt; V[kind]]`, where `kind == K` is the
/// null type with a zero embedding.
pub fn embed_event(model: &NppModel, dt: f64, kind: usize) -> Result<Vec<f64>> {
    let k = model.num_types();
    if kind > k {
        return Err(Error::Precondition(format!("type {kind} outside 0..={k}")));
    }
    let d = model.config.embed_dim;
    let row = &model.params.type_embedding.data()[kind * d..(kind + 1) * d];
    let mut v = Vec::with_capacity(1 + d);
    v.push(dt);
    if kind < k {
        v.extend_from_slice(row);
    } else {
        v.resize(1 + d, 0.0);
    }
    Ok(v)
}

/// Hidden states `h_0..h_n` of one sequence.
pub fn encode(model: &NppModel, seq: &EventSequence) -> Vec<Vec<f64>> {
    let input = StepInput::from_sequence(seq, model.num_types());
    let tape = Tape::new();
    let p = ParamVars::new(&tape, &model.params, false);
    let (t, z) = input.leaves(&tape, &input.flat(), false);
    let u = unroll(model, &p, &input, t, z, false);
    let h = u.hidden.value();
    let n = model.config.hidden;
    h.data().chunks(n).map(<[f64]>::to_vec).collect()
}

/// Basis weights `α_{k,r}(h)`, flattened type-major (`k·R + r`).
pub fn alpha(model: &NppModel, h: &[f64]) -> Vec<f64> {
    let p = &model.params;
    let n = model.config.hidden;
    let kr = p.alpha_b2.len();
    let affine = |w: &Array, b: Option<&Array>, x: &[f64], out: usize| -> Vec<f64> {
        (0..out)
            .map(|j| {
                let mut s = b.map_or(0.0, |b| b.data()[j]);
                for (i, xi) in x.iter().enumerate() {
                    s += xi * w.data()[i * out + j];
                }
                s
            })
            .collect()
    };
    let hidden: Vec<f64> = affine(&p.alpha_w1, Some(&p.alpha_b1), h, n).into_iter().map(f64::tanh).collect();
    let a = affine(&p.alpha_w2, Some(&p.alpha_b2), &hidden, kr);
    let s = affine(&p.alpha_skip, None, h, kr);
    a.iter().zip(&s).map(|(x, y)| softplus(x + y)).collect()
}

/// `λ_k(t_i + dt)` for every type, given `h_i`.
pub fn intensity(model: &NppModel, h: &[f64], dt: f64) -> Result<Vec<f64>> {
    weighted_basis(model, h, |r| model.basis.density(r, dt))
}

/// `f_k = ∫_{t_i}^{t_i+dt} λ_k` for every type, given `h_i`.
pub fn cumulative_intensity(model: &NppModel, h: &[f64], dt: f64) -> Result<Vec<f64>> {
    weighted_basis(model, h, |r| model.basis.integral(r, dt))
}

fn weighted_basis(model: &NppModel, h: &[f64], basis: impl Fn(usize) -> Result<f64>) -> Result<Vec<f64>> {
    let r = model.num_bases();
    let values = (0..r).map(basis).collect::<Result<Vec<f64>>>()?;
    let a = alpha(model, h);
    Ok(a.chunks(r).map(|g| g.iter().zip(&values).map(|(x, y)| x * y).sum()).collect())
}

/// Negative log-likelihood of one sequence on `[0, T]`, survival term
/// included.
pub fn nll(model: &NppModel, seq: &EventSequence) -> Result<f64> {
    let input = StepInput::from_sequence(seq, model.num_types());
    let tape = Tape::new();
    let p = ParamVars::new(&tape, &model.params, false);
    let (t, z) = input.leaves(&tape, &input.flat(), false);
    let u = unroll(model, &p, &input, t, z, true);
    let total = u.f.sum().item() - u.log_lambda.map_or(0.0, |ll| (z * ll).sum().item());
    if total.is_finite() {
        return Ok(total);
    }
    let k = model.num_types();
    let f = u.f.value();
    let ll = u.log_lambda.map(|v| v.value());
    for i in 0..=seq.len() {
        let bad_f = f.data()[i * k..(i + 1) * k].iter().any(|v| !v.is_finite());
        let bad_l = i < seq.len() && ll.as_ref().is_some_and(|l| !l.get(i, seq.events[i].k).is_finite());
        if bad_f || bad_l {
            return Err(Error::NonFinite(format!("log-likelihood at event {i}")));
        }
    }
    Err(Error::NonFinite("log-likelihood".into()))
}

/// Regularized objective summed over a batch.
pub fn objective(model: &NppModel, batch: &Batch, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    let input = StepInput::from_batch(batch);
    let tape = Tape::new();
    let p = ParamVars::new(&tape, &model.params, false);
    let v = forward::objective(model, &p, &input, eta).item();
    if !v.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    Ok(v)
}

/// Objective value and its gradient with respect to every parameter array,
/// in [`PARAM_NAMES`] order.
pub fn objective_grad(model: &NppModel, input: &StepInput, eta: f64) -> Result<(f64, Vec<Array>)> {
    check_eta(eta)?;
    let tape = Tape::new();
    let p = ParamVars::new(&tape, &model.params, true);
    let out = forward::objective(model, &p, input, eta);
    let v = out.item();
    if !v.is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    let g = tape.backward(out)?;
    Ok((v, p.all().iter().map(|&x| g.wrt(x)).collect()))
}

fn check_eta(eta: f64) -> Result<()> {
    if eta >= 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("eta must be nonnegative, got {eta}")))
    }
}
