//! The model as a tape graph over a whole padded batch.
//!
//! Inputs are laid out step-major: row `j·rows + b` holds event `j` of
//! sequence `b`. Interval block `j ∈ 0..=steps` covers `(t_j, t_{j+1}]` with
//! `t_0 = 0` and `t_{steps+1} = T`, and is decoded from `h_j`. Padded events
//! repeat the last timestamp and carry a zero type vector, so their blocks
//! have zero length and contribute nothing.

use eventgc_autodiff::{normal_cdf, Array, Tape, Var};

use super::model::{NppModel, Params};
use crate::seqdata::{Batch, EventSequence};

/// Step-major numeric input of one padded batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub rows: usize,
    pub steps: usize,
    pub num_types: usize,
    /// `steps·rows` timestamps.
    pub times: Vec<f64>,
    /// `steps·rows × K` type indicators, zero rows at padding.
    pub onehot: Vec<f64>,
    /// `steps·rows`, 1 for real events.
    pub mask: Vec<f64>,
    pub horizons: Vec<f64>,
}

impl StepInput {
    pub fn from_batch(b: &Batch) -> Self {
        let (rows, steps, k) = (b.rows(), b.max_len, b.num_types);
        let mut times = vec![0.0; steps * rows];
        let mut onehot = vec![0.0; steps * rows * k];
        let mut mask = vec![0.0; steps * rows];
        for j in 0..steps {
            for r in 0..rows {
                let at = j * rows + r;
                times[at] = b.time(r, j);
                if b.is_real(r, j) {
                    mask[at] = 1.0;
                    onehot[at * k + b.kind(r, j)] = 1.0;
                }
            }
        }
        StepInput { rows, steps, num_types: k, times, onehot, mask, horizons: b.horizons.clone() }
    }

    pub fn from_sequence(seq: &EventSequence, num_types: usize) -> Self {
        StepInput::from_batch(&Batch::from_sequences(&[seq], vec![0], num_types))
    }

    /// Same timestamps and mask with every type replaced by the null type.
    pub fn baseline(&self) -> Self {
        StepInput { onehot: vec![0.0; self.onehot.len()], ..self.clone() }
    }

    /// Rows of `self` followed by rows of `other` at every step.
    pub fn stacked(&self, other: &StepInput) -> Self {
        assert_eq!((self.steps, self.num_types), (other.steps, other.num_types));
        let (ra, rb, k) = (self.rows, other.rows, self.num_types);
        let mut out = StepInput {
            rows: ra + rb,
            steps: self.steps,
            num_types: k,
            times: Vec::with_capacity(self.times.len() + other.times.len()),
            onehot: Vec::with_capacity(self.onehot.len() + other.onehot.len()),
            mask: Vec::with_capacity(self.mask.len() + other.mask.len()),
            horizons: [self.horizons.as_slice(), other.horizons.as_slice()].concat(),
        };
        for j in 0..self.steps {
            out.times.extend_from_slice(&self.times[j * ra..(j + 1) * ra]);
            out.times.extend_from_slice(&other.times[j * rb..(j + 1) * rb]);
            out.onehot.extend_from_slice(&self.onehot[j * ra * k..(j + 1) * ra * k]);
            out.onehot.extend_from_slice(&other.onehot[j * rb * k..(j + 1) * rb * k]);
            out.mask.extend_from_slice(&self.mask[j * ra..(j + 1) * ra]);
            out.mask.extend_from_slice(&other.mask[j * rb..(j + 1) * rb]);
        }
        out
    }

    pub fn num_events(&self) -> usize {
        self.mask.iter().filter(|&&m| m > 0.0).count()
    }

    /// Length of the flat input vector: timestamps, then type indicators.
    pub fn flat_len(&self) -> usize {
        self.times.len() + self.onehot.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        [self.times.as_slice(), self.onehot.as_slice()].concat()
    }

    /// Flat index of the type indicator `(step, row, kind)`.
    pub fn onehot_index(&self, step: usize, row: usize, kind: usize) -> usize {
        self.times.len() + (step * self.rows + row) * self.num_types + kind
    }

    /// Flat index of the timestamp of `(step, row)`.
    pub fn time_index(&self, step: usize, row: usize) -> usize {
        step * self.rows + row
    }

    pub(crate) fn leaves<'t>(&self, tape: &'t Tape, x: &[f64], differentiable: bool) -> (Var<'t>, Var<'t>) {
        let n = self.times.len();
        let t = Array::from_matrix(n, 1, x[..n].to_vec());
        let z = Array::from_matrix(n, self.num_types, x[n..].to_vec());
        if differentiable {
            (tape.var(t), tape.var(z))
        } else {
            (tape.constant(t), tape.constant(z))
        }
    }
}

/// Parameters placed on a tape, either as differentiable leaves (training)
/// or as constants (attribution).
pub(crate) struct ParamVars<'t> {
    pub emb: Var<'t>,
    pub wx: Var<'t>,
    pub wh: Var<'t>,
    pub whc: Var<'t>,
    pub b: Var<'t>,
    pub h0: Var<'t>,
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub skip: Var<'t>,
    pub b2: Var<'t>,
}

impl<'t> ParamVars<'t> {
    pub fn new(tape: &'t Tape, p: &Params, trainable: bool) -> Self {
        let put = |a: &Array| if trainable { tape.var(a.clone()) } else { tape.constant(a.clone()) };
        ParamVars {
            emb: put(&p.type_embedding),
            wx: put(&p.gru_wx),
            wh: put(&p.gru_wh),
            whc: put(&p.gru_whc),
            b: put(&p.gru_b),
            h0: put(&p.h0),
            w1: put(&p.alpha_w1),
            b1: put(&p.alpha_b1),
            w2: put(&p.alpha_w2),
            skip: put(&p.alpha_skip),
            b2: put(&p.alpha_b2),
        }
    }

    pub fn all(&self) -> [Var<'t>; 11] {
        [
            self.emb, self.wx, self.wh, self.whc, self.b, self.h0, self.w1, self.b1, self.w2, self.skip,
            self.b2,
        ]
    }
}

pub(crate) struct Unrolled<'t> {
    /// `(steps+1)·rows × K` cumulative intensities per interval block.
    pub f: Var<'t>,
    /// `steps·rows × K` log-intensities at each event time, if requested.
    pub log_lambda: Option<Var<'t>>,
    /// `(steps+1)·rows × N` hidden states `h_0..h_steps`.
    pub hidden: Var<'t>,
}

/// Builds the forward graph for one batch.
pub(crate) fn unroll<'t>(
    model: &NppModel,
    p: &ParamVars<'t>,
    input: &StepInput,
    times: Var<'t>,
    onehot: Var<'t>,
    with_log_lambda: bool,
) -> Unrolled<'t> {
    let tape = times.tape();
    let (rows, steps, k) = (input.rows, input.steps, input.num_types);
    let n = model.config.hidden;
    let basis = &model.basis;
    let r = basis.len();
    let blocks = (steps + 1) * rows;

    let horizon = tape.constant(Array::column(&input.horizons));
    let dt = if steps == 0 {
        horizon
    } else {
        let ends = Var::concat_rows(&[times, horizon]);
        let starts = Var::concat_rows(&[tape.constant(Array::zeros(rows, 1)), times]);
        ends - starts
    };

    let mut hs = vec![p.h0.broadcast(rows, n)];
    if steps > 0 {
        let emb = onehot.matmul(p.emb.slice_rows(0, k));
        let v = Var::concat_cols(&[dt.slice_rows(0, steps * rows), emb]);
        let xg = v.matmul(p.wx) + p.b.broadcast(steps * rows, 3 * n);
        for j in 0..steps {
            let h = hs[j];
            let xj = xg.slice_rows(j * rows, (j + 1) * rows);
            let gates = (xj.slice_cols(0, 2 * n) + h.matmul(p.wh)).sigmoid();
            let reset = gates.slice_cols(0, n);
            let update = gates.slice_cols(n, 2 * n);
            let cand = (xj.slice_cols(2 * n, 3 * n) + (reset * h).matmul(p.whc)).tanh();
            let step = update * (cand - h);
            let m = &input.mask[j * rows..(j + 1) * rows];
            let next = if m.iter().all(|&v| v == 1.0) {
                h + step
            } else {
                let mut ma = Array::zeros(rows, n);
                for (i, &mv) in m.iter().enumerate() {
                    ma.data_mut()[i * n..(i + 1) * n].fill(mv);
                }
                h + tape.constant(ma) * step
            };
            hs.push(next);
        }
    }
    let hidden = Var::concat_rows(&hs);

    let pre = (hidden.matmul(p.w1) + p.b1.broadcast(blocks, n)).tanh().matmul(p.w2)
        + hidden.matmul(p.skip)
        + p.b2.broadcast(blocks, k * r);
    let alpha = pre.softplus();

    let inv_sigma: Vec<f64> = basis.stds().iter().map(|s| 1.0 / s).collect();
    let offset: Vec<f64> = basis.means().iter().zip(basis.stds()).map(|(m, s)| -m / s).collect();
    let base: Vec<f64> = offset.iter().map(|&o| normal_cdf(o)).collect();
    let z = dt.matmul(tape.constant(Array::row(&inv_sigma))) + tape.constant(Array::row(&offset)).broadcast(blocks, r);
    let psi = z.normal_cdf() - tape.constant(Array::row(&base)).broadcast(blocks, r);
    let tile = tape.constant(tile_matrix(k, r));
    let group = tape.constant(group_matrix(k, r));
    let f = (alpha * psi.matmul(tile)).matmul(group);

    let log_lambda = (with_log_lambda && steps > 0).then(|| {
        let ne = steps * rows;
        let ze = z.slice_rows(0, ne);
        let log_psi = ze.square().scale(-0.5) + tape.constant(Array::row(&basis.log_norms())).broadcast(ne, r);
        (alpha.slice_rows(0, ne).log() + log_psi.matmul(tile)).logsumexp_groups(r)
    });

    Unrolled { f, log_lambda, hidden }
}

/// `R × KR` 0/1 matrix copying basis values into every type's group.
fn tile_matrix(k: usize, r: usize) -> Array {
    let mut a = Array::zeros(r, k * r);
    for g in 0..k {
        for i in 0..r {
            a.set(i, g * r + i, 1.0);
        }
    }
    a
}

/// `KR × K` 0/1 matrix summing each type's group.
fn group_matrix(k: usize, r: usize) -> Array {
    let mut a = Array::zeros(k * r, k);
    for g in 0..k {
        for i in 0..r {
            a.set(g * r + i, g, 1.0);
        }
    }
    a
}

/// Negative log-likelihood of the batch plus `η` times the cumulative
/// intensity of its null-type baseline over the same intervals. The
/// baseline rides along as extra rows of the same forward pass.
pub(crate) fn objective<'t>(model: &NppModel, p: &ParamVars<'t>, input: &StepInput, eta: f64) -> Var<'t> {
    let tape = p.h0.tape();
    if eta == 0.0 {
        let (t, z) = input.leaves(tape, &input.flat(), false);
        let u = unroll(model, p, input, t, z, true);
        return event_term(u.f.sum(), z, u.log_lambda);
    }
    let stacked = input.stacked(&input.baseline());
    let (t, z) = stacked.leaves(tape, &stacked.flat(), false);
    let u = unroll(model, p, &stacked, t, z, true);
    let rows = input.rows;
    let weights: Vec<f64> = (0..(input.steps + 1) * 2 * rows)
        .map(|i| if i % (2 * rows) < rows { 1.0 } else { eta })
        .collect();
    let weighted = (u.f.sum_cols() * tape.constant(Array::column(&weights))).sum();
    event_term(weighted, z, u.log_lambda)
}

fn event_term<'t>(compensator: Var<'t>, onehot: Var<'t>, log_lambda: Option<Var<'t>>) -> Var<'t> {
    match log_lambda {
        Some(ll) => compensator - (onehot * ll).sum(),
        None => compensator,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_major_layout() {
        let a = EventSequence::from_pairs(&[(1.0, 0), (2.0, 1)], 3.0);
        let b = EventSequence::from_pairs(&[(0.5, 1)], 4.0);
        let batch = Batch::from_sequences(&[&a, &b], vec![0, 1], 2);
        let s = StepInput::from_batch(&batch);
        assert_eq!(s.times, vec![1.0, 0.5, 2.0, 0.5]);
        assert_eq!(s.mask, vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(s.onehot, vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.flat()[s.onehot_index(1, 0, 1)], 1.0);
        assert_eq!(s.flat()[s.time_index(1, 0)], 2.0);
        let base = s.baseline();
        assert_eq!(base.times, s.times);
        assert!(base.onehot.iter().all(|&v| v == 0.0));
        let st = s.stacked(&base);
        assert_eq!(st.rows, 4);
        assert_eq!(st.times, vec![1.0, 0.5, 1.0, 0.5, 2.0, 0.5, 2.0, 0.5]);
        assert_eq!(st.horizons, vec![3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn group_and_tile_are_adjoint() {
        let t = tile_matrix(3, 2);
        let g = group_matrix(3, 2);
        // tile · group = all-ones R×K
        let p = t.matmul(&g).unwrap();
        assert!(p.data().iter().all(|&v| v == 1.0));
    }
}
