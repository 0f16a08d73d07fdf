//! Attribution of a scalar function's change from a baseline to its inputs.
//!
//! [`integrated_gradients`] integrates the gradient along the straight path
//! from baseline to input with the midpoint rule; [`shapley`] enumerates
//! all coalitions exactly and serves as the reference method. The
//! [`harness`] checks both against the axioms on random smooth functions.

pub mod families;
pub mod harness;

use eventgc_autodiff::{Array, Tape, Var};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use families::{Family, SmoothFn};
pub use harness::{axiom_harness, AxiomReport, CheckSummary, HarnessConfig, ViolationRecord};

/// Largest input dimension accepted by [`shapley`].
pub const MAX_SHAPLEY_DIM: usize = 20;

/// A differentiable scalar function of a flat input.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

/// Target built on the autodiff tape; `build` maps the `1×d` input row to a
/// `1×1` output.
pub struct TapeTarget<F> {
    dim: usize,
    build: F,
}

impl<F> TapeTarget<F>
where
    F: for<'t> Fn(Var<'t>) -> Var<'t> + Sync,
{
    pub fn new(dim: usize, build: F) -> Self {
        TapeTarget { dim, build }
    }
}

impl<F> Target for TapeTarget<F>
where
    F: for<'t> Fn(Var<'t>) -> Var<'t> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let tape = Tape::new();
        (self.build)(tape.constant(Array::row(x))).item()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let xv = tape.var(Array::row(x));
        let y = (self.build)(xv);
        match tape.backward(y) {
            Ok(g) => g.wrt(xv).into_data(),
            Err(_) => vec![f64::NAN; x.len()],
        }
    }
}

/// `f + g`.
pub struct SumTarget<'a>(pub &'a dyn Target, pub &'a dyn Target);

impl Target for SumTarget<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.0.eval(x) + self.1.eval(x)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.0.grad(x).iter().zip(self.1.grad(x)).map(|(a, b)| a + b).collect()
    }
}

/// `c · f`.
pub struct ScaledTarget<'a>(pub f64, pub &'a dyn Target);

impl Target for ScaledTarget<'_> {
    fn dim(&self) -> usize {
        self.1.dim()
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.0 * self.1.eval(x)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.1.grad(x).into_iter().map(|g| self.0 * g).collect()
    }
}

/// `F(x_1, …, x_n) = Σ_i f(x_i)` over `n` stacked copies of the input.
pub struct BatchSum<'a> {
    pub inner: &'a dyn Target,
    pub copies: usize,
}

impl Target for BatchSum<'_> {
    fn dim(&self) -> usize {
        self.inner.dim() * self.copies
    }
    fn eval(&self, x: &[f64]) -> f64 {
        x.chunks(self.inner.dim()).map(|c| self.inner.eval(c)).sum()
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        x.chunks(self.inner.dim()).flat_map(|c| self.inner.grad(c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    IntegratedGradients { steps: usize },
    Shapley,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::IntegratedGradients { steps } => write!(f, "ig(m={steps})"),
            Method::Shapley => f.write_str("shapley"),
        }
    }
}

pub struct AttributionRequest<'a> {
    pub target: &'a dyn Target,
    pub input: &'a [f64],
    pub baseline: &'a [f64],
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub scores: Vec<f64>,
    /// `f(x) − f(x̄) − Σ scores`.
    pub gap: f64,
}

pub fn attribute(req: &AttributionRequest<'_>) -> Result<Attribution> {
    match req.method {
        Method::IntegratedGradients { steps } => integrated_gradients(req.target, req.input, req.baseline, steps),
        Method::Shapley => shapley(req.target, req.input, req.baseline),
    }
}

fn check_shapes(target: &dyn Target, x: &[f64], baseline: &[f64]) -> Result<()> {
    if x.len() != baseline.len() || x.len() != target.dim() {
        return Err(Error::Precondition(format!(
            "input {} / baseline {} / target {} dimensions differ",
            x.len(),
            baseline.len(),
            target.dim()
        )));
    }
    Ok(())
}

/// `(x − x̄) ⊙ (1/m) Σ_j ∇f(x̄ + α_j (x − x̄))` with `α_j = (j − ½)/m`.
pub fn integrated_gradients(target: &dyn Target, x: &[f64], baseline: &[f64], steps: usize) -> Result<Attribution> {
    check_shapes(target, x, baseline)?;
    if steps == 0 {
        return Err(Error::Config("integrated gradients needs at least one step".into()));
    }
    let diff: Vec<f64> = x.iter().zip(baseline).map(|(a, b)| a - b).collect();
    let grads: Vec<Vec<f64>> = (0..steps)
        .into_par_iter()
        .map(|j| {
            let a = (j as f64 + 0.5) / steps as f64;
            let point: Vec<f64> = baseline.iter().zip(&diff).map(|(b, d)| b + a * d).collect();
            let g = target.grad(&point);
            match g.iter().position(|v| !v.is_finite()) {
                Some(i) => Err(Error::NonFinite(format!("gradient coordinate {i} at path step {j}"))),
                None => Ok(g),
            }
        })
        .collect::<Result<_>>()?;
    // summed in path order so the result does not depend on scheduling
    let mut acc = vec![0.0; x.len()];
    for g in &grads {
        for (s, gi) in acc.iter_mut().zip(g) {
            *s += gi;
        }
    }
    let scores: Vec<f64> = acc.iter().zip(&diff).map(|(s, d)| d * s / steps as f64).collect();
    let gap = target.eval(x) - target.eval(baseline) - scores.iter().sum::<f64>();
    Ok(Attribution { scores, gap })
}

/// Exact Shapley values of the game `v(U) = f(x_U ⊔ x̄_{Ū})`.
pub fn shapley(target: &dyn Target, x: &[f64], baseline: &[f64]) -> Result<Attribution> {
    check_shapes(target, x, baseline)?;
    let d = x.len();
    if d > MAX_SHAPLEY_DIM {
        return Err(Error::Precondition(format!("exact Shapley supports d ≤ {MAX_SHAPLEY_DIM}, got {d}")));
    }
    let values: Vec<f64> = (0..1usize << d)
        .into_par_iter()
        .map(|mask| {
            let p: Vec<f64> = (0..d).map(|i| if mask >> i & 1 == 1 { x[i] } else { baseline[i] }).collect();
            target.eval(&p)
        })
        .collect();
    // weight of a coalition of size s not containing i: s!(d−s−1)!/d! = 1/(d·C(d−1, s))
    let weights: Vec<f64> = (0..d)
        .map(|s| {
            let mut c = 1.0;
            for j in 0..s {
                c = c * (d - 1 - j) as f64 / (j + 1) as f64;
            }
            1.0 / (d as f64 * c)
        })
        .collect();
    let scores: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|i| {
            let bit = 1usize << i;
            let mut s = 0.0;
            for mask in 0..1usize << d {
                if mask & bit == 0 {
                    s += weights[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
                }
            }
            s
        })
        .collect();
    let gap = values[(1usize << d) - 1] - values[0] - scores.iter().sum::<f64>();
    Ok(Attribution { scores, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use eventgc_autodiff::sigmoid;

    struct Closure<F, G>(usize, F, G);
    impl<F: Fn(&[f64]) -> f64 + Sync, G: Fn(&[f64]) -> Vec<f64> + Sync> Target for Closure<F, G> {
        fn dim(&self) -> usize {
            self.0
        }
        fn eval(&self, x: &[f64]) -> f64 {
            (self.1)(x)
        }
        fn grad(&self, x: &[f64]) -> Vec<f64> {
            (self.2)(x)
        }
    }

    #[test]
    fn linear_is_exact_for_any_steps() {
        let w = [0.5, -2.0, 3.0];
        let f = Closure(3, |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum(), |_: &[f64]| w.to_vec());
        let x = [1.0, 2.0, -1.0];
        let xb = [0.5, 0.0, 1.0];
        for m in [1, 7, 50] {
            let a = integrated_gradients(&f, &x, &xb, m).unwrap();
            assert_eq!(a.scores, vec![0.25, -4.0, -6.0]);
            assert!(a.gap.abs() < 1e-14);
        }
    }

    #[test]
    fn square_completeness() {
        let f = Closure(1, |x: &[f64]| x[0] * x[0], |x: &[f64]| vec![2.0 * x[0]]);
        let a = integrated_gradients(&f, &[1.0], &[0.0], 1000).unwrap();
        assert!((a.scores[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_against_fine_reference() {
        let f = Closure(1, |x: &[f64]| sigmoid(3.0 * x[0]), |x: &[f64]| {
            let s = sigmoid(3.0 * x[0]);
            vec![3.0 * s * (1.0 - s)]
        });
        let reference = integrated_gradients(&f, &[1.0], &[0.0], 100_000).unwrap().scores[0];
        let at = |m| integrated_gradients(&f, &[1.0], &[0.0], m).unwrap().scores[0];
        // midpoint error is h²/24·[g'(1) − g'(0)] ≈ 6.1e-6 at m = 50
        assert!((at(50) - reference).abs() < 1e-5);
        assert!((at(100) - reference).abs() < 2e-6);
        assert!((at(1000) - reference).abs() < 1e-7);
    }

    #[test]
    fn product_splits_evenly() {
        let f = Closure(2, |x: &[f64]| x[0] * x[1], |x: &[f64]| vec![x[1], x[0]]);
        let s = shapley(&f, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(s.scores, vec![0.5, 0.5]);
        assert_eq!(s.gap, 0.0);
    }

    #[test]
    fn unused_coordinate_gets_nothing() {
        let f = Closure(3, |x: &[f64]| (x[0] * x[1]).sin(), |x: &[f64]| {
            let c = (x[0] * x[1]).cos();
            vec![c * x[1], c * x[0], 0.0]
        });
        let x = [0.3, -1.2, 4.0];
        let xb = [1.0, 0.5, -2.0];
        assert_eq!(shapley(&f, &x, &xb).unwrap().scores[2], 0.0);
        assert_eq!(integrated_gradients(&f, &x, &xb, 20).unwrap().scores[2], 0.0);
    }

    #[test]
    fn shapley_matches_permutation_enumeration() {
        // random cubic in 4 variables; oracle averages marginal contributions
        // over all 24 orderings
        let c = [0.7, -1.1, 0.4, 2.0, -0.3, 0.9];
        let f = |x: &[f64]| {
            c[0] * x[0] * x[1] * x[2] + c[1] * x[1] * x[3] + c[2] * x[0].powi(3) + c[3] * x[2] * x[3] * x[0]
                + c[4] * x[3].powi(2) * x[1]
                + c[5] * x[2]
        };
        let t = Closure(4, f, |_: &[f64]| vec![0.0; 4]);
        let x = [0.8, -0.5, 1.3, 0.2];
        let xb = [0.1, 0.4, -0.6, -1.0];
        let got = shapley(&t, &x, &xb).unwrap();
        let mut want = [0.0; 4];
        let mut perms = Vec::new();
        permutations(&mut vec![0, 1, 2, 3], 0, &mut perms);
        for p in &perms {
            let mut cur = xb;
            for &i in p {
                let before = f(&cur);
                cur[i] = x[i];
                want[i] += (f(&cur) - before) / perms.len() as f64;
            }
        }
        for i in 0..4 {
            assert!((got.scores[i] - want[i]).abs() < 1e-12);
        }
        assert!(got.gap.abs() < 1e-12);
    }

    fn permutations(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == v.len() {
            out.push(v.clone());
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permutations(v, k + 1, out);
            v.swap(k, i);
        }
    }

    #[test]
    fn shapley_rejects_large_dimension() {
        let f = Closure(21, |_: &[f64]| 0.0, |_: &[f64]| vec![0.0; 21]);
        assert!(shapley(&f, &[0.0; 21], &[0.0; 21]).is_err());
    }

    #[test]
    fn tape_target_gradient() {
        let t = TapeTarget::new(2, |x| (x.sigmoid() * x).sum());
        let g = t.grad(&[0.3, -0.7]);
        for (i, &x) in [0.3f64, -0.7].iter().enumerate() {
            let s = sigmoid(x);
            assert!((g[i] - (s + x * s * (1.0 - s))).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_zero_steps_and_shape_mismatch() {
        let f = Closure(1, |x: &[f64]| x[0], |_: &[f64]| vec![1.0]);
        assert!(integrated_gradients(&f, &[1.0], &[0.0], 0).is_err());
        assert!(integrated_gradients(&f, &[1.0, 2.0], &[0.0, 0.0], 3).is_err());
    }
}
