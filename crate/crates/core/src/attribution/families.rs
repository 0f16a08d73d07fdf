//! Randomized smooth test functions with hand-written gradients and an
//! equivalent tape implementation.

use eventgc_autodiff::{sigmoid, Array, Var};
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Target;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Sigmoid,
    Quadratic,
    Cubic,
    Tanh,
    Multilinear,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::Linear, Family::Sigmoid, Family::Quadratic, Family::Cubic, Family::Tanh, Family::Multilinear];

    pub fn name(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Sigmoid => "sigmoid",
            Family::Quadratic => "quadratic",
            Family::Cubic => "cubic",
            Family::Tanh => "tanh",
            Family::Multilinear => "multilinear",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown function family '{s}'")))
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Form {
    /// `w·x + c`
    Linear { w: Vec<f64>, c: f64 },
    /// `Σ a_i σ(b_i x_i + c_i)`
    Sigmoid { a: Vec<f64>, b: Vec<f64>, c: Vec<f64> },
    /// `xᵀQx + w·x`, `Q` symmetric
    Quadratic { q: Vec<Vec<f64>>, w: Vec<f64> },
    /// `Σ c · x_i x_j x_l`
    Cubic { terms: Vec<(f64, [usize; 3])> },
    /// `Σ_j v_j tanh(W_j·x + b_j)`
    Tanh { w: Vec<Vec<f64>>, b: Vec<f64>, v: Vec<f64> },
    /// `Σ c · Π_{i∈S} x_i` over sets of distinct coordinates
    Multilinear { terms: Vec<(f64, Vec<usize>)> },
}

/// A random smooth function with closed-form value and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothFn {
    dim: usize,
    family: Family,
    form: Form,
}

impl SmoothFn {
    /// Random member of `family` on `d` inputs that reads only the
    /// coordinates in `used`.
    pub fn random<R: Rng + ?Sized>(family: Family, d: usize, used: &[usize], rng: &mut R) -> SmoothFn {
        assert!(!used.is_empty() && used.iter().all(|&i| i < d), "used coordinates out of range");
        let on_used = |rng: &mut R, s: f64| {
            let mut v = vec![0.0; d];
            for &i in used {
                v[i] = rng.random_range(-s..s);
            }
            v
        };
        let form = match family {
            Family::Linear => Form::Linear { w: on_used(rng, 1.0), c: rng.random_range(-1.0..1.0) },
            Family::Sigmoid => Form::Sigmoid { a: on_used(rng, 2.0), b: on_used(rng, 2.0), c: on_used(rng, 1.0) },
            Family::Quadratic => {
                let s = 1.0 / used.len() as f64;
                let mut q = vec![vec![0.0; d]; d];
                for (a, &i) in used.iter().enumerate() {
                    for &j in &used[a..] {
                        let v = rng.random_range(-s..s);
                        q[i][j] = v;
                        q[j][i] = v;
                    }
                }
                Form::Quadratic { q, w: on_used(rng, 1.0) }
            }
            Family::Cubic => {
                let terms = (0..2 * used.len())
                    .map(|_| {
                        let idx = [0; 3].map(|_| *used.choose(rng).unwrap());
                        (rng.random_range(-0.5..0.5), idx)
                    })
                    .collect();
                Form::Cubic { terms }
            }
            Family::Tanh => {
                let s = 2.0 / (used.len() as f64).sqrt();
                let w = (0..8).map(|_| on_used(rng, s)).collect();
                let b = (0..8).map(|_| rng.random_range(-0.5..0.5)).collect();
                let v = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                Form::Tanh { w, b, v }
            }
            Family::Multilinear => {
                let terms = (0..used.len())
                    .map(|_| {
                        let size = rng.random_range(1..=used.len().min(3));
                        let mut set: Vec<usize> = used.choose_multiple(rng, size).copied().collect();
                        set.sort_unstable();
                        (rng.random_range(-1.0..1.0), set)
                    })
                    .collect();
                Form::Multilinear { terms }
            }
        };
        SmoothFn { dim: d, family, form }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.form {
            Form::Linear { w, c } => dot(w, x) + c,
            Form::Sigmoid { a, b, c } => (0..x.len()).map(|i| a[i] * sigmoid(b[i] * x[i] + c[i])).sum(),
            Form::Quadratic { q, w } => {
                let qx: f64 = q.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum();
                qx + dot(w, x)
            }
            Form::Cubic { terms } => terms.iter().map(|(c, [i, j, l])| c * x[*i] * x[*j] * x[*l]).sum(),
            Form::Tanh { w, b, v } => (0..v.len()).map(|j| v[j] * (dot(&w[j], x) + b[j]).tanh()).sum(),
            Form::Multilinear { terms } => {
                terms.iter().map(|(c, s)| c * s.iter().map(|&i| x[i]).product::<f64>()).sum()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        match &self.form {
            Form::Linear { w, .. } => w.clone(),
            Form::Sigmoid { a, b, c } => (0..d)
                .map(|i| {
                    let s = sigmoid(b[i] * x[i] + c[i]);
                    a[i] * b[i] * s * (1.0 - s)
                })
                .collect(),
            Form::Quadratic { q, w } => (0..d).map(|i| 2.0 * dot(&q[i], x) + w[i]).collect(),
            Form::Cubic { terms } => {
                let mut g = vec![0.0; d];
                for (c, [i, j, l]) in terms {
                    g[*i] += c * x[*j] * x[*l];
                    g[*j] += c * x[*i] * x[*l];
                    g[*l] += c * x[*i] * x[*j];
                }
                g
            }
            Form::Tanh { w, b, v } => {
                let mut g = vec![0.0; d];
                for j in 0..v.len() {
                    let t = (dot(&w[j], x) + b[j]).tanh();
                    let s = v[j] * (1.0 - t * t);
                    for (gi, wi) in g.iter_mut().zip(&w[j]) {
                        *gi += s * wi;
                    }
                }
                g
            }
            Form::Multilinear { terms } => {
                let mut g = vec![0.0; d];
                for (c, s) in terms {
                    for &i in s {
                        g[i] += c * s.iter().filter(|&&j| j != i).map(|&j| x[j]).product::<f64>();
                    }
                }
                g
            }
        }
    }

    /// The same function expressed with tape operations on a `1×d` row.
    pub fn on_tape<'t>(&self, x: Var<'t>) -> Var<'t> {
        let tape = x.tape();
        let d = x.dims().1;
        let col = |v: &[f64]| tape.constant(Array::column(v));
        let row = |v: &[f64]| tape.constant(Array::row(v));
        let coord = |i: usize| x.slice_cols(i, i + 1);
        let sum_terms = |parts: Vec<Var<'t>>| match parts.split_first() {
            Some((first, rest)) => rest.iter().fold(*first, |acc, &p| acc + p),
            None => tape.scalar(0.0),
        };
        match &self.form {
            Form::Linear { w, c } => x.matmul(col(w)).offset(*c),
            Form::Sigmoid { a, b, c } => ((x * row(b) + row(c)).sigmoid() * row(a)).sum(),
            Form::Quadratic { q, w } => {
                let qm = tape.constant(Array::from_matrix(d, d, q.concat()));
                (x.matmul(qm) * x).sum() + x.matmul(col(w))
            }
            Form::Cubic { terms } => {
                sum_terms(terms.iter().map(|(c, [i, j, l])| (coord(*i) * coord(*j) * coord(*l)).scale(*c)).collect())
            }
            Form::Tanh { w, b, v } => {
                let h = v.len();
                let mut wt = Array::zeros(d, h);
                for (j, wj) in w.iter().enumerate() {
                    for (i, &wij) in wj.iter().enumerate() {
                        wt.set(i, j, wij);
                    }
                }
                (x.matmul(tape.constant(wt)) + row(b)).tanh().matmul(col(v))
            }
            Form::Multilinear { terms } => sum_terms(
                terms
                    .iter()
                    .map(|(c, s)| {
                        let prod = s[1..].iter().fold(coord(s[0]), |acc, &i| acc * coord(i));
                        prod.scale(*c)
                    })
                    .collect(),
            ),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Target for SmoothFn {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64]) -> f64 {
        self.value(x)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.gradient(x)
    }
}
