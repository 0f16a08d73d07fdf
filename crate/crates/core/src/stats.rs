//! Small numerical helpers shared by the generators and the test suites.

use crate::seqdata::Matrix;

/// Spectral radius of a nonnegative square matrix by power iteration on
/// `A + I` (the shift makes the Perron root the unique eigenvalue of largest
/// modulus).
pub fn spectral_radius(m: &Matrix) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut estimate = f64::NAN;
    for _ in 0..1_000_000 {
        for i in 0..n {
            y[i] = x[i] + m[i].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm - 1.0;
        for i in 0..n {
            x[i] = y[i] / norm;
        }
        if (next - estimate).abs() <= 1e-15 * next.abs().max(1e-300) {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF. Returns the
/// statistic `D` and its asymptotic p-value (Stephens' small-sample
/// correction).
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn exp1_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x).exp_m1()
    }
}

/// Linear-interpolated quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    let mut xs = data.to_vec();
    xs.sort_by(f64::total_cmp);
    if xs.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
}

pub fn median(data: &[f64]) -> f64 {
    quantile(data, 0.5)
}
