//! Central finite differences, used to validate analytic gradients.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest mismatch between two gradients, measured relatively where the
/// magnitude exceeds `abs_floor` and absolutely below it. Returns
/// `(worst_relative, worst_absolute)`.
pub fn gradient_mismatch(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> (f64, f64) {
    let mut rel: f64 = 0.0;
    let mut abs: f64 = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        if scale > abs_floor {
            rel = rel.max(diff / scale);
        } else {
            abs = abs.max(diff);
        }
    }
    (rel, abs)
}
