//! Central finite differences, the independent oracle for every
//! hand-derived gradient in the crate.

/// Central-difference gradient of `f` at `point`.
pub fn central_grad<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grads = Vec::with_capacity(point.len());
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let plus = f(&x);
        x[i] = point[i] - step;
        let minus = f(&x);
        x[i] = point[i];
        grads.push((plus - minus) / (2.0 * step));
    }
    grads
}

/// Largest absolute component difference between two gradients.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest component difference relative to the gradient scale.
///
/// The scale floor keeps near-zero gradients from inflating the ratio.
pub fn max_rel_diff(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .chain(analytic)
        .map(|x| x.abs())
        .fold(1e-8, f64::max);
    max_abs_diff(analytic, numeric) / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |v: &[f64]| v[0] * v[0] + 3.0 * v[0] * v[1];
        let g = central_grad(f, &[2.0, -1.0], 1e-6);
        assert!((g[0] - 1.0).abs() < 1e-7);
        assert!((g[1] - 6.0).abs() < 1e-7);
    }

    #[test]
    fn rel_diff_uses_scale_floor() {
        assert!(max_rel_diff(&[0.0], &[1e-12]) < 1e-3);
    }
}
