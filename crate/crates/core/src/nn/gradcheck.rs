//! Central finite differences for checking analytic gradients.

/// Numerical gradient of `f` at `params`, one coordinate at a time:
/// (f(p + h e_i) - f(p - h e_i)) / 2h.
pub fn central_difference<F>(params: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / (||a|| + ||b||)`, or 0 when both are (near) zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = central_difference(&[1.0, -2.0], 1e-5, |p| p[0] * p[0] + 3.0 * p[1]);
        assert!(relative_error(&g, &[2.0, 3.0]) < 1e-9);
    }

    #[test]
    fn zero_vectors_have_zero_error() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!(relative_error(&[1.0], &[-1.0]) > 0.99);
    }
}
