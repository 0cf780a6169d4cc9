//! Finite-difference gradient oracle.
//!
//! The backward rules in the tape are validated against central
//! differences: for a scalar function `f` and step `h`,
//!
//! ```text
//! ∂f/∂xᵢ ≈ (f(x + h·eᵢ) − f(x − h·eᵢ)) / (2h)
//! ```
//!
//! which is accurate to `O(h²)` and — crucially — computed without ever
//! consulting the backward pass, so it is an independent witness. Errors
//! are reported relatively: `|a − n| / max(1, |a|, |n|)`, which behaves
//! like an absolute error near zero and a relative one for large
//! gradients.

/// Central-difference gradient of `f` at `x` with step `h`.
///
/// `f` is called `2·len(x)` times; `x` is restored between calls, so `f`
/// may capture it immutably elsewhere.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// `|a − n| / max(1, |a|, |n|)` — relative error with an absolute floor.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Worst [`rel_error`] between an analytic gradient and its oracle.
///
/// # Panics
///
/// When the two slices have different lengths.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient length mismatch: {} vs {}",
        analytic.len(),
        numeric.len()
    );
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_matches_a_closed_form_polynomial() {
        // f(x, y) = x²y + y³; ∂x = 2xy, ∂y = x² + 3y².
        let f = |v: &[f64]| v[0] * v[0] * v[1] + v[1].powi(3);
        let x = [1.5, -2.0];
        let g = fd_gradient(f, &x, 1e-5);
        let exact = [2.0 * 1.5 * -2.0, 1.5 * 1.5 + 3.0 * 4.0];
        assert!(max_rel_error(&exact, &g) < 1e-9);
    }

    #[test]
    fn rel_error_floors_at_one_near_zero() {
        assert_eq!(rel_error(0.0, 1e-9), 1e-9);
        assert_eq!(rel_error(200.0, 100.0), 0.5);
    }

    #[test]
    fn probe_vector_is_restored_between_calls() {
        let x = [1.0, 2.0, 3.0];
        let mut seen = Vec::new();
        let _ = fd_gradient(
            |v: &[f64]| {
                seen.push(v.to_vec());
                v.iter().sum()
            },
            &x,
            0.5,
        );
        // Every probe differs from x in exactly one coordinate.
        for probe in &seen {
            let diffs = probe
                .iter()
                .zip(&x)
                .filter(|(a, b)| (*a - *b).abs() > 1e-12)
                .count();
            assert_eq!(diffs, 1);
        }
    }
}
