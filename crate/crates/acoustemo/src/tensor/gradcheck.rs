//! Central-difference gradient verification.
//!
//! `finite_diff_check` is the standing oracle for every backward rule: it
//! rebuilds the computation on a fresh tape for the analytic gradient and
//! probes the same computation value-wise at x ± h·e. The numeric route never
//! touches the backward pass it is checking.

use super::{NodeId, Result, Tape, Tensor};

/// Max over coordinates of |analytic − numeric| / (|analytic| + 1e-8).
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}

/// Central differences of a scalar-valued function at x, step h per coordinate.
pub fn central_difference_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.data().to_vec();
        let mut minus = x.data().to_vec();
        plus[i] += h;
        minus[i] -= h;
        let fp = f(&Tensor::new(x.dims().to_vec(), plus)?)?;
        let fm = f(&Tensor::new(x.dims().to_vec(), minus)?)?;
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Compare the tape's analytic gradient of `build` (a scalar loss in terms of
/// a single leaf x) against central differences. Returns the max relative
/// error over coordinates.
pub fn finite_diff_check<F>(build: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    assert!(h > 0.0, "finite_diff_check: h must be positive");
    // Analytic route.
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let loss = build(&mut tape, leaf)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(leaf)
        .map(|g| g.to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    // Numeric route: value-only evaluations.
    let eval = |xp: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let l = t.leaf(xp.clone());
        let out = build(&mut t, l)?;
        Ok(t.value(out).item())
    };
    let numeric = central_difference_grad(eval, x, h)?;
    Ok(max_rel_error(&analytic, &numeric))
}
