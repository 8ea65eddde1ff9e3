//! Euclidean projection onto the probability simplex by sort-and-threshold.

use crate::error::{invalid, shape, Result};

/// `argmin_{d∈Δ} ‖d - y‖₂`.
pub fn project_simplex(y: &[f64]) -> Result<Vec<f64>> {
    let mut out = y.to_vec();
    project_simplex_in_place(&mut out, &mut Vec::with_capacity(y.len()))?;
    Ok(out)
}

/// [`project_simplex`] overwriting `y`; `sorted` is scratch space.
pub(crate) fn project_simplex_in_place(y: &mut [f64], sorted: &mut Vec<f64>) -> Result<()> {
    if y.is_empty() {
        return Err(shape("cannot project an empty vector onto the simplex"));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("projection input y[{i}] = {} is not finite", y[i])));
    }
    sorted.clear();
    sorted.extend_from_slice(y);
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    let mut beta = 0.0;
    for (j, &m) in sorted.iter().enumerate() {
        prefix += m;
        let candidate = (prefix - 1.0) / (j + 1) as f64;
        // the first index always qualifies, so beta is always set
        if m - candidate > 0.0 || j == 0 {
            beta = candidate;
        }
    }
    for v in y.iter_mut() {
        *v = (*v - beta).max(0.0);
    }
    Ok(())
}
