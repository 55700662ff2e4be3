//! Central finite differences, used as an independent oracle in tests.

/// `∂f/∂x_i ≈ (f(x + h·e_i) − f(x − h·e_i)) / 2h` for each index in `coords`.
pub fn central_difference(x: &[f64], coords: &[usize], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
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

/// Relative error `|a − n| / max(|a|, |n|)`, or 0 when both magnitudes are
/// below `floor` (both effectively zero).
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}
