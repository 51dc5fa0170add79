//! Composite Simpson quadrature on possibly non-uniform samples.

use alloc::format;

use crate::error::{Error, Result};

/// Integral of the sampled function over `[times[0], times[last]]`.
///
/// Pairs of intervals use the three-point rule on their own spacing; an odd
/// trailing interval uses the three-point rule restricted to it, so the
/// result stays fourth order for smooth integrands.
pub fn simpson(times: &[f64], values: &[f64]) -> Result<f64> {
    check_sampling(times)?;
    if values.len() != times.len() {
        return Err(Error::BadSampling(format!(
            "{} values for {} sample times",
            values.len(),
            times.len()
        )));
    }
    let n = times.len() - 1;
    let mut total = 0.0;
    let mut i = 0;
    while i + 2 <= n {
        let h0 = times[i + 1] - times[i];
        let h1 = times[i + 2] - times[i + 1];
        let hs = h0 + h1;
        total += hs / 6.0
            * ((2.0 - h1 / h0) * values[i]
                + hs * hs / (h0 * h1) * values[i + 1]
                + (2.0 - h0 / h1) * values[i + 2]);
        i += 2;
    }
    if i < n {
        let h0 = times[n - 1] - times[n - 2];
        let h1 = times[n] - times[n - 1];
        let a = -h1 * h1 * h1 / (6.0 * h0 * (h0 + h1));
        let b = h1 * (3.0 * h0 + h1) / (6.0 * h0);
        let c = h1 * (3.0 * h0 + 2.0 * h1) / (6.0 * (h0 + h1));
        total += a * values[n - 2] + b * values[n - 1] + c * values[n];
    }
    Ok(total)
}

/// At least three samples, strictly increasing and finite.
pub fn check_sampling(times: &[f64]) -> Result<()> {
    if times.len() < 3 {
        return Err(Error::BadSampling(format!(
            "need at least 3 samples, got {}",
            times.len()
        )));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::BadSampling("non-finite sample time".into()));
    }
    if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::BadSampling(format!(
            "times not strictly increasing at index {}",
            i + 1
        )));
    }
    Ok(())
}
