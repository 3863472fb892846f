//! Log-linear regression of per-instant errors.

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Errors at or below this value are treated as numerical noise and dropped.
pub const ERROR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `exp(−s)` for the least-squares slope `s` of `ln(error)` against `k`.
    pub mu_hat: f64,
    pub r_squared: f64,
    /// Number of leading entries above the floor used in the fit.
    pub points: usize,
}

/// Fits `error_k ≈ C·mu_hat^(−k)` to the leading run of errors above
/// [`ERROR_FLOOR`]. A perfectly flat sequence has `r_squared = 1`.
pub fn fit_linear_rate(errors: &[f64]) -> Result<RateFit> {
    if let Some(bad) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(HarnessError::Core(ipg_core::Error::Precondition(format!(
            "errors must be finite and non-negative, got {bad}"
        ))));
    }
    let used: Vec<f64> = errors.iter().copied().take_while(|e| *e > ERROR_FLOOR).collect();
    if used.len() < 3 {
        return Err(HarnessError::Core(ipg_core::Error::InsufficientData(format!(
            "need at least 3 errors above {ERROR_FLOOR:e}, got {}",
            used.len()
        ))));
    }
    let n = used.len() as f64;
    let ys: Vec<f64> = used.iter().map(|e| e.ln()).collect();
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - x_mean;
        let dy = y - y_mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RateFit {
        mu_hat: (-slope).exp(),
        r_squared,
        points: used.len(),
    })
}

/// `err_{k+1} / err_k` over the leading run of errors above `floor`.
pub fn error_ratios(errors: &[f64], floor: f64) -> Vec<f64> {
    let used: Vec<f64> = errors.iter().copied().take_while(|e| *e > floor).collect();
    used.windows(2).map(|w| w[1] / w[0]).collect()
}
