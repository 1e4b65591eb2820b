use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Quantile of the chi-square distribution with one degree of freedom,
/// via `q(level) = z((1 + level) / 2)^2`.
pub fn chi2_1_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "chi-square level must lie in (0, 1), got {level}"
        )));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("valid parameters");
    let z = std_normal.inverse_cdf(0.5 * (1.0 + level));
    Ok(z * z)
}
