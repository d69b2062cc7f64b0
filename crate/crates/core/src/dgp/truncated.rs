use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::stats::normal_cdf;

const MIN_ACCEPTANCE: f64 = 1e-6;
const MAX_TRIES: usize = 1_000_000;

/// `N(mean, sd²)` conditioned on `[lo, hi]`, by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lo < hi) || !(sd >= 0.0) || !mean.is_finite() {
        return Err(Error::Config(format!(
            "bad truncated normal N({mean}, {sd}²) on [{lo}, {hi}]"
        )));
    }
    if sd == 0.0 {
        return if (lo..=hi).contains(&mean) {
            Ok(mean)
        } else {
            Err(Error::InfeasibleTruncation(0.0))
        };
    }
    let mass = normal_cdf((hi - mean) / sd) - normal_cdf((lo - mean) / sd);
    if mass < MIN_ACCEPTANCE {
        return Err(Error::InfeasibleTruncation(mass));
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + sd * z;
        if (lo..=hi).contains(&x) {
            return Ok(x);
        }
    }
}

/// Bivariate normal with mean `mean` and lower Cholesky factor `chol`
/// (`[[l11, 0], [l21, l22]]`), conditioned on `x ∈ [lo0, hi0]` and
/// `y ∈ [lo1, hi1)`.
pub fn truncated_bvn<R: Rng + ?Sized>(
    mean: [f64; 2],
    chol: [[f64; 2]; 2],
    first: (f64, f64),
    second: (f64, f64),
    rng: &mut R,
) -> Result<[f64; 2]> {
    for _ in 0..MAX_TRIES {
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let x = mean[0] + chol[0][0] * z0;
        let y = mean[1] + chol[1][0] * z0 + chol[1][1] * z1;
        if x >= first.0 && x <= first.1 && y >= second.0 && y < second.1 {
            return Ok([x, y]);
        }
    }
    Err(Error::InfeasibleTruncation(1.0 / MAX_TRIES as f64))
}
