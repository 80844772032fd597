//! Generalized Gaussian model of band-pass coefficients.
//!
//! The density is `β / (2αΓ(1/β)) · exp(-(|x|/α)^β)`. Shape is found by
//! inverting the closed-form kurtosis `Γ(1/β)Γ(5/β)/Γ(3/β)²` against the
//! sample kurtosis with bisection; scale follows from the variance.

use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

pub const BETA_MIN: f64 = 0.1;
pub const BETA_MAX: f64 = 10.0;
/// Bisection stops once the bracket is narrower than this.
pub const BETA_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgdParams {
    pub alpha: f64,
    pub beta: f64,
}

impl GgdParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Argument(format!("GGD scale must be positive, got {alpha}")));
        }
        if !(BETA_MIN..=BETA_MAX).contains(&beta) {
            return Err(Error::Argument(format!(
                "GGD shape {beta} outside [{BETA_MIN}, {BETA_MAX}]"
            )));
        }
        Ok(GgdParams { alpha, beta })
    }

    /// Scale giving variance `variance` at shape `beta`.
    pub fn alpha_for_variance(variance: f64, beta: f64) -> f64 {
        (variance * (ln_gamma(1.0 / beta) - ln_gamma(3.0 / beta)).exp()).sqrt()
    }
}

/// Central-moment summary of a patch of coefficients.
///
/// Variance is the biased estimator `m2` and kurtosis is `m4 / m2²`, both
/// about the patch mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchStats {
    pub n: usize,
    pub variance: f64,
    pub kurtosis: f64,
}

impl PatchStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return PatchStats {
                n,
                variance: 0.0,
                kurtosis: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = samples.iter().sum::<f64>() / nf;
        let (mut m2, mut m4) = (0.0, 0.0);
        for &x in samples {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m4 += d2 * d2;
        }
        m2 /= nf;
        m4 /= nf;
        let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { f64::NAN };
        PatchStats {
            n,
            variance: m2,
            kurtosis,
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if (BETA_MIN..=BETA_MAX).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "GGD shape {beta} outside [{BETA_MIN}, {BETA_MAX}]"
        )))
    }
}

fn kurtosis_unchecked(beta: f64) -> f64 {
    (ln_gamma(1.0 / beta) + ln_gamma(5.0 / beta) - 2.0 * ln_gamma(3.0 / beta)).exp()
}

/// Population kurtosis of a GGD with shape `beta`.
pub fn ggd_kurtosis(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(kurtosis_unchecked(beta))
}

/// Kurtosis-matching fit. Kurtosis outside `[κ(10), κ(0.1)]` clamps the
/// shape to the nearest bound.
pub fn fit_ggd_kurtosis_match(patch: &PatchStats) -> Result<GgdParams> {
    if !(patch.variance > 0.0) || !patch.kurtosis.is_finite() {
        return Err(Error::Degenerate("patch has zero variance".into()));
    }
    let target = patch.kurtosis;
    let beta = if target >= kurtosis_unchecked(BETA_MIN) {
        BETA_MIN
    } else if target <= kurtosis_unchecked(BETA_MAX) {
        BETA_MAX
    } else {
        // kurtosis decreases in beta
        let (mut lo, mut hi) = (BETA_MIN, BETA_MAX);
        while hi - lo >= BETA_TOL {
            let mid = 0.5 * (lo + hi);
            if kurtosis_unchecked(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    GgdParams::new(GgdParams::alpha_for_variance(patch.variance, beta), beta)
}

/// Differential entropy (nats) of a GGD.
pub fn ggd_entropy(p: &GgdParams) -> f64 {
    1.0 / p.beta - (p.beta / (2.0 * p.alpha * gamma(1.0 / p.beta))).ln()
}

/// Entropy weighted by `log(1 + σ²)`; zero-variance patches give 0.
pub fn scaled_entropy(patch: &PatchStats) -> f64 {
    match fit_ggd_kurtosis_match(patch) {
        Ok(params) => (1.0 + patch.variance).ln() * ggd_entropy(&params),
        Err(_) => 0.0,
    }
}
