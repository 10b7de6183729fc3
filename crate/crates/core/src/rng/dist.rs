//! Scalar distribution primitives: standard normal, chi-square, inverse gamma
//! and Student t. `erfc` comes from `libm` (statrs' version is only good to about
//! 1e-11 relative); gamma functions and the t quantile come from `statrs`.

use libm::erfc;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::{gamma_lr, gamma_ur};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use crate::error::{Result, SisError};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn std_normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Φ(x).
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Φ̄(x) = 1 − Φ(x), accurate deep into the upper tail.
pub fn std_normal_survival(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Φ⁻¹(u) for u in the open unit interval.
pub fn std_normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SisError::invalid(format!(
            "normal quantile needs u in (0,1), got {u}"
        )));
    }
    Ok(norm_inv(u))
}

/// Unchecked Φ⁻¹; returns ∓∞ at the endpoints.
#[inline]
pub(crate) fn norm_inv(u: f64) -> f64 {
    if u > 0.5 {
        std_normal_upper_quantile(1.0 - u)
    } else {
        -std_normal_upper_quantile(u)
    }
}

/// Φ⁻¹(1 − p) computed without forming 1 − p.
pub fn std_normal_upper_quantile(p: f64) -> f64 {
    let x = SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() || p >= 0.5 {
        return x;
    }
    // One Halley step on Φ̄(x) = p; the starting point is good to about 1e-11.
    let r = (std_normal_survival(x) - p) / std_normal_pdf(x);
    x + r / (1.0 + 0.5 * x * r)
}

/// P(χ²_ν ≤ x).
pub fn chi_square_cdf(x: f64, nu: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma_lr(0.5 * nu, 0.5 * x)
    }
}

/// P(χ²_ν > x).
pub fn chi_square_survival(x: f64, nu: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        gamma_ur(0.5 * nu, 0.5 * x)
    }
}

pub fn chi_square_quantile(p: f64, nu: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    ChiSquared::new(nu)
        .expect("degrees of freedom must be positive")
        .inverse_cdf(p)
}

/// Survival function of W ~ IG(ν/2, ν/2), using W = ν/S with S ~ χ²_ν.
pub fn inv_gamma_survival(w: f64, nu: f64) -> f64 {
    if w <= 0.0 {
        1.0
    } else {
        chi_square_cdf(nu / w, nu)
    }
}

pub fn inv_gamma_cdf(w: f64, nu: f64) -> f64 {
    if w <= 0.0 {
        0.0
    } else {
        chi_square_survival(nu / w, nu)
    }
}

/// Quantile of W ~ IG(ν/2, ν/2) at level 1 − `upper`, i.e. the w with P(W > w) = upper.
pub fn inv_gamma_upper_quantile(upper: f64, nu: f64) -> f64 {
    nu / chi_square_quantile(upper, nu)
}

/// Quantile of the standard Student t distribution with ν degrees of freedom.
pub fn student_t_quantile(p: f64, nu: f64) -> f64 {
    StudentsT::new(0.0, 1.0, nu)
        .expect("degrees of freedom must be positive")
        .inverse_cdf(p)
}

/// z such that a two-sided normal interval of the given level has half-width z·sd.
pub fn two_sided_z(level: f64) -> f64 {
    std_normal_upper_quantile(0.5 * (1.0 - level))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Values frozen from mpmath at 50 digits: ncdf(-3), ncdf(-5).
    const SF_3: f64 = 1.349_898_031_630_094_5e-3;
    const SF_5: f64 = 2.866_515_718_791_939e-7;

    #[test]
    fn median_is_zero() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn survival_matches_reference() {
        assert!((std_normal_survival(3.0) - SF_3).abs() < 1e-7);
        assert!((std_normal_survival(5.0) - SF_5).abs() < 1e-11);
        assert!((std_normal_survival(5.0) - SF_5).abs() / SF_5 < 1e-12);
    }

    #[test]
    fn quantile_round_trip() {
        let mut worst: f64 = 0.0;
        let mut u = 1e-10;
        while u < 1.0 - 1e-10 {
            let back = std_normal_cdf(std_normal_quantile(u).unwrap());
            worst = worst.max((back - u).abs());
            u += 1.3e-4;
        }
        for k in 1..=100 {
            let u = 10f64.powf(-(k as f64) / 10.0);
            for v in [u, 1.0 - u] {
                if v > 1e-10 && v < 1.0 - 1e-10 {
                    worst = worst.max((std_normal_cdf(std_normal_quantile(v).unwrap()) - v).abs());
                }
            }
        }
        assert!(worst <= 1e-12, "worst round trip error {worst:e}");
    }

    #[test]
    fn quantile_rejects_closed_endpoints() {
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn upper_quantile_is_accurate_for_tiny_tails() {
        let x = std_normal_upper_quantile(1e-20);
        assert!((std_normal_survival(x) / 1e-20 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn inverse_gamma_mean_and_quantile() {
        // Median of W is ν / median(χ²_ν).
        let nu = 5.0;
        let w = inv_gamma_upper_quantile(0.5, nu);
        assert!((inv_gamma_survival(w, nu) - 0.5).abs() < 1e-10);
        assert!((inv_gamma_cdf(w, nu) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn z_for_95_percent() {
        assert!((two_sided_z(0.95) - 1.959_963_984_540_054).abs() < 1e-12);
    }
}
