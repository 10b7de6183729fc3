//! Comparison methods: two-step exponential-twisting IS for the Gaussian credit
//! model (mean shift of the factors plus a per-scenario twist of the default
//! probabilities), and plain conditional Monte Carlo for the t-copula model.

use std::time::Instant;

use log::warn;

use crate::error::{Result, SisError};
use crate::estimators::{mean_and_variance, EstimatorResult};
use crate::models::{GaussianCreditModel, TCopulaCreditModel};
use crate::rng::{std_normal_pdf, PointSource};

const TWIST_MAX_ITER: usize = 100;
const TWIST_TOL: f64 = 1e-9;
const BFGS_MAX_ITER: usize = 200;
const BFGS_GTOL: f64 = 1e-6;

/// Exponentially twisted default probabilities for one factor scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Twist {
    /// Twist parameter θ ≥ 0.
    pub theta: f64,
    /// `q_k = p_k e^{θc_k} / (1 + p_k(e^{θc_k} − 1))`.
    pub q: Vec<f64>,
    /// Cumulant `ψ(θ) = Σ ln(1 + p_k(e^{θc_k} − 1))`; the likelihood ratio is `exp(ψ − θL)`.
    pub psi: f64,
}

/// `ln(1 + p(e^x − 1))` without overflow for large `x`.
fn log1p_twist(p: f64, x: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else if x > 0.0 {
        // ln(p e^x + 1 − p) = x + ln(p + (1 − p) e^{−x}).
        x + (p + (1.0 - p) * (-x).exp()).ln()
    } else {
        (p * x.exp_m1()).ln_1p()
    }
}

#[inline]
fn twisted_probability(p: f64, x: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        1.0 / (1.0 + (1.0 - p) / p * (-x).exp())
    }
}

/// Solves `Σ c_k q_k(θ) = l` for θ ≥ 0; θ = 0 when `Σ c_k p_k ≥ l` already.
pub fn gl_twist(p: &[f64], c: &[f64], l: f64) -> Result<Twist> {
    if p.len() != c.len() {
        return Err(SisError::invalid("p and c must have equal length"));
    }
    let total: f64 = c.iter().sum();
    if !(l < total) {
        return Err(SisError::invalid(format!(
            "threshold {l} is not below the total exposure {total}"
        )));
    }
    let mean = |theta: f64| -> (f64, f64) {
        let mut m = 0.0;
        let mut dm = 0.0;
        for (&pk, &ck) in p.iter().zip(c) {
            let q = twisted_probability(pk, theta * ck);
            m += ck * q;
            dm += ck * ck * q * (1.0 - q);
        }
        (m, dm)
    };
    let finish = |theta: f64| Twist {
        theta,
        q: p
            .iter()
            .zip(c)
            .map(|(&pk, &ck)| twisted_probability(pk, theta * ck))
            .collect(),
        psi: p.iter().zip(c).map(|(&pk, &ck)| log1p_twist(pk, theta * ck)).sum(),
    };
    if mean(0.0).0 >= l {
        return Ok(finish(0.0));
    }
    // f(θ) = mean(θ) − l is increasing; keep a bracket [lo, hi] with f(lo) < 0 < f(hi).
    let mut lo = 0.0;
    let mut hi = 1.0;
    while mean(hi).0 <= l {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(SisError::CalibrationFailed(
                "twist parameter could not be bracketed".into(),
            ));
        }
    }
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..TWIST_MAX_ITER {
        let (m, dm) = mean(theta);
        let f = m - l;
        if f.abs() <= TWIST_TOL {
            return Ok(finish(theta));
        }
        if f < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let newton = theta - f / dm;
        theta = if dm > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            return Ok(finish(theta));
        }
    }
    Err(SisError::CalibrationFailed(format!(
        "twist Newton iteration did not converge in {TWIST_MAX_ITER} steps"
    )))
}

/// Log of the conditional tail bound `F_l(z) = ψ(θ(z), z) − θ(z) l` and its gradient.
fn tail_bound(model: &GaussianCreditModel, l: f64, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let pf = model.portfolio();
    let c = pf.exposures();
    let b = pf.idiosyncratic();
    let x = model.thresholds();
    let p = model.conditional_default_probabilities(z);
    let tw = gl_twist(&p, c, l)?;
    let value = tw.psi - tw.theta * l;
    let mut grad = vec![0.0; z.len()];
    if tw.theta > 0.0 {
        // Envelope theorem: θ is stationary, so only ∂ψ/∂p_k · ∂p_k/∂z contributes.
        for k in 0..pf.obligors() {
            if b[k] == 0.0 || p[k] == 0.0 && !x[k].is_finite() {
                continue;
            }
            let e = (tw.theta * c[k]).exp_m1();
            let dpsi_dp = if e.is_finite() {
                e / (1.0 + p[k] * e)
            } else {
                1.0 / p[k]
            };
            let a = pf.loadings(k);
            let s: f64 = a.iter().zip(z).map(|(a, z)| a * z).sum();
            let dens = std_normal_pdf((s - x[k]) / b[k]) / b[k];
            let scale = dpsi_dp * dens;
            if scale.is_finite() {
                for (g, &aj) in grad.iter_mut().zip(a) {
                    *g += scale * aj;
                }
            }
        }
    }
    Ok((value, grad))
}

/// Factor mean shift `μ = argmax_z F_l(z) − ½|z|²` (tail-bound approximation), found
/// by BFGS from `z = 0`. When the optimizer fails, `fallback` is returned with a
/// warning if given.
pub fn gl_mean_shift(
    model: &GaussianCreditModel,
    l: f64,
    fallback: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let d = model.portfolio().factors();
    match bfgs_mean_shift(model, l, d) {
        Ok(mu) => Ok(mu),
        Err(e) => match fallback {
            Some(f) if f.len() == d => {
                warn!("mean-shift optimization failed ({e}); using the index-based shift");
                Ok(f.to_vec())
            }
            _ => Err(e),
        },
    }
}

fn bfgs_mean_shift(model: &GaussianCreditModel, l: f64, d: usize) -> Result<Vec<f64>> {
    // Minimize J(z) = ½|z|² − F_l(z).
    let objective = |z: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (f, gf) = tail_bound(model, l, z)?;
        let j = 0.5 * z.iter().map(|v| v * v).sum::<f64>() - f;
        let g = z.iter().zip(&gf).map(|(z, g)| z - g).collect();
        Ok((j, g))
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut z = vec![0.0; d];
    let (mut j, mut g) = objective(&z)?;
    let mut h = vec![vec![0.0; d]; d];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..BFGS_MAX_ITER {
        if dot(&g, &g).sqrt() <= BFGS_GTOL {
            return Ok(z);
        }
        let mut dir: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            // Not a descent direction: restart from steepest descent.
            for (i, row) in h.iter_mut().enumerate() {
                row.iter_mut().for_each(|v| *v = 0.0);
                row[i] = 1.0;
            }
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = z.iter().zip(&dir).map(|(z, p)| z + step * p).collect();
            if let Ok((jt, gt)) = objective(&trial) {
                if jt.is_finite() && jt <= j + 1e-4 * step * slope {
                    accepted = Some((trial, jt, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((zn, jn, gn)) = accepted else {
            if dot(&g, &g).sqrt() <= 1e3 * BFGS_GTOL {
                return Ok(z);
            }
            return Err(SisError::CalibrationFailed("mean-shift line search failed".into()));
        };
        let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            let hy: Vec<f64> = h.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..d {
                for k in 0..d {
                    h[i][k] += (sy + yhy) * s[i] * s[k] / (sy * sy)
                        - (hy[i] * s[k] + s[i] * hy[k]) / sy;
                }
            }
        }
        z = zn;
        j = jn;
        g = gn;
    }
    if dot(&g, &g).sqrt() <= 1e3 * BFGS_GTOL {
        Ok(z)
    } else {
        Err(SisError::CalibrationFailed(format!(
            "mean-shift BFGS did not converge in {BFGS_MAX_ITER} iterations"
        )))
    }
}

/// Two-step IS estimate of `P(L > l)`: `Z ~ N(μ, I)`, defaults drawn with the twisted
/// probabilities `q_k(θ(Z), Z)`, weight `exp(−μᵀZ + ½|μ|²) · exp(ψ − θL)`.
/// Each point consumes `d + h` coordinates.
pub fn gl_is_estimate(
    model: &GaussianCreditModel,
    l: f64,
    mu_shift: &[f64],
    n: usize,
    src: &mut dyn PointSource,
) -> Result<EstimatorResult> {
    let pf = model.portfolio();
    let d = pf.factors();
    if mu_shift.len() != d {
        return Err(SisError::invalid(format!(
            "mean shift has length {}, model has {d} factors",
            mu_shift.len()
        )));
    }
    if n < 2 {
        return Err(SisError::invalid(format!("estimation needs n >= 2, got {n}")));
    }
    let start = Instant::now();
    let c = pf.exposures();
    let half_mu2 = 0.5 * mu_shift.iter().map(|m| m * m).sum::<f64>();
    let mut z = vec![0.0; d];
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        src.start_point();
        src.fill_normals(&mut z);
        let mut lr_z = half_mu2;
        for (zi, mi) in z.iter_mut().zip(mu_shift) {
            *zi += mi;
            lr_z -= mi * *zi;
        }
        let p = model.conditional_default_probabilities(&z);
        let tw = gl_twist(&p, c, l)?;
        let mut loss = 0.0;
        for (qk, ck) in tw.q.iter().zip(c) {
            if src.uniform() <= *qk {
                loss += ck;
            }
        }
        values.push(if loss > l {
            (lr_z + tw.psi - tw.theta * loss).exp()
        } else {
            0.0
        });
    }
    let (mean, var) = mean_and_variance(&values);
    let mut r = EstimatorResult::new("gl-is", mean, var / n as f64, n);
    r.wall_time = start.elapsed().as_secs_f64();
    Ok(r)
}

/// Conditional Monte Carlo: the mean of `S_l(Z, ε)` over independent `(Z, ε)`.
/// Each point consumes `d + h` coordinates.
pub fn ck_cmc_estimate(
    model: &TCopulaCreditModel,
    l: f64,
    n: usize,
    src: &mut dyn PointSource,
) -> Result<EstimatorResult> {
    if model.thresholds().iter().any(|&x| !(x > 0.0)) {
        return Err(SisError::invalid(
            "conditional Monte Carlo needs every default probability below 1/2",
        ));
    }
    if n < 2 {
        return Err(SisError::invalid(format!("estimation needs n >= 2, got {n}")));
    }
    let start = Instant::now();
    let pf = model.portfolio();
    let mut z = vec![0.0; pf.factors()];
    let mut eps = vec![0.0; pf.obligors()];
    let values: Vec<f64> = (0..n)
        .map(|_| {
            src.start_point();
            src.fill_normals(&mut z);
            src.fill_normals(&mut eps);
            model.cmc_survival(&z, &eps, l)
        })
        .collect();
    let (mean, var) = mean_and_variance(&values);
    let mut r = EstimatorResult::new("cmc", mean, var / n as f64, n);
    r.wall_time = start.elapsed().as_secs_f64();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Portfolio, Transformation};
    use crate::rng::PseudoSource;

    #[test]
    fn no_twist_when_mean_already_exceeds_threshold() {
        let tw = gl_twist(&[0.3, 0.5], &[1.0, 2.0], 1.0).unwrap();
        assert_eq!(tw.theta, 0.0);
        assert_eq!(tw.q, vec![0.3, 0.5]);
        assert!(tw.psi.abs() < 1e-15);
    }

    #[test]
    fn single_obligor_twist_is_log_99() {
        let tw = gl_twist(&[0.01], &[1.0], 0.5).unwrap();
        assert!((tw.theta - 99f64.ln()).abs() < 1e-9);
        assert!((tw.q[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn twist_hits_target_mean() {
        let p = [0.01, 0.02, 0.005, 0.03];
        let c = [1.0, 4.0, 9.0, 16.0];
        let tw = gl_twist(&p, &c, 20.0).unwrap();
        let m: f64 = tw.q.iter().zip(&c).map(|(q, c)| q * c).sum();
        assert!((m - 20.0).abs() <= 1e-9);
        assert!(gl_twist(&p, &c, 30.0).is_err());
    }

    #[test]
    fn twisted_likelihood_ratio_is_exact_by_enumeration() {
        let p = [0.05, 0.1, 0.02];
        let c = [1.0, 4.0, 9.0];
        let l = 4.0;
        let tw = gl_twist(&p, &c, l).unwrap();
        assert!(tw.theta > 0.0);
        let (mut plain, mut twisted) = (0.0, 0.0);
        for mask in 0..8u32 {
            let mut pp = 1.0;
            let mut pq = 1.0;
            let mut loss = 0.0;
            for k in 0..3 {
                let y = mask >> k & 1 == 1;
                pp *= if y { p[k] } else { 1.0 - p[k] };
                pq *= if y { tw.q[k] } else { 1.0 - tw.q[k] };
                if y {
                    loss += c[k];
                }
            }
            if loss > l {
                plain += pp;
                twisted += pq * (tw.psi - tw.theta * loss).exp();
            }
        }
        assert!((plain - twisted).abs() < 1e-15, "{plain} vs {twisted}");
    }

    #[test]
    fn zero_threshold_gives_zero_shift() {
        let m = GaussianCreditModel::new(100, 3, 1).unwrap();
        assert_eq!(gl_mean_shift(&m, 0.0, None).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn mean_shift_points_into_the_tail() {
        let m = GaussianCreditModel::new(200, 2, 5).unwrap();
        let mu = gl_mean_shift(&m, 500.0, None).unwrap();
        assert!(mu.iter().all(|&v| v > 0.5), "{mu:?}");
    }

    #[test]
    fn cmc_of_impossible_loss_is_zero() {
        let m = TCopulaCreditModel::new(20, 2, 12.0, 3, Transformation::T2, true).unwrap();
        let total = m.portfolio().total_exposure();
        let mut src = PseudoSource::new(1);
        let r = ck_cmc_estimate(&m, total + 1.0, 100, &mut src).unwrap();
        assert_eq!(r.estimate, 0.0);
    }

    #[test]
    fn gl_is_is_unbiased_on_small_portfolio() {
        let pf = Portfolio::from_parts(
            vec![1.0, 4.0, 9.0],
            vec![0.05, 0.1, 0.02],
            vec![vec![0.5], vec![0.7], vec![0.3]],
        )
        .unwrap();
        let m = GaussianCreditModel::from_portfolio(pf);
        let mu = gl_mean_shift(&m, 4.0, None).unwrap();
        let mut src = PseudoSource::new(11);
        let is = gl_is_estimate(&m, 4.0, &mu, 50_000, &mut src).unwrap();
        let mut src = PseudoSource::new(12);
        let mc = crate::estimators::mc_estimate(&m, 4.0, 50_000, &mut src).unwrap();
        let se = (is.variance_estimate + mc.variance_estimate).sqrt();
        assert!((is.estimate - mc.estimate).abs() < 4.0 * se);
    }
}
