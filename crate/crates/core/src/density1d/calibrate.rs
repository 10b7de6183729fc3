//! Proposal construction from fitted moment curves: numeric optimal densities,
//! the location-scale approximation and normalizing-constant estimation.

use std::sync::Arc;

use log::warn;

use super::curve::{golden_section, MomentFunction};
use super::{BaseDensity, NumericInverse, ProposalDensity};
use crate::error::{Result, SisError};
use crate::rng::{Draws, PseudoSource};

/// Search range for the location-scale scale parameter.
pub const SIGMA_RANGE: (f64, f64) = (0.25, 4.0);
const SIGMA_GRID: usize = 17;
const SIGMA_TOL: f64 = 1e-3;
const MODE_GRID: usize = 8001;
const MODE_LIMIT: f64 = 40.0;
const HIST_BINS: usize = 64;
const MIN_NC_SAMPLE: usize = 100;

/// `g ∝ √m⁽²⁾(t) f(t)`.
pub fn build_optimal_sis(
    base: Arc<dyn BaseDensity>,
    curve: Arc<dyn MomentFunction>,
) -> Result<ProposalDensity> {
    let inv = NumericInverse::new(
        base.as_ref(),
        Arc::new(move |t| curve.second_moment(t).max(0.0).sqrt()),
    )?;
    Ok(ProposalDensity::numeric(base, inv))
}

/// `g ∝ v(t) f(t)` with `v²` the conditional variance, truncated at the start of
/// the upper plateau (see [`plateau_start`]).
pub fn build_optimal_ssis(
    base: Arc<dyn BaseDensity>,
    curve: Arc<dyn MomentFunction>,
) -> Result<ProposalDensity> {
    let cut = plateau_start(base.as_ref(), curve.as_ref()).unwrap_or(f64::INFINITY);
    let inv = NumericInverse::new(
        base.as_ref(),
        Arc::new(move |t| {
            if t > cut {
                0.0
            } else {
                curve.variance(t).max(0.0).sqrt()
            }
        }),
    )?;
    Ok(ProposalDensity::numeric(base, inv))
}

/// Relative conditional variance `v²/m²` below which Ψ counts as constant.
/// Truncating there and adding the plateau mass back biases the estimate by at
/// most this fraction of the tail term, while bounding the SSIS weights
/// `∝ 1/v` that otherwise explode where `v → 0` with `m > 0`.
pub const PLATEAU_REL_VAR: f64 = 1e-4;

/// The point beyond which `v²(t) ≤ PLATEAU_REL_VAR · m²(t)` holds on the whole
/// scan range, i.e. the conditional mean has settled on its upper plateau.
/// `None` when the curve never settles or settles nowhere above its lower end.
pub fn plateau_start(base: &dyn BaseDensity, curve: &dyn MomentFunction) -> Option<f64> {
    let (sa, sb) = base.support();
    let (a, b) = (sa.max(-MODE_LIMIT), sb.min(MODE_LIMIT));
    let unsettled = |t: f64| {
        let m = curve.mean(t);
        !(m > 0.0 && curve.variance(t) <= PLATEAU_REL_VAR * m * m)
    };
    let step = (b - a) / (MODE_GRID - 1) as f64;
    let last = (0..MODE_GRID).rev().find(|&i| unsettled(a + i as f64 * step))?;
    if last == MODE_GRID - 1 {
        return None;
    }
    // Bisect between the last unsettled grid point and its settled neighbour.
    let (mut lo, mut hi) = (a + last as f64 * step, a + (last + 1) as f64 * step);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if unsettled(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

/// argmax of `ln_shape(t) + ln f(t)`: grid scan then golden-section refinement.
pub fn locate_mode(base: &dyn BaseDensity, ln_shape: &dyn Fn(f64) -> f64) -> Result<f64> {
    let (sa, sb) = base.support();
    let (a, b) = (sa.max(-MODE_LIMIT), sb.min(MODE_LIMIT));
    let neg = |t: f64| {
        let v = ln_shape(t) + base.ln_pdf(t);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let step = (b - a) / (MODE_GRID - 1) as f64;
    let mut best = None;
    let mut best_val = f64::INFINITY;
    for i in 0..MODE_GRID {
        let v = neg(a + i as f64 * step);
        if v < best_val {
            best_val = v;
            best = Some(i);
        }
    }
    let i = best.ok_or_else(|| {
        SisError::NoSignal("optimal density is zero on the whole scan range".into())
    })?;
    let lo = a + i.saturating_sub(1) as f64 * step;
    let hi = a + (i + 1).min(MODE_GRID - 1) as f64 * step;
    let x = golden_section(lo, hi, 1e-12, &neg);
    Ok(if neg(x) <= best_val {
        x
    } else {
        a + i as f64 * step
    })
}

/// Calibrated location-scale proposal parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocationScale {
    pub k: f64,
    pub sigma: f64,
}

/// Finds `k*` as the mode of `√m⁽²⁾ f` and, when `fit_sigma`, `σ*` minimizing the
/// pilot second moment `V(σ) = Σ Ψ(Xᵢ)² wᵢ²` with `T̃ᵢ = k* + σ Tᵢ`.
///
/// `pilot_t` are draws from the base density, reused for every σ. The conditional
/// draws `Xᵢ | T̃ᵢ` come from a source reseeded with `seed` for every σ, so `V`
/// is evaluated with common random numbers.
pub fn calibrate_location_scale(
    base: &dyn BaseDensity,
    curve: &dyn MomentFunction,
    pilot_t: &[f64],
    psi_given: &dyn Fn(f64, &mut dyn Draws) -> f64,
    seed: u64,
    fit_sigma: bool,
) -> Result<LocationScale> {
    let k = locate_mode(base, &|t| 0.5 * curve.second_moment(t).ln())?;
    if !fit_sigma {
        return Ok(LocationScale { k, sigma: 1.0 });
    }
    if pilot_t.is_empty() {
        return Err(SisError::invalid("sigma calibration needs a pilot sample"));
    }
    let v = |log_sigma: f64| -> f64 {
        let sigma = log_sigma.exp();
        let mut src = PseudoSource::new(seed);
        let mut acc = 0.0;
        for &t in pilot_t {
            let tt = k + sigma * t;
            let psi = psi_given(tt, &mut src);
            if psi != 0.0 {
                let lw = log_sigma + base.ln_pdf(tt) - base.ln_pdf(t);
                acc += psi * psi * (2.0 * lw).exp();
            }
        }
        acc
    };
    let (lo, hi) = (SIGMA_RANGE.0.ln(), SIGMA_RANGE.1.ln());
    let step = (hi - lo) / (SIGMA_GRID - 1) as f64;
    let values: Vec<f64> = (0..SIGMA_GRID).map(|i| v(lo + i as f64 * step)).collect();
    if values.iter().all(|x| !x.is_finite()) {
        return Err(SisError::CalibrationFailed(
            "V(sigma) is not finite anywhere on the search range".into(),
        ));
    }
    if values.iter().all(|&x| x == 0.0 || !x.is_finite()) {
        warn!("pilot sample produced no nonzero integrand values; using sigma = 1");
        return Ok(LocationScale { k, sigma: 1.0 });
    }
    // Zero V means the pilot saw no events at that scale, which carries no information.
    let objective = |x: f64| {
        let val = v(x);
        if val > 0.0 && val.is_finite() {
            val
        } else {
            f64::INFINITY
        }
    };
    let ls = refine_sigma(lo, hi, &values, &objective);
    let fit = LocationScale { k, sigma: ls.exp() };
    if heavy_upper_tail(base, curve, fit) {
        warn!(
            "sigma* = {:.3} gives the weights infinite variance in a tail the proposal \
             visits often; confidence intervals will under-cover (a larger sigma or \
             the numeric optimal proposal avoids this)",
            fit.sigma
        );
    }
    Ok(fit)
}

/// Proposal mass past the turning point above which the divergent tail is reached
/// often enough to wreck coverage at practical `n`.
const HEAVY_TAIL_MASS: f64 = 0.05;

/// Whether the second-moment integrand `m f²/g` turns upward above `k` and keeps
/// growing to `k + 12σ`, with the proposal putting more than `HEAVY_TAIL_MASS` of
/// its draws past the turning point. For a normal base and a positive upper
/// plateau of `m`, the second moment diverges for every `σ < 1/√2`, but only
/// scales well below that threshold reach the region at practical sample sizes.
/// The pilot objective cannot see this region.
fn heavy_upper_tail(base: &dyn BaseDensity, curve: &dyn MomentFunction, ls: LocationScale) -> bool {
    const STEPS: usize = 240;
    let top = ls.k + 12.0 * ls.sigma;
    if top >= base.support().1 || curve.mean(top) <= 0.0 {
        return false;
    }
    // ln(f²/g) up to the constant ln σ, with g(t) = f((t − k)/σ)/σ; m is bounded
    // and plateaus, so it does not move the turning point far.
    let r = |t: f64| 2.0 * base.ln_pdf(t) - base.ln_pdf((t - ls.k) / ls.sigma);
    let (mut lowest, mut turn) = (f64::INFINITY, ls.k);
    for i in 0..=STEPS {
        let t = ls.k + 12.0 * ls.sigma * i as f64 / STEPS as f64;
        let v = r(t);
        if !v.is_finite() {
            return false;
        }
        if v < lowest {
            (lowest, turn) = (v, t);
        }
    }
    turn < top && base.survival((turn - ls.k) / ls.sigma) > HEAVY_TAIL_MASS
}

fn refine_sigma(lo: f64, hi: f64, values: &[f64], f: &dyn Fn(f64) -> f64) -> f64 {
    let n = values.len();
    let step = (hi - lo) / (n - 1) as f64;
    let (best, best_val) = values
        .iter()
        .map(|&x| if x > 0.0 && x.is_finite() { x } else { f64::INFINITY })
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, x)| if x < acc.1 { (i, x) } else { acc });
    let a = lo + best.saturating_sub(1) as f64 * step;
    let b = lo + (best + 1).min(n - 1) as f64 * step;
    let x = golden_section(a, b, SIGMA_TOL, f);
    if f(x) <= best_val {
        x
    } else {
        lo + best as f64 * step
    }
}

/// Median-of-ratios estimate of the normalizing constant of `unnormalized`, given a
/// sample drawn from the normalized density: `median ĥ(Tᵢ)/u(Tᵢ)` with `ĥ` a
/// 64-bin histogram density of the sample.
pub fn estimate_normalizing_constant(
    unnormalized: &dyn Fn(f64) -> f64,
    sample: &[f64],
) -> Result<f64> {
    if sample.len() < MIN_NC_SAMPLE {
        return Err(SisError::invalid(format!(
            "normalizing-constant estimation needs at least {MIN_NC_SAMPLE} draws"
        )));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(SisError::CalibrationFailed("sample contains non-finite values".into()));
    }
    let lo = sample.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(SisError::CalibrationFailed("sample is degenerate".into()));
    }
    let width = (hi - lo) / HIST_BINS as f64;
    let bin = |x: f64| (((x - lo) / width) as usize).min(HIST_BINS - 1);
    let mut counts = [0usize; HIST_BINS];
    for &x in sample {
        counts[bin(x)] += 1;
    }
    let n = sample.len() as f64;
    let mut ratios: Vec<f64> = sample
        .iter()
        .filter_map(|&x| {
            let u = unnormalized(x);
            (u > 0.0).then(|| counts[bin(x)] as f64 / (n * width) / u)
        })
        .collect();
    if ratios.is_empty() {
        return Err(SisError::CalibrationFailed(
            "unnormalized density vanishes on the whole sample".into(),
        ));
    }
    ratios.sort_by(|a, b| a.total_cmp(b));
    let m = ratios.len();
    Ok(if m % 2 == 1 {
        ratios[m / 2]
    } else {
        0.5 * (ratios[m / 2 - 1] + ratios[m / 2])
    })
}
