//! Sampling from a density known up to a constant, `g ∝ s(t)·f(t)`, by tabulated
//! integration and monotone cubic inversion.
//!
//! The support is cut where `s·f` falls below `1e-14` times its peak; the cut
//! points are located by bisection, so a jump of `s` (an indicator, say) lands
//! exactly on a grid edge. The cumulative table uses Simpson's rule per cell. The
//! CDF is the cubic Hermite interpolant of the table with the exact density as
//! node slopes, limited per cell to stay monotone, and quantiles solve that cubic
//! to round-off, so `cdf(quantile(u)) = u` holds to near machine precision.

use std::fmt;
use std::sync::Arc;

use super::BaseDensity;
use crate::error::{Result, SisError};

/// Number of grid cells.
pub const GRID_CELLS: usize = 4096;
const SCAN_POINTS: usize = 8001;
const SCAN_LIMIT: f64 = 40.0;
const CUTOFF: f64 = 1e-14;

pub type Shape = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Numerically normalized proposal `g(t) = s(t) f(t) / ĉ` on `[lo, hi]`.
#[derive(Clone)]
pub struct NumericInverse {
    shape: Shape,
    lo: f64,
    hi: f64,
    h: f64,
    // CDF at the grid nodes; cdf[0] = 0, cdf[K] = 1.
    cdf: Vec<f64>,
    // Per-cell Hermite slopes (left, right), in CDF units per unit t.
    slopes: Vec<(f64, f64)>,
    // Cells whose Simpson mass is positive; tail cells can carry mass below
    // the CDF's resolution, so gaps are read from here rather than from `cdf`.
    occupied: Vec<bool>,
    mass: f64,
}

impl fmt::Debug for NumericInverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NumericInverse")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("cells", &self.slopes.len())
            .field("mass", &self.mass)
            .finish()
    }
}

impl NumericInverse {
    /// Tabulates `shape(t)·base.pdf(t)`. Negative or NaN shape values are errors.
    pub fn new(base: &dyn BaseDensity, shape: Shape) -> Result<Self> {
        let (sa, sb) = base.support();
        let a = sa.max(-SCAN_LIMIT);
        let b = sb.min(SCAN_LIMIT);
        let density = |t: f64| -> Result<f64> {
            let s = shape(t);
            if s.is_nan() || s < 0.0 {
                return Err(SisError::invalid(format!(
                    "proposal shape must be nonnegative, got {s} at t = {t}"
                )));
            }
            if s == 0.0 {
                return Ok(0.0);
            }
            Ok(s * base.pdf(t))
        };

        let step = (b - a) / (SCAN_POINTS - 1) as f64;
        let mut scan = Vec::with_capacity(SCAN_POINTS);
        for i in 0..SCAN_POINTS {
            let t = a + i as f64 * step;
            scan.push(density(t)?);
        }
        let peak = scan.iter().copied().fold(0.0_f64, f64::max);
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(SisError::NoSignal(
                "proposal density has numerically zero mass".into(),
            ));
        }
        let thr = CUTOFF * peak;
        let first = scan.iter().position(|&v| v > thr).unwrap();
        let last = scan.iter().rposition(|&v| v > thr).unwrap();
        let above = |t: f64| density(t).map(|v| v > thr);

        let lo = if first == 0 {
            a
        } else {
            bisect_edge(a + (first - 1) as f64 * step, a + first as f64 * step, &above)?
        };
        let hi = if last == SCAN_POINTS - 1 {
            b
        } else {
            bisect_edge(a + (last + 1) as f64 * step, a + last as f64 * step, &above)?
        };
        if !(hi > lo) {
            return Err(SisError::NoSignal(
                "proposal density is concentrated on a single point".into(),
            ));
        }

        let k = GRID_CELLS;
        let h = (hi - lo) / k as f64;
        let node = |j: usize| if j == k { hi } else { lo + j as f64 * h };
        let mut values = Vec::with_capacity(k + 1);
        for j in 0..=k {
            values.push(density(node(j))?);
        }
        let mut cum = Vec::with_capacity(k + 1);
        let mut occupied = Vec::with_capacity(k);
        cum.push(0.0);
        // Compensated running sum so the table's last entry is the mass to ~ε.
        let (mut acc, mut carry) = (0.0_f64, 0.0_f64);
        for j in 0..k {
            let mid = density(lo + (j as f64 + 0.5) * h)?;
            let v = h / 6.0 * (values[j] + 4.0 * mid + values[j + 1]);
            occupied.push(v > 0.0);
            let t = acc + v;
            carry += if acc.abs() >= v.abs() { (acc - t) + v } else { (v - t) + acc };
            acc = t;
            cum.push(acc + carry);
        }
        let mass = acc + carry;
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(SisError::NoSignal(
                "proposal density has numerically zero mass".into(),
            ));
        }

        let mut cdf: Vec<f64> = cum.iter().map(|c| c / mass).collect();
        cdf[k] = 1.0;
        let mut slopes = Vec::with_capacity(k);
        for j in 0..k {
            let delta = (cdf[j + 1] - cdf[j]) / h;
            if delta <= 0.0 {
                slopes.push((0.0, 0.0));
                continue;
            }
            let mut d0 = values[j] / mass;
            let mut d1 = values[j + 1] / mass;
            let (al, be) = (d0 / delta, d1 / delta);
            let r2 = al * al + be * be;
            if r2 > 9.0 {
                let tau = 3.0 / r2.sqrt();
                d0 *= tau;
                d1 *= tau;
            }
            slopes.push((d0, d1));
        }

        Ok(Self {
            shape,
            lo,
            hi,
            h,
            cdf,
            slopes,
            occupied,
            mass,
        })
    }

    /// Normalizing constant `ĉ = ∫ s·f` over the tabulated support.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn shape(&self, t: f64) -> f64 {
        (self.shape)(t)
    }

    fn cell_of(&self, t: f64) -> usize {
        (((t - self.lo) / self.h) as usize).min(self.slopes.len() - 1)
    }

    #[inline]
    fn hermite(&self, j: usize, s: f64) -> f64 {
        let (d0, d1) = self.slopes[j];
        let (y0, y1) = (self.cdf[j], self.cdf[j + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        y0 * h00 + self.h * d0 * h10 + y1 * h01 + self.h * d1 * h11
    }

    #[inline]
    fn hermite_slope(&self, j: usize, s: f64) -> f64 {
        // Derivative with respect to s.
        let (d0, d1) = self.slopes[j];
        let (y0, y1) = (self.cdf[j], self.cdf[j + 1]);
        let s2 = s * s;
        (y1 - y0) * (6.0 * s - 6.0 * s2)
            + self.h * d0 * (3.0 * s2 - 4.0 * s + 1.0)
            + self.h * d1 * (3.0 * s2 - 2.0 * s)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if t <= self.lo {
            return 0.0;
        }
        if t >= self.hi {
            return 1.0;
        }
        let j = self.cell_of(t);
        let s = ((t - self.lo) / self.h - j as f64).clamp(0.0, 1.0);
        self.hermite(j, s)
    }

    /// Density `s(t) f(t) / ĉ` on the support, zero elsewhere.
    pub fn pdf(&self, t: f64, base: &dyn BaseDensity) -> f64 {
        if t < self.lo || t > self.hi {
            return 0.0;
        }
        let s = (self.shape)(t);
        if s > 0.0 {
            s * base.pdf(t) / self.mass
        } else {
            0.0
        }
    }

    /// Inverse of [`NumericInverse::cdf`] for u in (0,1).
    pub fn quantile(&self, u: f64) -> f64 {
        if !(u > 0.0) {
            return self.lo;
        }
        if u >= 1.0 {
            return self.hi;
        }
        // First cell whose right CDF value exceeds u; it has positive mass.
        let j = self.cdf.partition_point(|&c| c <= u).saturating_sub(1);
        let j = j.min(self.slopes.len() - 1);
        let (y0, y1) = (self.cdf[j], self.cdf[j + 1]);
        let mut a = 0.0;
        let mut b = 1.0;
        let mut s = ((u - y0) / (y1 - y0)).clamp(0.0, 1.0);
        for _ in 0..60 {
            let r = self.hermite(j, s) - u;
            if r.abs() <= 1e-15 {
                break;
            }
            if r > 0.0 {
                b = s;
            } else {
                a = s;
            }
            let d = self.hermite_slope(j, s);
            let next = if d > 0.0 { s - r / d } else { f64::NAN };
            s = if next > a && next < b {
                next
            } else {
                0.5 * (a + b)
            };
            if b - a < 1e-16 {
                break;
            }
        }
        let t = self.lo + (j as f64 + s) * self.h;
        t.clamp(self.lo, self.hi)
    }

    /// `f(t)/g(t) = ĉ / s(t)`; fails where `g` vanishes but `f` does not.
    #[inline]
    pub fn weight(&self, t: f64, base: &dyn BaseDensity) -> Result<f64> {
        let s = if t < self.lo || t > self.hi {
            0.0
        } else {
            (self.shape)(t)
        };
        if s > 0.0 {
            Ok(self.mass / s)
        } else if base.pdf(t) > 0.0 {
            Err(SisError::SupportViolation { t })
        } else {
            Ok(0.0)
        }
    }

    /// Maximal runs of positive-mass cells as `(start, end, probability)`.
    pub fn segments(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        let k = self.slopes.len();
        for j in 0..=k {
            let positive = j < k && self.occupied[j];
            match (start, positive) {
                (None, true) => start = Some(j),
                (Some(s), false) => {
                    let a = self.lo + s as f64 * self.h;
                    let b = if j == k { self.hi } else { self.lo + j as f64 * self.h };
                    out.push((a, b, self.cdf[j] - self.cdf[s]));
                    start = None;
                }
                _ => {}
            }
        }
        out
    }
}

/// Bisects between `outside` (predicate false) and `inside` (predicate true);
/// returns the final inside point.
fn bisect_edge(
    mut outside: f64,
    mut inside: f64,
    above: &dyn Fn(f64) -> Result<bool>,
) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (outside + inside);
        if mid == outside || mid == inside {
            break;
        }
        if above(mid)? {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    Ok(inside)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density1d::StdNormal;
    use crate::rng::std_normal_survival;

    fn build(shape: impl Fn(f64) -> f64 + Send + Sync + 'static) -> NumericInverse {
        NumericInverse::new(&StdNormal, Arc::new(shape)).unwrap()
    }

    #[test]
    fn unit_shape_recovers_base() {
        let inv = build(|_| 1.0);
        assert!((inv.mass() - 1.0).abs() < 1e-12);
        for t in [-3.0, -0.5, 0.0, 1.2, 4.0] {
            assert!((inv.cdf(t) - StdNormal.cdf(t)).abs() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn exponential_tilt_is_shifted_normal() {
        // e^t φ(t) = e^{1/2} φ(t − 1).
        let inv = build(|t: f64| t.exp());
        assert!((inv.mass() / 0.5_f64.exp() - 1.0).abs() < 1e-10);
        for u in [0.01, 0.3, 0.5, 0.8, 0.99] {
            let expected = 1.0 + StdNormal.quantile(u);
            assert!((inv.quantile(u) - expected).abs() < 1e-8, "u = {u}");
        }
    }

    #[test]
    fn indicator_edge_is_exact() {
        let l = 3.0;
        let inv = build(move |t| if t > l { 1.0 } else { 0.0 });
        assert!(inv.lo() > l && inv.lo() - l < 1e-13);
        let tail = std_normal_survival(l);
        let total = inv.mass() + std_normal_survival(inv.hi());
        assert!((total / tail - 1.0).abs() < 1e-10);
    }

    #[test]
    fn round_trip_on_bimodal_shape() {
        let inv = build(|t: f64| 1.0 + 50.0 * (-(t - 3.0).powi(2) * 8.0).exp());
        let mut worst: f64 = 0.0;
        for i in 1..10_000 {
            let u = i as f64 / 10_000.0;
            worst = worst.max((inv.cdf(inv.quantile(u)) - u).abs());
        }
        assert!(worst < 1e-12, "{worst:e}");
    }

    #[test]
    fn gap_produces_two_segments() {
        let inv = build(|t: f64| if t.abs() < 1.0 { 0.0 } else { 1.0 });
        let segs = inv.segments();
        assert_eq!(segs.len(), 2);
        let p: f64 = segs.iter().map(|s| s.2).sum();
        assert!((p - 1.0).abs() < 1e-12);
        assert!((segs[0].2 - 0.5).abs() < 1e-3);
    }

    #[test]
    fn weight_outside_support_is_a_violation() {
        let inv = build(|t| if t > 0.0 { 1.0 } else { 0.0 });
        assert!(matches!(
            inv.weight(-1.0, &StdNormal),
            Err(SisError::SupportViolation { .. })
        ));
        assert!((inv.weight(1.0, &StdNormal).unwrap() - inv.mass()).abs() < 1e-15);
    }

    #[test]
    fn zero_shape_is_no_signal() {
        let r = NumericInverse::new(&StdNormal, Arc::new(|_| 0.0));
        assert!(matches!(r, Err(SisError::NoSignal(_))));
    }
}
