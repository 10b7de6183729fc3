//! Conditional moment curves `m(t) = E[Ψ | T = t]` and `m⁽²⁾(t) = E[Ψ² | T = t]`
//! fitted from knot-wise pilot means.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};

const MIN_KNOTS: usize = 4;
const IRLS_MAX_ITER: usize = 25;
const IRLS_TOL: f64 = 1e-8;

/// Conditional first and second moments of the integrand given the index.
pub trait MomentFunction: Send + Sync {
    fn mean(&self, t: f64) -> f64;

    fn second_moment(&self, t: f64) -> f64;

    /// `v²(t) = m⁽²⁾(t) − m(t)²`, floored at zero.
    fn variance(&self, t: f64) -> f64 {
        let m = self.mean(t);
        (self.second_moment(t) - m * m).max(0.0)
    }
}

/// Moments given in closed form.
#[derive(Clone)]
pub struct ClosedForm {
    mean: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    second: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ClosedForm {
    pub fn new(
        mean: impl Fn(f64) -> f64 + Send + Sync + 'static,
        second: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            mean: Arc::new(mean),
            second: Arc::new(second),
        }
    }

    /// Moments of an indicator with conditional probability `p(t)`.
    pub fn indicator(p: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let p = Arc::new(p);
        let q = p.clone();
        Self {
            mean: p,
            second: q,
        }
    }
}

impl MomentFunction for ClosedForm {
    fn mean(&self, t: f64) -> f64 {
        (self.mean)(t)
    }

    fn second_moment(&self, t: f64) -> f64 {
        (self.second)(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitKind {
    SmoothingSpline,
    Logistic,
}

impl std::fmt::Display for FitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitKind::SmoothingSpline => "smoothing-spline",
            FitKind::Logistic => "logistic",
        })
    }
}

/// Extension of a spline fit to the left of the first knot with a positive estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    /// Linear continuation clamped at zero.
    #[default]
    Clamp,
    /// Exponential decay matched to the first two positive knots.
    Exponential,
}

#[derive(Clone, Debug)]
enum Fitted {
    Constant(f64),
    Logistic { b0: f64, b1: f64 },
    Spline(Spline),
}

impl Fitted {
    fn eval(&self, t: f64) -> f64 {
        let v = match self {
            Fitted::Constant(c) => *c,
            Fitted::Logistic { b0, b1 } => sigmoid(b0 + b1 * t),
            Fitted::Spline(s) => s.eval(t),
        };
        if v.is_nan() {
            0.0
        } else {
            v.max(0.0)
        }
    }
}

/// Fitted conditional moment curve. Values are clamped to be nonnegative.
#[derive(Clone, Debug)]
pub struct MomentCurve {
    kind: FitKind,
    tail: Tail,
    knots: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    n_knot: usize,
    first: Fitted,
    second: Fitted,
}

/// Fits the moment curve from `samples[j]`, the Ψ values drawn at knot `knots[j]`.
pub fn fit_moment_curve(
    knots: &[f64],
    samples: &[Vec<f64>],
    kind: FitKind,
    tail: Tail,
) -> Result<MomentCurve> {
    if samples.len() != knots.len() {
        return Err(SisError::invalid("one sample vector per knot is required"));
    }
    let n_knot = samples.first().map_or(0, Vec::len);
    if n_knot == 0 || samples.iter().any(|s| s.len() != n_knot) {
        return Err(SisError::invalid(
            "every knot needs the same positive number of samples",
        ));
    }
    let m1: Vec<f64> = samples
        .iter()
        .map(|s| s.iter().sum::<f64>() / n_knot as f64)
        .collect();
    let m2: Vec<f64> = samples
        .iter()
        .map(|s| s.iter().map(|x| x * x).sum::<f64>() / n_knot as f64)
        .collect();
    MomentCurve::from_knot_means(kind, tail, knots.to_vec(), m1, m2, n_knot)
}

impl MomentCurve {
    /// Fits from knot-wise means of Ψ (`m1`) and Ψ² (`m2`) over `n_knot` draws each.
    pub fn from_knot_means(
        kind: FitKind,
        tail: Tail,
        knots: Vec<f64>,
        m1: Vec<f64>,
        m2: Vec<f64>,
        n_knot: usize,
    ) -> Result<Self> {
        if knots.len() < MIN_KNOTS {
            return Err(SisError::invalid(format!(
                "at least {MIN_KNOTS} knots are required, got {}",
                knots.len()
            )));
        }
        if m1.len() != knots.len() || m2.len() != knots.len() {
            return Err(SisError::invalid("knot values must match the knots"));
        }
        if n_knot == 0 {
            return Err(SisError::invalid("n_knot must be at least 1"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(SisError::invalid("knots must be finite and strictly increasing"));
        }
        if m1.iter().chain(&m2).any(|v| !v.is_finite()) {
            return Err(SisError::invalid("knot estimates must be finite"));
        }
        if m2.iter().all(|&v| v == 0.0) {
            return Err(SisError::NoSignal(
                "all knot estimates are zero; widen the knot range".into(),
            ));
        }
        let (first, second) = match kind {
            FitKind::Logistic => {
                let f = fit_logistic(&knots, &m1, n_knot)?;
                (f.clone(), f)
            }
            FitKind::SmoothingSpline => {
                let idx: Vec<usize> = (0..knots.len()).filter(|&j| m2[j] > 0.0).collect();
                if idx.len() < MIN_KNOTS {
                    return Err(SisError::NoSignal(format!(
                        "only {} knots have positive estimates; widen the knot range",
                        idx.len()
                    )));
                }
                let x: Vec<f64> = idx.iter().map(|&j| knots[j]).collect();
                let y2: Vec<f64> = idx.iter().map(|&j| m2[j]).collect();
                let y1: Vec<f64> = idx.iter().map(|&j| m1[j]).collect();
                (
                    Fitted::Spline(Spline::fit(&x, &y1, tail)?),
                    Fitted::Spline(Spline::fit(&x, &y2, tail)?),
                )
            }
        };
        Ok(Self {
            kind,
            tail,
            knots,
            m1,
            m2,
            n_knot,
            first,
            second,
        })
    }

    pub fn kind(&self) -> FitKind {
        self.kind
    }

    pub fn tail(&self) -> Tail {
        self.tail
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot-wise means of Ψ.
    pub fn knot_m1(&self) -> &[f64] {
        &self.m1
    }

    /// Knot-wise means of Ψ².
    pub fn knot_m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn n_knot(&self) -> usize {
        self.n_knot
    }

    /// `(intercept, slope)` of a logistic fit.
    pub fn logistic_coefficients(&self) -> Option<(f64, f64)> {
        match self.first {
            Fitted::Logistic { b0, b1 } => Some((b0, b1)),
            _ => None,
        }
    }

    /// Fitted second moment at the fit's own knots (spline fits only).
    pub fn fitted_m2(&self) -> Option<Vec<f64>> {
        match &self.second {
            Fitted::Spline(s) => Some(s.y.clone()),
            _ => None,
        }
    }
}

impl MomentFunction for MomentCurve {
    fn mean(&self, t: f64) -> f64 {
        self.first.eval(t)
    }

    fn second_moment(&self, t: f64) -> f64 {
        self.second.eval(t)
    }

    fn variance(&self, t: f64) -> f64 {
        match self.kind {
            FitKind::Logistic => {
                let p = self.first.eval(t).min(1.0);
                p * (1.0 - p)
            }
            FitKind::SmoothingSpline => {
                let m = self.mean(t);
                (self.second_moment(t) - m * m).max(0.0)
            }
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binomial logistic regression of knot proportions on the knot location.
fn fit_logistic(t: &[f64], y: &[f64], n_knot: usize) -> Result<Fitted> {
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(SisError::invalid(
            "logistic fit needs knot proportions in [0,1]",
        ));
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(SisError::NoSignal(
            "all knot estimates are zero; widen the knot range".into(),
        ));
    }
    if y.iter().all(|&v| v == 1.0) {
        return Ok(Fitted::Constant(1.0));
    }
    // Standardize t for conditioning.
    let n = t.len() as f64;
    let centre = t.iter().sum::<f64>() / n;
    let scale = (t.iter().map(|x| (x - centre).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = t.iter().map(|x| (x - centre) / scale).collect();
    let w = n_knot as f64;

    let ybar = (y.iter().sum::<f64>() / n).clamp(1e-10, 1.0 - 1e-10);
    let mut b = [(ybar / (1.0 - ybar)).ln(), 0.0];
    for _ in 0..IRLS_MAX_ITER {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&zi, &yi) in z.iter().zip(y) {
            let p = sigmoid(b[0] + b[1] * zi);
            let r = w * (yi - p);
            let v = w * p * (1.0 - p);
            g0 += r;
            g1 += r * zi;
            h00 += v;
            h01 += v * zi;
            h11 += v * zi * zi;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det > 1e-300) || !det.is_finite() {
            break;
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        if !d0.is_finite() || !d1.is_finite() {
            break;
        }
        b[0] += d0;
        b[1] += d1;
        if d0.abs().max(d1.abs()) <= IRLS_TOL * (1.0 + b[0].abs().max(b[1].abs())) {
            break;
        }
    }
    let b1 = b[1] / scale;
    Ok(Fitted::Logistic {
        b0: b[0] - b1 * centre,
        b1,
    })
}

/// Natural cubic smoothing spline with the penalty chosen by generalized cross-validation.
#[derive(Clone, Debug)]
struct Spline {
    x: Vec<f64>,
    // Fitted values and second derivatives at the knots.
    y: Vec<f64>,
    gamma: Vec<f64>,
    tail: Tail,
    left_rate: f64,
}

impl Spline {
    fn fit(x: &[f64], y: &[f64], tail: Tail) -> Result<Self> {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let m = n - 2;
        let mut q = DMatrix::<f64>::zeros(n, m);
        let mut r = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            // Column j corresponds to interior knot j + 1.
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < m {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| SisError::IllConditioned("spline band matrix is singular".into()))?;
        let k = &q * &r_inv * q.transpose();
        let k = (&k + k.transpose()) * 0.5;
        let eig = SymmetricEigen::new(k);
        let d: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        let yv = DVector::from_column_slice(y);
        let ytil = eig.eigenvectors.transpose() * &yv;

        let gcv = |log_lambda: f64| -> f64 {
            let lam = log_lambda.exp();
            let mut rss = 0.0;
            let mut tr = 0.0;
            for (di, yi) in d.iter().zip(ytil.iter()) {
                let s = 1.0 / (1.0 + lam * di);
                rss += ((1.0 - s) * yi).powi(2);
                tr += s;
            }
            let dof = n as f64 - tr;
            if dof < 1e-8 {
                f64::INFINITY
            } else {
                n as f64 * rss / (dof * dof)
            }
        };
        let dmax = d.iter().copied().fold(0.0, f64::max);
        let lambda = if dmax > 0.0 {
            let lo = (1e-10 / dmax).ln();
            let hi = (1e10 / dmax).ln();
            let best = golden_min_on_grid(lo, hi, 121, &gcv);
            best.exp()
        } else {
            0.0
        };
        let shrink = DVector::from_iterator(n, d.iter().map(|di| 1.0 / (1.0 + lambda * di)));
        let fitted = &eig.eigenvectors * ytil.component_mul(&shrink);
        let gamma_inner = &r_inv * (q.transpose() * &fitted);
        let mut gamma = vec![0.0; n];
        gamma[1..n - 1].copy_from_slice(gamma_inner.as_slice());
        let y: Vec<f64> = fitted.iter().copied().collect();
        let left_rate = if y[0] > 0.0 && y[1] > y[0] {
            (y[1] / y[0]).ln() / h[0]
        } else {
            0.0
        };
        Ok(Self {
            x: x.to_vec(),
            y,
            gamma,
            tail,
            left_rate,
        })
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t < self.x[0] {
            return match self.tail {
                Tail::Exponential if self.y[0] > 0.0 => {
                    self.y[0] * (self.left_rate * (t - self.x[0])).exp()
                }
                _ => {
                    let h0 = self.x[1] - self.x[0];
                    let slope = (self.y[1] - self.y[0]) / h0 - h0 * self.gamma[1] / 6.0;
                    self.y[0] + slope * (t - self.x[0])
                }
            };
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.x.partition_point(|&xi| xi <= t) - 1;
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let a = t - x0;
        let b = x1 - t;
        (a * self.y[i + 1] + b * self.y[i]) / h
            - a * b / 6.0 * ((1.0 + a / h) * self.gamma[i + 1] + (1.0 + b / h) * self.gamma[i])
    }
}

/// Minimizes `f` by a grid scan over `[lo, hi]` followed by golden-section refinement.
pub(crate) fn golden_min_on_grid(lo: f64, hi: f64, points: usize, f: &dyn Fn(f64) -> f64) -> f64 {
    let step = (hi - lo) / (points - 1) as f64;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..points {
        let v = f(lo + i as f64 * step);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    if !best_val.is_finite() {
        return lo + best as f64 * step;
    }
    let a = lo + best.saturating_sub(1) as f64 * step;
    let b = lo + (best + 1).min(points - 1) as f64 * step;
    let x = golden_section(a, b, 1e-10 * (1.0 + b.abs()), f);
    if f(x) <= best_val {
        x
    } else {
        lo + best as f64 * step
    }
}

/// Golden-section minimization on `[a, b]` to absolute tolerance `tol`.
pub(crate) fn golden_section(mut a: f64, mut b: f64, tol: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::std_normal_survival;

    fn grid(a: f64, b: f64, m: usize) -> Vec<f64> {
        (0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn constant_data_give_constant_spline() {
        let x = grid(-2.0, 2.0, 20);
        let c = vec![0.37; 20];
        let curve =
            MomentCurve::from_knot_means(FitKind::SmoothingSpline, Tail::Clamp, x, c.clone(), c, 10)
                .unwrap();
        for t in [-5.0, -1.3, 0.0, 0.77, 1.99, 8.0] {
            assert!((curve.second_moment(t) - 0.37).abs() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn spline_reproduces_a_line_and_stays_nonnegative() {
        let x = grid(0.0, 3.0, 20);
        let y: Vec<f64> = x.iter().map(|t| 0.1 + 0.2 * t).collect();
        let curve = MomentCurve::from_knot_means(
            FitKind::SmoothingSpline,
            Tail::Clamp,
            x,
            y.clone(),
            y,
            5,
        )
        .unwrap();
        assert!((curve.second_moment(1.234) - (0.1 + 0.2 * 1.234)).abs() < 1e-9);
        assert_eq!(curve.second_moment(-10.0), 0.0);
    }

    #[test]
    fn exponential_tail_is_positive() {
        let x = grid(0.0, 3.0, 20);
        let y: Vec<f64> = x.iter().map(|t| (0.8 * t).exp() * 1e-3).collect();
        let curve = MomentCurve::from_knot_means(
            FitKind::SmoothingSpline,
            Tail::Exponential,
            x,
            y.clone(),
            y,
            5,
        )
        .unwrap();
        let v = curve.second_moment(-4.0);
        assert!(v > 0.0 && v < 1e-3);
    }

    #[test]
    fn logistic_on_step_data_is_monotone() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let curve =
            MomentCurve::from_knot_means(FitKind::Logistic, Tail::Clamp, x, y.clone(), y, 1)
                .unwrap();
        let vals: Vec<f64> = grid(-1.0, 4.0, 200).iter().map(|&t| curve.mean(t)).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        assert!(vals.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn logistic_recovers_probit_like_curve() {
        // p(t) = Φ̄((l − αt)/s) with α² = 0.7, l = 3, fitted from exact proportions.
        let (alpha, l) = (0.7_f64.sqrt(), 3.0);
        let s = (1.0 - alpha * alpha).sqrt();
        let p = |t: f64| std_normal_survival((l - alpha * t) / s);
        let x = grid(1.0, 7.0, 40);
        let y: Vec<f64> = x.iter().map(|&t| p(t)).collect();
        let curve =
            MomentCurve::from_knot_means(FitKind::Logistic, Tail::Clamp, x.clone(), y.clone(), y, 1000)
                .unwrap();
        for &t in &x {
            assert!((curve.mean(t) - p(t)).abs() < 0.05, "t = {t}");
        }
        let v = curve.variance(3.5);
        let m = curve.mean(3.5);
        assert!((v - m * (1.0 - m)).abs() < 1e-15);
    }

    #[test]
    fn all_zero_is_no_signal() {
        let x = grid(0.0, 1.0, 10);
        let z = vec![0.0; 10];
        for kind in [FitKind::Logistic, FitKind::SmoothingSpline] {
            let r = MomentCurve::from_knot_means(kind, Tail::Clamp, x.clone(), z.clone(), z.clone(), 3);
            assert!(matches!(r, Err(SisError::NoSignal(_))));
        }
    }

    #[test]
    fn all_one_logistic_is_constant() {
        let x = grid(0.0, 1.0, 10);
        let o = vec![1.0; 10];
        let c = MomentCurve::from_knot_means(FitKind::Logistic, Tail::Clamp, x, o.clone(), o, 1)
            .unwrap();
        assert_eq!(c.mean(-100.0), 1.0);
        assert_eq!(c.variance(0.3), 0.0);
    }

    #[test]
    fn too_few_knots_is_invalid() {
        let r = MomentCurve::from_knot_means(
            FitKind::SmoothingSpline,
            Tail::Clamp,
            vec![0.0, 1.0, 2.0],
            vec![1.0; 3],
            vec![1.0; 3],
            1,
        );
        assert!(matches!(r, Err(SisError::InvalidArgument(_))));
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_section(-3.0, 5.0, 1e-10, &|x: f64| (x - 1.25).powi(2));
        assert!((x - 1.25).abs() < 1e-8);
    }
}
