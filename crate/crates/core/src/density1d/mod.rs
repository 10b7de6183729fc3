//! One-dimensional densities for the index `T`: base densities, moment-curve
//! fits, proposal construction, numeric inversion and importance weights.

mod calibrate;
mod curve;
mod inverse;

pub use calibrate::{
    build_optimal_sis, build_optimal_ssis, calibrate_location_scale, estimate_normalizing_constant,
    locate_mode, LocationScale, SIGMA_RANGE,
};
pub use curve::{fit_moment_curve, ClosedForm, FitKind, MomentCurve, MomentFunction, Tail};
pub use inverse::NumericInverse;

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SisError};
use crate::rng::{norm_inv, std_normal_cdf, std_normal_ln_pdf, std_normal_pdf, std_normal_survival};

/// Density of the index before importance sampling.
pub trait BaseDensity: Send + Sync + fmt::Debug {
    fn pdf(&self, t: f64) -> f64;

    fn ln_pdf(&self, t: f64) -> f64 {
        self.pdf(t).ln()
    }

    fn cdf(&self, t: f64) -> f64;

    fn survival(&self, t: f64) -> f64 {
        1.0 - self.cdf(t)
    }

    /// F⁻¹(u) for u in (0,1).
    fn quantile(&self, u: f64) -> f64;

    fn support(&self) -> (f64, f64);

    fn mode(&self) -> f64;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StdNormal;

impl BaseDensity for StdNormal {
    #[inline]
    fn pdf(&self, t: f64) -> f64 {
        std_normal_pdf(t)
    }

    #[inline]
    fn ln_pdf(&self, t: f64) -> f64 {
        std_normal_ln_pdf(t)
    }

    fn cdf(&self, t: f64) -> f64 {
        std_normal_cdf(t)
    }

    fn survival(&self, t: f64) -> f64 {
        std_normal_survival(t)
    }

    #[inline]
    fn quantile(&self, u: f64) -> f64 {
        norm_inv(u)
    }

    fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn mode(&self) -> f64 {
        0.0
    }
}

/// Shape of a proposal relative to its base density.
#[derive(Clone, Debug)]
pub enum ProposalKind {
    Identity,
    LocationScale { k: f64, sigma: f64 },
    Numeric(Arc<NumericInverse>),
}

/// A proposal density `g` for the index together with its base `f`.
#[derive(Clone, Debug)]
pub struct ProposalDensity {
    kind: ProposalKind,
    base: Arc<dyn BaseDensity>,
}

impl ProposalDensity {
    pub fn identity(base: Arc<dyn BaseDensity>) -> Self {
        Self {
            kind: ProposalKind::Identity,
            base,
        }
    }

    /// `g(t) = f((t − k)/σ)/σ`.
    pub fn location_scale(base: Arc<dyn BaseDensity>, k: f64, sigma: f64) -> Result<Self> {
        if !k.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SisError::invalid(format!(
                "location-scale proposal needs finite k and sigma > 0, got k = {k}, sigma = {sigma}"
            )));
        }
        Ok(Self {
            kind: ProposalKind::LocationScale { k, sigma },
            base,
        })
    }

    pub fn numeric(base: Arc<dyn BaseDensity>, inverse: NumericInverse) -> Self {
        Self {
            kind: ProposalKind::Numeric(Arc::new(inverse)),
            base,
        }
    }

    pub fn kind(&self) -> &ProposalKind {
        &self.kind
    }

    pub fn base(&self) -> &dyn BaseDensity {
        self.base.as_ref()
    }

    pub fn pdf(&self, t: f64) -> f64 {
        match &self.kind {
            ProposalKind::Identity => self.base.pdf(t),
            ProposalKind::LocationScale { k, sigma } => self.base.pdf((t - k) / sigma) / sigma,
            ProposalKind::Numeric(inv) => inv.pdf(t, self.base.as_ref()),
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match &self.kind {
            ProposalKind::Identity => self.base.cdf(t),
            ProposalKind::LocationScale { k, sigma } => self.base.cdf((t - k) / sigma),
            ProposalKind::Numeric(inv) => inv.cdf(t),
        }
    }

    /// G⁻¹(u) for u in (0,1).
    #[inline]
    pub fn quantile(&self, u: f64) -> f64 {
        match &self.kind {
            ProposalKind::Identity => self.base.quantile(u),
            ProposalKind::LocationScale { k, sigma } => k + sigma * self.base.quantile(u),
            ProposalKind::Numeric(inv) => inv.quantile(u),
        }
    }

    /// Importance weight `f(t)/g(t)`.
    #[inline]
    pub fn weight(&self, t: f64) -> Result<f64> {
        match &self.kind {
            ProposalKind::Identity => Ok(1.0),
            ProposalKind::LocationScale { k, sigma } => {
                let z = (t - k) / sigma;
                Ok((sigma.ln() + self.base.ln_pdf(t) - self.base.ln_pdf(z)).exp())
            }
            ProposalKind::Numeric(inv) => inv.weight(t, self.base.as_ref()),
        }
    }

    /// Right end of the proposal support when it truncates the base support.
    pub fn t_max(&self) -> Option<f64> {
        match &self.kind {
            ProposalKind::Numeric(inv) if inv.hi() < self.base.support().1 => Some(inv.hi()),
            _ => None,
        }
    }

    /// Maximal intervals of positive proposal density with their probabilities.
    pub fn segments(&self) -> Vec<(f64, f64, f64)> {
        match &self.kind {
            ProposalKind::Numeric(inv) => inv.segments(),
            _ => {
                let (a, b) = self.base.support();
                vec![(a, b, 1.0)]
            }
        }
    }

    /// True for proposals built from a numerically normalized density.
    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, ProposalKind::Numeric(_))
    }
}

/// Free-function form of [`ProposalDensity::weight`].
pub fn weight(proposal: &ProposalDensity, t: f64) -> Result<f64> {
    proposal.weight(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal() -> Arc<dyn BaseDensity> {
        Arc::new(StdNormal)
    }

    #[test]
    fn identity_weight_is_one() {
        let g = ProposalDensity::identity(normal());
        for t in [-3.0, 0.0, 2.5, 9.0] {
            assert_eq!(g.weight(t).unwrap(), 1.0);
        }
    }

    #[test]
    fn shifted_normal_weight_matches_closed_form() {
        let c = 1.7;
        let g = ProposalDensity::location_scale(normal(), c, 1.0).unwrap();
        for t in [-2.0, 0.0, c, 4.0] {
            let expected = (-c * t + 0.5 * c * c).exp();
            let w = g.weight(t).unwrap();
            assert!((w / expected - 1.0).abs() < 1e-13, "t = {t}");
        }
        let at_c = StdNormal.pdf(c) / StdNormal.pdf(0.0);
        assert!((g.weight(c).unwrap() / at_c - 1.0).abs() < 1e-13);
    }

    #[test]
    fn scaled_weight_matches_density_ratio() {
        let g = ProposalDensity::location_scale(normal(), 0.5, 2.0).unwrap();
        for t in [-1.0, 0.3, 3.0] {
            let direct = StdNormal.pdf(t) / g.pdf(t);
            assert!((g.weight(t).unwrap() / direct - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn location_scale_quantile_inverts_cdf() {
        let g = ProposalDensity::location_scale(normal(), 3.0, 0.7).unwrap();
        for u in [1e-6, 0.1, 0.5, 0.9, 1.0 - 1e-6] {
            assert!((g.cdf(g.quantile(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(ProposalDensity::location_scale(normal(), 0.0, 0.0).is_err());
        assert!(ProposalDensity::location_scale(normal(), f64::NAN, 1.0).is_err());
    }
}
