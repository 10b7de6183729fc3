//! End-to-end calibration and estimation for every method tag: direction
//! estimation, knot-wise pilot runs, moment-curve fit, proposal construction and
//! the final estimator run.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{ck_cmc_estimate, gl_is_estimate, gl_mean_shift};
use crate::density1d::{
    build_optimal_sis, build_optimal_ssis, calibrate_location_scale, locate_mode, BaseDensity,
    FitKind, MomentCurve, MomentFunction, ProposalDensity, StdNormal, Tail,
};
use crate::error::{Result, SisError};
use crate::estimators::{
    debias, mc_estimate, sis_estimate, ssis_estimate, EstimatorResult, IsOptions,
};
use crate::models::{
    estimate_direction, GaussianCreditModel, LinearModel, Portfolio, Problem, ProblemModel,
    PsiKind, TCopulaCreditModel, Transformation,
};
use crate::rng::{derive_seed, norm_inv, PseudoSource, SourceKind, UniformSource};

/// Lower and upper tail probability cut off by the default knot range.
const KNOT_TAIL: f64 = 1e-6;
/// Knot count for real-valued integrands.
const SPLINE_KNOTS: usize = 20;

const STREAM_DIRECTION: u64 = 0;
const STREAM_KNOTS: u64 = 1;
const STREAM_SIGMA_T: u64 = 2;
const STREAM_SIGMA_X: u64 = 3;

/// Estimation method tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mc,
    SisStar,
    SsisStar,
    SisMu,
    SsisMu,
    SisMuSigma,
    SsisMuSigma,
    GlIs,
    Cmc,
    CmcSis,
    CmcSsis,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Mc,
        Method::SisStar,
        Method::SsisStar,
        Method::SisMu,
        Method::SsisMu,
        Method::SisMuSigma,
        Method::SsisMuSigma,
        Method::GlIs,
        Method::Cmc,
        Method::CmcSis,
        Method::CmcSsis,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::SisStar => "sis-star",
            Method::SsisStar => "ssis-star",
            Method::SisMu => "sis-mu",
            Method::SsisMu => "ssis-mu",
            Method::SisMuSigma => "sis-mu-sigma",
            Method::SsisMuSigma => "ssis-mu-sigma",
            Method::GlIs => "gl-is",
            Method::Cmc => "cmc",
            Method::CmcSis => "cmc-sis",
            Method::CmcSsis => "cmc-ssis",
        }
    }

    /// Which calibration the method consumes, if any.
    pub fn target(self) -> Option<Target> {
        match self {
            Method::Mc | Method::Cmc => None,
            Method::CmcSis | Method::CmcSsis => Some(Target::Cmc),
            _ => Some(Target::Psi),
        }
    }

    /// True for methods that need the location-scale `σ*`.
    pub fn needs_sigma(self) -> bool {
        matches!(
            self,
            Method::SisMuSigma | Method::SsisMuSigma | Method::CmcSis | Method::CmcSsis
        )
    }

    pub fn stratified(self) -> bool {
        matches!(
            self,
            Method::SsisStar | Method::SsisMu | Method::SsisMuSigma | Method::CmcSsis
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = SisError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| SisError::invalid(format!("unknown method '{s}'")))
    }
}

/// Integrand a calibration is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// The model's own Ψ.
    Psi,
    /// The conditional survival `S_l` of the t-copula model under `T₂`.
    Cmc,
}

/// Model block of an experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Linear {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r_squared: Option<f64>,
    },
    GaussianCredit {
        #[serde(flatten)]
        portfolio: PortfolioConfig,
    },
    TCopula {
        #[serde(flatten)]
        portfolio: PortfolioConfig,
        nu: f64,
        #[serde(default = "default_transformation")]
        transformation: Transformation,
    },
}

fn default_transformation() -> Transformation {
    Transformation::T2
}

/// Either the standard portfolio scheme (`h`, `d`, `loadings_seed`) or explicit
/// `exposures`, `default_probabilities` and `loadings`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PortfolioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default)]
    pub loadings_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exposures: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_probabilities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loadings: Option<Vec<Vec<f64>>>,
}

impl PortfolioConfig {
    pub fn standard(h: usize, d: usize, loadings_seed: u64) -> Self {
        Self {
            h: Some(h),
            d: Some(d),
            loadings_seed,
            ..Self::default()
        }
    }

    pub fn explicit(c: Vec<f64>, p: Vec<f64>, loadings: Vec<Vec<f64>>) -> Self {
        Self {
            exposures: Some(c),
            default_probabilities: Some(p),
            loadings: Some(loadings),
            ..Self::default()
        }
    }

    pub fn build(&self) -> Result<Portfolio> {
        match (&self.exposures, &self.default_probabilities, &self.loadings) {
            (Some(c), Some(p), Some(a)) => {
                if self.h.is_some_and(|h| h != c.len())
                    || self.d.is_some_and(|d| a.first().is_some_and(|r| r.len() != d))
                {
                    return Err(SisError::invalid(
                        "h and d disagree with the explicit portfolio arrays",
                    ));
                }
                Portfolio::from_parts(c.clone(), p.clone(), a.clone())
            }
            (None, None, None) => match (self.h, self.d) {
                (Some(h), Some(d)) => Portfolio::standard(h, d, self.loadings_seed),
                _ => Err(SisError::invalid("portfolio needs h and d")),
            },
            _ => Err(SisError::invalid(
                "explicit portfolios need exposures, default_probabilities and loadings together",
            )),
        }
    }
}

impl ModelConfig {
    pub fn linear(alpha: f64) -> Self {
        ModelConfig::Linear {
            alpha: Some(alpha),
            r_squared: None,
        }
    }

    /// Parses a model block given as a standalone TOML table.
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn build(&self) -> Result<BuiltModel> {
        match self {
            ModelConfig::Linear { alpha, r_squared } => {
                let m = match (alpha, r_squared) {
                    (Some(a), None) => LinearModel::new(*a)?,
                    (None, Some(r2)) => LinearModel::from_r_squared(*r2)?,
                    _ => {
                        return Err(SisError::invalid(
                            "linear model needs exactly one of alpha and r_squared",
                        ))
                    }
                };
                Ok(BuiltModel::Linear(m))
            }
            ModelConfig::GaussianCredit { portfolio } => Ok(BuiltModel::Gaussian(
                GaussianCreditModel::from_portfolio(portfolio.build()?),
            )),
            ModelConfig::TCopula {
                portfolio,
                nu,
                transformation,
            } => {
                let pf = portfolio.build()?;
                let plain = TCopulaCreditModel::from_portfolio(pf.clone(), *nu, *transformation, false)?;
                // CMC is only defined when every threshold is positive; otherwise
                // the cmc methods report the error when requested.
                let cmc = TCopulaCreditModel::from_portfolio(pf, *nu, Transformation::T2, true).ok();
                Ok(BuiltModel::TCopula { plain, cmc })
            }
        }
    }

    /// Hex SHA-256 of the canonical TOML form of this block.
    pub fn hash(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let canonical = self.to_toml()?;
        Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
    }
}

/// A constructed model with the variants needed by the different methods.
#[derive(Clone, Debug)]
pub enum BuiltModel {
    Linear(LinearModel),
    Gaussian(GaussianCreditModel),
    TCopula {
        /// Ψ = 1{L > l} under the configured transformation.
        plain: TCopulaCreditModel,
        /// Ψ = S_l under `T₂`.
        cmc: Option<TCopulaCreditModel>,
    },
}

impl BuiltModel {
    pub fn tag(&self) -> &'static str {
        self.psi_model().tag()
    }

    /// The model with its own integrand Ψ.
    pub fn psi_model(&self) -> &dyn ProblemModel {
        match self {
            BuiltModel::Linear(m) => m,
            BuiltModel::Gaussian(m) => m,
            BuiltModel::TCopula { plain, .. } => plain,
        }
    }

    pub fn target_model(&self, target: Target) -> Result<&dyn ProblemModel> {
        match (target, self) {
            (Target::Psi, _) => Ok(self.psi_model()),
            (Target::Cmc, BuiltModel::TCopula { cmc: Some(m), .. }) => Ok(m),
            (Target::Cmc, BuiltModel::TCopula { cmc: None, .. }) => Err(SisError::invalid(
                "conditional Monte Carlo needs every default probability below 1/2",
            )),
            (Target::Cmc, _) => Err(SisError::invalid(
                "conditional Monte Carlo methods apply to the t-copula model only",
            )),
        }
    }

    /// Rejects method tags that do not apply to this model.
    pub fn check_method(&self, method: Method) -> Result<()> {
        match (method, self) {
            (Method::GlIs, BuiltModel::Gaussian(_)) => Ok(()),
            (Method::GlIs, _) => Err(SisError::invalid(
                "gl-is applies to the gaussian-credit model only",
            )),
            (Method::Cmc, BuiltModel::TCopula { cmc: Some(_), .. }) => Ok(()),
            (Method::Cmc | Method::CmcSis | Method::CmcSsis, _) => {
                self.target_model(Target::Cmc).map(|_| ())
            }
            _ => Ok(()),
        }
    }

    /// Uniform coordinates per point for `method`.
    pub fn point_dimension(&self, method: Method) -> Result<usize> {
        Ok(match method {
            Method::Mc => self.psi_model().unconditional_coords(),
            Method::GlIs | Method::Cmc => match self {
                BuiltModel::Gaussian(m) => m.portfolio().factors() + m.portfolio().obligors(),
                BuiltModel::TCopula { plain, .. } => {
                    plain.portfolio().factors() + plain.portfolio().obligors()
                }
                BuiltModel::Linear(_) => return Err(SisError::invalid("method needs a credit model")),
            },
            _ => 1 + self.target_model(method.target().unwrap_or(Target::Psi))?.conditional_coords(),
        })
    }
}

/// Pilot-run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSettings {
    /// Pilot size for direction estimation and for the `σ` search.
    pub n_pilot: usize,
    /// Number of knots `M`; defaults to `n_pilot` for indicators and 20 otherwise.
    pub knots: Option<usize>,
    /// Draws per knot; defaults to 1 for indicators and `n_pilot / M` otherwise.
    pub n_knot: Option<usize>,
    /// Knot range; defaults to `[F⁻¹(1e-6), F⁻¹(1 − 1e-6)]`.
    pub knot_range: Option<(f64, f64)>,
    pub tail: Tail,
    pub fit_sigma: bool,
    /// Also compute the factor mean shift for `gl-is` (Gaussian credit only).
    pub mean_shift: bool,
}

impl CalibrationSettings {
    pub fn new(n_pilot: usize) -> Self {
        Self {
            n_pilot,
            knots: None,
            n_knot: None,
            knot_range: None,
            tail: Tail::Clamp,
            fit_sigma: true,
            mean_shift: false,
        }
    }
}

/// Result of the calibration stage for one threshold and target.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub l: f64,
    pub target: Target,
    pub beta: Vec<f64>,
    pub curve: Arc<MomentCurve>,
    pub k_star: f64,
    pub sigma_star: Option<f64>,
    pub mu_shift: Option<Vec<f64>>,
    pub calibration_ms: f64,
}

impl Calibration {
    pub fn sis_star_proposal(&self) -> Result<ProposalDensity> {
        build_optimal_sis(base(), self.curve.clone())
    }

    pub fn ssis_star_proposal(&self) -> Result<ProposalDensity> {
        build_optimal_ssis(base(), self.curve.clone())
    }

    pub fn location_scale_proposal(&self, with_sigma: bool) -> Result<ProposalDensity> {
        let sigma = if with_sigma {
            self.sigma_star.ok_or_else(|| {
                SisError::invalid("calibration has no sigma*; recalibrate with fit_sigma")
            })?
        } else {
            1.0
        };
        ProposalDensity::location_scale(base(), self.k_star, sigma)
    }
}

fn base() -> Arc<dyn BaseDensity> {
    Arc::new(StdNormal)
}

/// Default knot grid: `m` equally spaced points on `range`.
pub fn knot_grid(m: usize, range: Option<(f64, f64)>) -> Result<Vec<f64>> {
    let (a, b) = range.unwrap_or((norm_inv(KNOT_TAIL), norm_inv(1.0 - KNOT_TAIL)));
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(SisError::invalid(format!("invalid knot range [{a}, {b}]")));
    }
    if m < 4 {
        return Err(SisError::invalid(format!("at least 4 knots are required, got {m}")));
    }
    let step = (b - a) / (m - 1) as f64;
    Ok((0..m).map(|i| a + i as f64 * step).collect())
}

/// Calibration stage for `target` at threshold `l`: direction, moment curve, `k*`
/// and optionally `σ*` and the factor mean shift.
pub fn calibrate(
    built: &BuiltModel,
    target: Target,
    l: f64,
    settings: &CalibrationSettings,
    seed: u64,
) -> Result<Calibration> {
    let start = Instant::now();
    let model = built.target_model(target)?;
    let n_pilot = settings.n_pilot;
    if n_pilot == 0 {
        return Err(SisError::invalid("n_pilot must be positive"));
    }

    let mut dir_src = PseudoSource::new(derive_seed(seed, STREAM_DIRECTION));
    let beta = estimate_direction(model, l, n_pilot, &mut dir_src)?.beta;
    let problem = Problem::new(model, l, &beta)?;

    let (kind, m_default, n_knot_default) = match model.psi_kind() {
        PsiKind::Indicator => (FitKind::Logistic, n_pilot, 1),
        PsiKind::Real => (
            FitKind::SmoothingSpline,
            SPLINE_KNOTS,
            (n_pilot / SPLINE_KNOTS).max(1),
        ),
    };
    let m = settings.knots.unwrap_or(m_default);
    let n_knot = settings.n_knot.unwrap_or(n_knot_default);
    if n_knot == 0 {
        return Err(SisError::invalid("n_knot must be positive"));
    }
    let knots = knot_grid(m, settings.knot_range)?;
    let mut knot_src = PseudoSource::new(derive_seed(seed, STREAM_KNOTS));
    let samples: Vec<Vec<f64>> = knots
        .iter()
        .map(|&t| (0..n_knot).map(|_| problem.psi_given(t, &mut knot_src)).collect())
        .collect();
    let curve = Arc::new(crate::density1d::fit_moment_curve(
        &knots,
        &samples,
        kind,
        settings.tail,
    )?);

    let (k_star, sigma_star) = if settings.fit_sigma {
        let mut t_src = PseudoSource::new(derive_seed(seed, STREAM_SIGMA_T));
        let pilot_t: Vec<f64> = (0..n_pilot).map(|_| crate::rng::Draws::normal(&mut t_src)).collect();
        let ls = calibrate_location_scale(
            &StdNormal,
            curve.as_ref(),
            &pilot_t,
            &|t, src| problem.psi_given(t, src),
            derive_seed(seed, STREAM_SIGMA_X),
            true,
        )?;
        (ls.k, Some(ls.sigma))
    } else {
        let k = locate_mode(&StdNormal, &|t| 0.5 * curve.second_moment(t).ln())?;
        (k, None)
    };

    let mu_shift = match (settings.mean_shift, built, target) {
        (true, BuiltModel::Gaussian(g), Target::Psi) => {
            let fallback: Vec<f64> = beta.iter().map(|b| k_star * b).collect();
            Some(gl_mean_shift(g, l, Some(&fallback))?)
        }
        _ => None,
    };

    Ok(Calibration {
        l,
        target,
        beta,
        curve,
        k_star,
        sigma_star,
        mu_shift,
        calibration_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Proposal for an index-sampling method.
pub fn proposal_for(method: Method, cal: &Calibration) -> Result<ProposalDensity> {
    match method {
        Method::SisStar => cal.sis_star_proposal(),
        Method::SsisStar => cal.ssis_star_proposal(),
        Method::SisMu | Method::SsisMu => cal.location_scale_proposal(false),
        Method::SisMuSigma | Method::SsisMuSigma | Method::CmcSis | Method::CmcSsis => {
            cal.location_scale_proposal(true)
        }
        other => Err(SisError::invalid(format!("{other} does not use an index proposal"))),
    }
}

/// Prepared estimator: model, method and any calibrated ingredients, reusable
/// across replications.
pub struct Estimator<'a> {
    built: &'a BuiltModel,
    method: Method,
    l: f64,
    calibration: Option<&'a Calibration>,
    proposal: Option<ProposalDensity>,
    options: IsOptions,
}

impl<'a> Estimator<'a> {
    pub fn new(
        built: &'a BuiltModel,
        method: Method,
        l: f64,
        calibration: Option<&'a Calibration>,
        options: IsOptions,
    ) -> Result<Self> {
        built.check_method(method)?;
        let proposal = match method.target() {
            Some(target) if method != Method::GlIs => {
                let cal = calibration
                    .ok_or_else(|| SisError::invalid(format!("{method} needs a calibration")))?;
                if cal.target != target || cal.l != l {
                    return Err(SisError::invalid(format!(
                        "calibration for l = {} ({:?}) does not match {method} at l = {l}",
                        cal.l, cal.target
                    )));
                }
                Some(proposal_for(method, cal)?)
            }
            _ => None,
        };
        if method == Method::GlIs
            && calibration.and_then(|c| c.mu_shift.as_ref()).is_none()
        {
            return Err(SisError::invalid("gl-is needs a calibrated mean shift"));
        }
        Ok(Self {
            built,
            method,
            l,
            calibration,
            proposal,
            options,
        })
    }

    pub fn proposal(&self) -> Option<&ProposalDensity> {
        self.proposal.as_ref()
    }

    /// One estimate with `n` points from a `kind` source seeded with `seed`.
    pub fn run(&self, n: usize, kind: SourceKind, seed: u64) -> Result<EstimatorResult> {
        let dim = self.built.point_dimension(self.method)?;
        let mut src = UniformSource::new(kind, dim, seed)?;
        let start = Instant::now();
        let mut result = match self.method {
            Method::Mc => mc_estimate(self.built.psi_model(), self.l, n, &mut src)?,
            Method::Cmc => match self.built {
                BuiltModel::TCopula { cmc: Some(m), .. } => ck_cmc_estimate(m, self.l, n, &mut src)?,
                _ => unreachable!("checked in Estimator::new"),
            },
            Method::GlIs => match (self.built, self.calibration) {
                (BuiltModel::Gaussian(g), Some(cal)) => {
                    let mu = cal.mu_shift.as_deref().unwrap_or_default();
                    gl_is_estimate(g, self.l, mu, n, &mut src)?
                }
                _ => unreachable!("checked in Estimator::new"),
            },
            method => {
                let cal = self.calibration.expect("checked in Estimator::new");
                let proposal = self.proposal.as_ref().expect("checked in Estimator::new");
                let model = self.built.target_model(cal.target)?;
                let problem = Problem::new(model, self.l, &cal.beta)?;
                let r = if method.stratified() {
                    ssis_estimate(&problem, proposal, n, &mut src, self.options)?
                } else {
                    sis_estimate(&problem, proposal, n, &mut src, self.options)?
                };
                debias(&r, proposal, model.upper_plateau())
            }
        };
        result.method = self.method.tag().to_string();
        result.wall_time = start.elapsed().as_secs_f64();
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert!("sis".parse::<Method>().is_err());
    }

    #[test]
    fn model_hash_is_stable_and_sensitive() {
        let a = ModelConfig::linear(0.9);
        let b = ModelConfig::linear(0.95);
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn linear_calibration_points_into_the_tail() {
        let built = ModelConfig::linear(0.99f64.sqrt()).build().unwrap();
        let mut s = CalibrationSettings::new(2000);
        s.knot_range = Some((3.0, 7.0));
        let cal = calibrate(&built, Target::Psi, 5.0, &s, 1).unwrap();
        assert!((cal.beta[0] - 1.0).abs() < 1e-12);
        assert!(cal.k_star > 4.0 && cal.k_star < 6.0, "{}", cal.k_star);
        let sigma = cal.sigma_star.unwrap();
        assert!(sigma > 0.1 && sigma < 1.0, "{sigma}");
    }

    #[test]
    fn inapplicable_methods_are_rejected() {
        let built = ModelConfig::linear(0.9).build().unwrap();
        assert!(built.check_method(Method::GlIs).is_err());
        assert!(built.check_method(Method::Cmc).is_err());
        assert!(built.check_method(Method::SisMu).is_ok());
    }

    #[test]
    fn explicit_portfolio_requires_all_arrays() {
        let mut p = PortfolioConfig::explicit(vec![1.0], vec![0.01], vec![vec![0.5]]);
        assert!(p.build().is_ok());
        p.loadings = None;
        assert!(p.build().is_err());
    }
}
