//! Monte Carlo, single-index IS (SIS) and stratified single-index IS (SSIS)
//! estimators, their variance estimates and replication.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density1d::ProposalDensity;
use crate::error::{Result, SisError};
use crate::models::{Problem, ProblemModel};
use crate::rng::{derive_seed, stratum_value, two_sided_z, PointSource};
use crate::sum::neumaier;

/// Confidence level of the reported intervals.
pub const CI_LEVEL: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub method: String,
    pub estimate: f64,
    /// Variance of the estimator, i.e. `σ̂²/n`.
    pub variance_estimate: f64,
    pub ci_halfwidth: f64,
    pub n: usize,
    pub debias_added: f64,
    /// Seconds.
    pub wall_time: f64,
}

impl EstimatorResult {
    pub fn new(method: impl Into<String>, estimate: f64, variance_estimate: f64, n: usize) -> Self {
        let variance_estimate = variance_estimate.max(0.0);
        Self {
            method: method.into(),
            estimate,
            variance_estimate,
            ci_halfwidth: two_sided_z(CI_LEVEL) * variance_estimate.sqrt(),
            n,
            debias_added: 0.0,
            wall_time: 0.0,
        }
    }

    fn timed(mut self, start: Instant) -> Self {
        self.wall_time = start.elapsed().as_secs_f64();
        self
    }

    pub fn standard_error(&self) -> f64 {
        self.variance_estimate.sqrt()
    }

    /// `standard_error / estimate`.
    pub fn relative_error(&self) -> f64 {
        self.standard_error() / self.estimate
    }
}

/// Estimates from `B` independent replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub results: Vec<EstimatorResult>,
    pub mean: f64,
    /// Sample variance of the estimates, denominator `B − 1`.
    pub variance: f64,
}

impl ReplicationSummary {
    pub fn from_results(results: Vec<EstimatorResult>) -> Result<Self> {
        let b = results.len();
        if b < 2 {
            return Err(SisError::invalid(format!("replication needs B >= 2, got {b}")));
        }
        let mean = results.iter().map(|r| r.estimate).sum::<f64>() / b as f64;
        let variance = results
            .iter()
            .map(|r| (r.estimate - mean).powi(2))
            .sum::<f64>()
            / (b - 1) as f64;
        Ok(Self {
            results,
            mean,
            variance,
        })
    }

    pub fn b(&self) -> usize {
        self.results.len()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.estimate).collect()
    }

    /// Standard error of `mean`.
    pub fn standard_error(&self) -> f64 {
        (self.variance / self.b() as f64).sqrt()
    }

    /// Replication standard deviation of one estimate relative to the mean.
    pub fn relative_error(&self) -> f64 {
        self.variance.sqrt() / self.mean
    }

    pub fn mean_halfwidth(&self) -> f64 {
        self.results.iter().map(|r| r.ci_halfwidth).sum::<f64>() / self.b() as f64
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(SisError::invalid(format!("estimation needs n >= 2, got {n}")));
    }
    Ok(())
}

/// Sample mean and unbiased sample variance.
pub(crate) fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = neumaier(values.iter().copied()) / n;
    let var = neumaier(values.iter().map(|v| (v - mean).powi(2))) / (n - 1.0);
    (mean, var)
}

/// Crude Monte Carlo: the mean of `n` unconditional draws of Ψ.
pub fn mc_estimate(
    model: &dyn ProblemModel,
    l: f64,
    n: usize,
    src: &mut dyn PointSource,
) -> Result<EstimatorResult> {
    check_n(n)?;
    let start = Instant::now();
    let mut inputs = vec![0.0; model.index_dim()];
    let values: Vec<f64> = (0..n)
        .map(|_| {
            src.start_point();
            model.sample(l, &mut inputs, src).psi
        })
        .collect();
    let (mean, var) = mean_and_variance(&values);
    Ok(EstimatorResult::new("mc", mean, var / n as f64, n).timed(start))
}

/// Options shared by the index-sampling estimators.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IsOptions {
    /// Self-normalize the weights, `Σ Ψw / Σ w`, so an unknown constant in `g` cancels.
    pub self_normalized: bool,
}

/// SIS: `Tᵢ ~ g` by inversion of the first coordinate of each point, `Xᵢ | Tᵢ` from
/// the model, estimate `(1/n) Σ Ψ(Xᵢ) w(Tᵢ)`.
pub fn sis_estimate(
    problem: &Problem<'_>,
    proposal: &ProposalDensity,
    n: usize,
    src: &mut dyn PointSource,
    options: IsOptions,
) -> Result<EstimatorResult> {
    check_n(n)?;
    let start = Instant::now();
    let mut psi = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for _ in 0..n {
        src.start_point();
        let t = proposal.quantile(src.uniform());
        w.push(proposal.weight(t)?);
        psi.push(problem.psi_given(t, src));
    }
    let result = if options.self_normalized {
        let sw = neumaier(w.iter().copied());
        let mu = neumaier(psi.iter().zip(&w).map(|(p, w)| p * w)) / sw;
        let var = neumaier(psi.iter().zip(&w).map(|(p, w)| (w * (p - mu)).powi(2))) / (sw * sw);
        EstimatorResult::new("sis", mu, var, n)
    } else {
        let terms: Vec<f64> = psi.iter().zip(&w).map(|(p, w)| p * w).collect();
        let (mean, var) = mean_and_variance(&terms);
        EstimatorResult::new("sis", mean, var / n as f64, n)
    };
    Ok(result.timed(start))
}

/// SSIS: `Tᵢ = G⁻¹((i − 1 + Uᵢ)/n)`, one draw per equiprobable stratum of `g`, with
/// `Uᵢ` the first coordinate of point i. The variance estimate is the
/// first-difference statistic over the stratum-ordered draws.
pub fn ssis_estimate(
    problem: &Problem<'_>,
    proposal: &ProposalDensity,
    n: usize,
    src: &mut dyn PointSource,
    options: IsOptions,
) -> Result<EstimatorResult> {
    check_n(n)?;
    let start = Instant::now();
    let inv_n = 1.0 / n as f64;
    let mut t = Vec::with_capacity(n);
    let mut psi = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        src.start_point();
        let ti = proposal.quantile(stratum_value(i, src.uniform(), inv_n));
        w.push(proposal.weight(ti)?);
        psi.push(problem.psi_given(ti, src));
        t.push(ti);
    }
    let segments = proposal.segments();
    let sigma2 = if segments.len() > 1 {
        segmented_first_difference_variance(&psi, &w, &t, &segments)?
    } else {
        first_difference_variance(&psi, &w)?
    };
    let result = if options.self_normalized {
        let sw = neumaier(w.iter().copied());
        let mu = neumaier(psi.iter().zip(&w).map(|(p, w)| p * w)) / sw;
        // Delta method. Differences of Ψ − μ̂ equal differences of Ψ, so only the
        // mean weight rescales the statistic.
        let wbar = sw * inv_n;
        EstimatorResult::new("ssis", mu, sigma2 / (wbar * wbar) * inv_n, n)
    } else {
        let mean = neumaier(psi.iter().zip(&w).map(|(p, w)| p * w)) / n as f64;
        EstimatorResult::new("ssis", mean, sigma2 * inv_n, n)
    };
    Ok(result.timed(start))
}

/// `σ̂² = 1/(2(n−1)) Σᵢ rᵢ² w²(Tᵢ)` with `rᵢ = Ψ(X_{i+1}) − Ψ(Xᵢ)`; inputs in stratum order.
pub fn first_difference_variance(psi: &[f64], weights: &[f64]) -> Result<f64> {
    let n = psi.len();
    if n < 2 {
        return Err(SisError::invalid(format!(
            "first-difference variance needs n >= 2, got {n}"
        )));
    }
    if weights.len() != n {
        return Err(SisError::invalid("psi and weights must have equal length"));
    }
    let s = neumaier(
        psi.windows(2)
            .zip(weights)
            .map(|(p, w)| ((p[1] - p[0]) * w).powi(2)),
    );
    Ok(s / (2.0 * (n - 1) as f64))
}

/// First-difference variance computed separately on each interval of positive
/// proposal density and combined with the intervals' probabilities. Differences
/// never straddle a gap, where adjacent strata are not neighbours in `t`.
pub fn segmented_first_difference_variance(
    psi: &[f64],
    weights: &[f64],
    t: &[f64],
    segments: &[(f64, f64, f64)],
) -> Result<f64> {
    if psi.len() < 2 {
        return Err(SisError::invalid("first-difference variance needs n >= 2"));
    }
    if weights.len() != psi.len() || t.len() != psi.len() {
        return Err(SisError::invalid("psi, weights and t must have equal length"));
    }
    let mut total = 0.0;
    let mut begin = 0;
    for (j, &(_, b, prob)) in segments.iter().enumerate() {
        let last = j + 1 == segments.len();
        let end = if last {
            t.len()
        } else {
            begin + t[begin..].partition_point(|&x| x <= b)
        };
        let len = end - begin;
        if len >= 2 {
            total += prob * first_difference_variance(&psi[begin..end], &weights[begin..end])?;
        } else if prob > 0.0 {
            warn!("segment {j} holds {len} draws; its variance contribution is dropped");
        }
        begin = end;
    }
    Ok(total)
}

/// Adds `c · P_f(T > t_max)` for proposals truncated at `t_max`, where `c` is the
/// value the conditional mean plateaus at. No-op without truncation.
pub fn debias(result: &EstimatorResult, proposal: &ProposalDensity, plateau: f64) -> EstimatorResult {
    let mut out = result.clone();
    if let Some(t_max) = proposal.t_max() {
        let added = plateau * proposal.base().survival(t_max);
        out.estimate += added;
        out.debias_added += added;
    }
    out
}

/// Runs `run` for `b` seeds derived from `base_seed`, in parallel.
pub fn replicate<F>(b: usize, base_seed: u64, run: F) -> Result<ReplicationSummary>
where
    F: Fn(u64) -> Result<EstimatorResult> + Sync,
{
    let seeds: Vec<u64> = (0..b as u64).map(|i| derive_seed(base_seed, i)).collect();
    replicate_with_seeds(&seeds, run)
}

/// Runs `run` once per given seed, in parallel; results keep the seed order.
pub fn replicate_with_seeds<F>(seeds: &[u64], run: F) -> Result<ReplicationSummary>
where
    F: Fn(u64) -> Result<EstimatorResult> + Sync,
{
    if seeds.len() < 2 {
        return Err(SisError::invalid(format!(
            "replication needs B >= 2, got {}",
            seeds.len()
        )));
    }
    let results = seeds
        .par_iter()
        .map(|&s| run(s))
        .collect::<Result<Vec<_>>>()?;
    ReplicationSummary::from_results(results)
}
