//! Problem models: the linear toy model and the two credit-portfolio models.
//!
//! A model exposes an integrand Ψ at a loss threshold `l`, unconditional draws of
//! its inputs, and draws of the inputs conditional on the index `T = βᵀX_c = t`,
//! where `X_c` are the model's conditioning inputs. `T` is standard normal for
//! every unit `β`.

mod gaussian;
mod linear;
mod tcopula;

pub use gaussian::{GaussianCreditModel, Portfolio};
pub use linear::LinearModel;
pub use tcopula::{TCopulaCreditModel, Transformation};

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SisError};
use crate::rng::{Draws, PointSource};

/// Whether Ψ is an exceedance indicator or a general real-valued integrand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PsiKind {
    Indicator,
    Real,
}

/// Result of one unconditional draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub psi: f64,
    /// Response regressed on the conditioning inputs when estimating `β`.
    pub response: f64,
}

pub trait ProblemModel: Send + Sync {
    /// Short model tag used in result tables.
    fn tag(&self) -> &'static str;

    /// Number of conditioning inputs, i.e. the length of `β`.
    fn index_dim(&self) -> usize;

    /// Uniform coordinates consumed by one unconditional draw.
    fn unconditional_coords(&self) -> usize;

    /// Uniform coordinates consumed by one conditional draw, excluding `T` itself.
    fn conditional_coords(&self) -> usize;

    fn psi_kind(&self) -> PsiKind;

    /// Value `c` that `E[Ψ | T = t]` approaches as `t → ∞`.
    fn upper_plateau(&self) -> f64 {
        1.0
    }

    /// Unconditional draw; writes the conditioning inputs into `inputs`.
    fn sample(&self, l: f64, inputs: &mut [f64], src: &mut dyn Draws) -> Outcome;

    /// Ψ for a draw of the inputs given `βᵀX_c = t`.
    fn sample_given(&self, l: f64, beta: &[f64], t: f64, src: &mut dyn Draws) -> f64;
}

/// A model at a fixed threshold and index direction.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a dyn ProblemModel,
    pub l: f64,
    pub beta: &'a [f64],
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a dyn ProblemModel, l: f64, beta: &'a [f64]) -> Result<Self> {
        if beta.len() != model.index_dim() {
            return Err(SisError::invalid(format!(
                "direction has length {}, model expects {}",
                beta.len(),
                model.index_dim()
            )));
        }
        Ok(Self { model, l, beta })
    }

    #[inline]
    pub fn psi_given(&self, t: f64, src: &mut dyn Draws) -> f64 {
        self.model.sample_given(self.l, self.beta, t, src)
    }
}

/// Unit-norm index direction estimated from a pilot sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionEstimate {
    pub beta: Vec<f64>,
    pub n: usize,
}

/// Average-derivative direction `β̂ ∝ Σ_XX⁻¹ Σ_X,R` from `n1` unconditional draws,
/// with `R` the model's regression response.
pub fn estimate_direction(
    model: &dyn ProblemModel,
    l: f64,
    n1: usize,
    src: &mut dyn PointSource,
) -> Result<DirectionEstimate> {
    let d = model.index_dim();
    if n1 < 10 * d || n1 < 2 {
        return Err(SisError::invalid(format!(
            "direction estimation needs at least {} pilot draws, got {n1}",
            (10 * d).max(2)
        )));
    }
    let mut inputs = vec![0.0; d];
    let mut sum_x = vec![0.0; d];
    let mut sum_r = 0.0;
    let mut xx = DMatrix::<f64>::zeros(d, d);
    let mut xr = DVector::<f64>::zeros(d);
    let mut rows = Vec::with_capacity(n1);
    for _ in 0..n1 {
        src.start_point();
        let out = model.sample(l, &mut inputs, src);
        rows.push((inputs.clone(), out.response));
        for (s, x) in sum_x.iter_mut().zip(&inputs) {
            *s += x;
        }
        sum_r += out.response;
    }
    let n = n1 as f64;
    let mean_x: Vec<f64> = sum_x.iter().map(|s| s / n).collect();
    let mean_r = sum_r / n;
    for (x, r) in &rows {
        for i in 0..d {
            let xi = x[i] - mean_x[i];
            xr[i] += xi * (r - mean_r);
            for j in 0..=i {
                xx[(i, j)] += xi * (x[j] - mean_x[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            xx[(j, i)] = xx[(i, j)];
        }
    }
    xx /= n - 1.0;
    xr /= n - 1.0;
    let solution = match xx.clone().cholesky() {
        Some(ch) => ch.solve(&xr),
        None => {
            warn!("sample covariance of the conditioning inputs is singular; adding 1e-8 I");
            let reg = xx + DMatrix::<f64>::identity(d, d) * 1e-8;
            reg.cholesky()
                .ok_or_else(|| {
                    SisError::IllConditioned("sample covariance is not positive definite".into())
                })?
                .solve(&xr)
        }
    };
    let norm = solution.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(SisError::IllConditioned(
            "response has no linear association with the conditioning inputs".into(),
        ));
    }
    Ok(DirectionEstimate {
        beta: solution.iter().map(|b| b / norm).collect(),
        n: n1,
    })
}

/// Draws `Z | βᵀZ = t` for `Z ~ N_d(0, I)`: `Z = βt + G − β(βᵀG)` with `G ~ N_d(0, I)`.
pub fn conditional_mvn_sample(beta: &[f64], t: f64, src: &mut dyn Draws, out: &mut [f64]) {
    debug_assert_eq!(beta.len(), out.len());
    src.fill_normals(out);
    let proj: f64 = beta.iter().zip(out.iter()).map(|(b, g)| b * g).sum();
    for (z, b) in out.iter_mut().zip(beta) {
        *z += b * (t - proj);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PseudoSource;

    #[test]
    fn conditional_sample_on_axis() {
        let beta = [1.0, 0.0, 0.0];
        let mut src = PseudoSource::new(1);
        let mut z = [0.0; 3];
        conditional_mvn_sample(&beta, 2.5, &mut src, &mut z);
        assert_eq!(z[0], 2.5);
        assert!(z[1] != 0.0 && z[2] != 0.0);
    }

    #[test]
    fn conditional_sample_hits_index_exactly() {
        let beta = [0.6, -0.48, 0.64];
        let mut src = PseudoSource::new(2);
        let mut z = [0.0; 3];
        for i in 0..1000 {
            let t = -3.0 + 0.006 * i as f64;
            conditional_mvn_sample(&beta, t, &mut src, &mut z);
            let back: f64 = beta.iter().zip(&z).map(|(b, x)| b * x).sum();
            assert!((back - t).abs() < 1e-14);
        }
    }

    #[test]
    fn conditional_covariance_is_projection() {
        let beta = [0.6, 0.8];
        let t = 1.1;
        let n = 100_000;
        let mut src = PseudoSource::new(3);
        let mut z = [0.0; 2];
        let mut s = [0.0; 2];
        let mut ss = [[0.0; 2]; 2];
        for _ in 0..n {
            conditional_mvn_sample(&beta, t, &mut src, &mut z);
            for i in 0..2 {
                s[i] += z[i];
                for j in 0..2 {
                    ss[i][j] += z[i] * z[j];
                }
            }
        }
        let nf = n as f64;
        for i in 0..2 {
            let mi = s[i] / nf;
            assert!((mi - beta[i] * t).abs() < 4.0 * (1.0 / nf).sqrt());
            for j in 0..2 {
                let cov = ss[i][j] / nf - mi * s[j] / nf;
                let target = if i == j { 1.0 } else { 0.0 } - beta[i] * beta[j];
                // Var of a product of jointly normal terms is at most 2 here.
                assert!((cov - target).abs() < 4.0 * (2.0 / nf).sqrt(), "{i}{j}: {cov}");
            }
        }
    }
}
