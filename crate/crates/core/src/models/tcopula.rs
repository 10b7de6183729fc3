use serde::{Deserialize, Serialize};

use super::{conditional_mvn_sample, Outcome, Portfolio, ProblemModel, PsiKind};
use crate::error::{Result, SisError};
use crate::rng::{
    chi_square_cdf, chi_square_quantile, std_normal_survival, student_t_quantile, Draws,
};

/// Index used by the t-copula model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transformation {
    /// `T₁ = β_W Z_W + β_Lᵀ Z` with `Z_W = Φ⁻¹(F_W(W))`.
    T1,
    /// `T₂ = β_Sᵀ Z`.
    T2,
}

/// t-copula portfolio: obligor k defaults when `√W (a_kᵀZ + b_k ε_k) > t_ν⁻¹(1 − p_k)`
/// with `W ~ IG(ν/2, ν/2)`. With `cmc` set, Ψ is `S_l(Z, ε) = P(L > l | Z, ε)`;
/// otherwise Ψ = 1{L > l}.
#[derive(Clone, Debug, PartialEq)]
pub struct TCopulaCreditModel {
    portfolio: Portfolio,
    nu: f64,
    x: Vec<f64>,
    transformation: Transformation,
    cmc: bool,
}

impl TCopulaCreditModel {
    pub fn new(
        h: usize,
        d: usize,
        nu: f64,
        loadings_seed: u64,
        transformation: Transformation,
        cmc: bool,
    ) -> Result<Self> {
        Self::from_portfolio(Portfolio::standard(h, d, loadings_seed)?, nu, transformation, cmc)
    }

    pub fn from_portfolio(
        portfolio: Portfolio,
        nu: f64,
        transformation: Transformation,
        cmc: bool,
    ) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(SisError::invalid(format!("nu must be positive, got {nu}")));
        }
        if cmc && transformation == Transformation::T1 {
            return Err(SisError::invalid(
                "conditional Monte Carlo integrates W out and cannot be combined with T1",
            ));
        }
        let x: Vec<f64> = portfolio
            .default_probabilities()
            .iter()
            .map(|&p| {
                if p == 0.0 {
                    f64::INFINITY
                } else {
                    -student_t_quantile(p, nu)
                }
            })
            .collect();
        if cmc && x.iter().any(|&x| !(x > 0.0)) {
            return Err(SisError::invalid(
                "conditional Monte Carlo needs every default probability below 1/2",
            ));
        }
        Ok(Self {
            portfolio,
            nu,
            x,
            transformation,
            cmc,
        })
    }

    /// Same portfolio with a different integrand choice.
    pub fn with_cmc(&self, cmc: bool) -> Result<Self> {
        Self::from_portfolio(self.portfolio.clone(), self.nu, self.transformation, cmc)
    }

    pub fn portfolio(&self) -> &Portfolio {
        &self.portfolio
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn transformation(&self) -> Transformation {
        self.transformation
    }

    pub fn cmc(&self) -> bool {
        self.cmc
    }

    /// Default thresholds `x_k = t_ν⁻¹(1 − p_k)`.
    pub fn thresholds(&self) -> &[f64] {
        &self.x
    }

    /// `W = F_W⁻¹(1 − upper) = ν / χ²_ν⁻¹(upper)`.
    fn shock_from_upper(&self, upper: f64) -> f64 {
        self.nu / chi_square_quantile(upper, self.nu)
    }

    /// `W` as a function of `Z_W = Φ⁻¹(F_W(W))`.
    pub fn shock_from_normal(&self, z_w: f64) -> f64 {
        self.shock_from_upper(std_normal_survival(z_w))
    }

    /// `L(W, Z, ε)`.
    pub fn loss(&self, w: f64, z: &[f64], eps: &[f64]) -> f64 {
        let pf = &self.portfolio;
        let sw = w.sqrt();
        let mut eta = Vec::with_capacity(pf.obligors());
        pf.systematic(z, &mut eta);
        let mut loss = 0.0;
        for k in 0..pf.obligors() {
            if sw * (eta[k] + pf.idiosyncratic()[k] * eps[k]) > self.x[k] {
                loss += pf.exposures()[k];
            }
        }
        loss
    }

    /// `S_l(Z, ε) = P(L > l | Z, ε)`, integrating `W` out exactly.
    pub fn cmc_survival(&self, z: &[f64], eps: &[f64], l: f64) -> f64 {
        let pf = &self.portfolio;
        let mut eta = Vec::with_capacity(pf.obligors());
        pf.systematic(z, &mut eta);
        for (k, e) in eta.iter_mut().enumerate() {
            *e += pf.idiosyncratic()[k] * eps[k];
        }
        self.survival_from_eta(&eta, l)
    }

    fn survival_from_eta(&self, eta: &[f64], l: f64) -> f64 {
        let c = self.portfolio.exposures();
        // Obligor k defaults iff W > (x_k/η_k)², possible only for η_k > 0.
        let mut thresholds: Vec<(f64, f64)> = eta
            .iter()
            .enumerate()
            .filter(|&(k, &e)| e > 0.0 && self.x[k].is_finite())
            .map(|(k, &e)| ((self.x[k] / e).powi(2), c[k]))
            .collect();
        thresholds.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        for (w, ck) in thresholds {
            cum += ck;
            if cum > l {
                // P(W > w) with W = ν/S, S ~ χ²_ν.
                return chi_square_cdf(self.nu / w, self.nu);
            }
        }
        0.0
    }

    /// Idiosyncratic-plus-systematic terms with ε drawn from `src`.
    fn eta_from_source(&self, z: &[f64], src: &mut dyn Draws) -> Vec<f64> {
        let pf = &self.portfolio;
        let mut eta = Vec::with_capacity(pf.obligors());
        pf.systematic(z, &mut eta);
        for (k, e) in eta.iter_mut().enumerate() {
            *e += pf.idiosyncratic()[k] * src.normal();
        }
        eta
    }

    fn loss_from_eta(&self, w: f64, eta: &[f64]) -> f64 {
        let sw = w.sqrt();
        let c = self.portfolio.exposures();
        eta.iter()
            .zip(&self.x)
            .zip(c)
            .filter(|((&e, &x), _)| sw * e > x)
            .map(|(_, &ck)| ck)
            .sum()
    }

    /// Draws `(W, Z)` given `T₁ = t`; `beta = (β_W, β_L)`.
    pub fn t1_conditional_sample(&self, beta: &[f64], t: f64, src: &mut dyn Draws) -> (f64, Vec<f64>) {
        let mut v = vec![0.0; beta.len()];
        conditional_mvn_sample(beta, t, src, &mut v);
        let w = self.shock_from_normal(v[0]);
        v.remove(0);
        (w, v)
    }

    /// Draws `Z` given `T₂ = t`.
    pub fn t2_conditional_sample(&self, beta: &[f64], t: f64, src: &mut dyn Draws) -> Vec<f64> {
        let mut z = vec![0.0; beta.len()];
        conditional_mvn_sample(beta, t, src, &mut z);
        z
    }

    fn indicator(loss: f64, l: f64) -> f64 {
        if loss > l {
            1.0
        } else {
            0.0
        }
    }
}

impl ProblemModel for TCopulaCreditModel {
    fn tag(&self) -> &'static str {
        "t-copula"
    }

    fn index_dim(&self) -> usize {
        match self.transformation {
            Transformation::T1 => self.portfolio.factors() + 1,
            Transformation::T2 => self.portfolio.factors(),
        }
    }

    fn unconditional_coords(&self) -> usize {
        let base = self.portfolio.factors() + self.portfolio.obligors();
        if self.cmc {
            base
        } else {
            base + 1
        }
    }

    fn conditional_coords(&self) -> usize {
        self.unconditional_coords()
    }

    fn psi_kind(&self) -> PsiKind {
        if self.cmc {
            PsiKind::Real
        } else {
            PsiKind::Indicator
        }
    }

    fn sample(&self, l: f64, inputs: &mut [f64], src: &mut dyn Draws) -> Outcome {
        match self.transformation {
            Transformation::T1 => {
                // Coordinates: Z_W, Z, ε.
                src.fill_normals(inputs);
                let w = self.shock_from_normal(inputs[0]);
                let eta = self.eta_from_source(&inputs[1..], src);
                let loss = self.loss_from_eta(w, &eta);
                Outcome {
                    psi: Self::indicator(loss, l),
                    response: loss,
                }
            }
            Transformation::T2 if self.cmc => {
                // Coordinates: Z, ε.
                src.fill_normals(inputs);
                let eta = self.eta_from_source(inputs, src);
                let s = self.survival_from_eta(&eta, l);
                Outcome { psi: s, response: s }
            }
            Transformation::T2 => {
                // Coordinates: Z, W, ε.
                src.fill_normals(inputs);
                let w = self.shock_from_upper(src.uniform());
                let eta = self.eta_from_source(inputs, src);
                let loss = self.loss_from_eta(w, &eta);
                Outcome {
                    psi: Self::indicator(loss, l),
                    response: loss,
                }
            }
        }
    }

    fn sample_given(&self, l: f64, beta: &[f64], t: f64, src: &mut dyn Draws) -> f64 {
        match self.transformation {
            Transformation::T1 => {
                let (w, z) = self.t1_conditional_sample(beta, t, src);
                let eta = self.eta_from_source(&z, src);
                Self::indicator(self.loss_from_eta(w, &eta), l)
            }
            Transformation::T2 if self.cmc => {
                let z = self.t2_conditional_sample(beta, t, src);
                let eta = self.eta_from_source(&z, src);
                self.survival_from_eta(&eta, l)
            }
            Transformation::T2 => {
                let z = self.t2_conditional_sample(beta, t, src);
                let w = self.shock_from_upper(src.uniform());
                let eta = self.eta_from_source(&z, src);
                Self::indicator(self.loss_from_eta(w, &eta), l)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{inv_gamma_survival, PseudoSource};

    fn single(c: f64, p: f64, a: f64, nu: f64) -> TCopulaCreditModel {
        let pf = Portfolio::from_parts(vec![c], vec![p], vec![vec![a]]).unwrap();
        TCopulaCreditModel::from_portfolio(pf, nu, Transformation::T2, true).unwrap()
    }

    #[test]
    fn no_positive_eta_means_no_default() {
        let m = single(5.0, 0.01, 0.6, 5.0);
        assert_eq!(m.cmc_survival(&[-1.0], &[-0.5], 1.0), 0.0);
    }

    #[test]
    fn single_obligor_survival_is_inverse_gamma_tail() {
        let m = single(5.0, 0.01, 0.6, 5.0);
        let (z, e) = (1.2, 0.4);
        let eta = 0.6 * z + 0.8 * e;
        let w = (m.thresholds()[0] / eta).powi(2);
        let s = m.cmc_survival(&[z], &[e], 1.0);
        assert!((s - inv_gamma_survival(w, 5.0)).abs() < 1e-14);
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn impossible_loss_has_zero_survival() {
        let m = TCopulaCreditModel::new(50, 5, 12.0, 1, Transformation::T2, true).unwrap();
        let z = [3.0; 5];
        let eps = [3.0; 50];
        assert_eq!(m.cmc_survival(&z, &eps, 551.0), 0.0);
        assert!(m.cmc_survival(&z, &eps, 100.0) > 0.0);
    }

    #[test]
    fn loss_is_monotone_in_shock() {
        let m = TCopulaCreditModel::new(50, 3, 5.0, 2, Transformation::T2, false).unwrap();
        let z = [0.5, 1.0, -0.2];
        let eps: Vec<f64> = (0..50).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut last = 0.0;
        for i in 1..200 {
            let l = m.loss(0.05 * i as f64, &z, &eps);
            assert!(l >= last);
            last = l;
        }
    }

    #[test]
    fn t1_with_shock_only_direction_is_deterministic() {
        let m = TCopulaCreditModel::new(10, 2, 5.0, 3, Transformation::T1, false).unwrap();
        let beta = [1.0, 0.0, 0.0];
        let mut src = PseudoSource::new(1);
        for t in [-1.0, 0.0, 2.0] {
            let (w, _) = m.t1_conditional_sample(&beta, t, &mut src);
            assert!((w - m.shock_from_normal(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn cmc_with_t1_is_rejected() {
        assert!(TCopulaCreditModel::new(10, 2, 5.0, 3, Transformation::T1, true).is_err());
    }
}
