use super::{conditional_mvn_sample, Outcome, ProblemModel, PsiKind};
use crate::error::{Result, SisError};
use crate::rng::{std_normal_cdf, std_normal_upper_quantile, Draws, PseudoSource};

/// Obligor parameters shared by the credit models: exposures `c`, marginal
/// default probabilities `p`, factor loadings `a` (row-major `h × d`) and
/// idiosyncratic scales `b` with `Σⱼ a²ₖⱼ + b²ₖ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Portfolio {
    h: usize,
    d: usize,
    c: Vec<f64>,
    p: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Portfolio {
    /// `c_k = ⌈5k/h⌉²`, `p_k = 0.01(1 + sin(16πk/h))`, `a_kj ~ U(0, 1/√d)` drawn from `loadings_seed`.
    pub fn standard(h: usize, d: usize, loadings_seed: u64) -> Result<Self> {
        if h == 0 || d == 0 {
            return Err(SisError::invalid("portfolio needs h >= 1 and d >= 1"));
        }
        let hf = h as f64;
        let c = (1..=h)
            .map(|k| (5.0 * k as f64 / hf).ceil().powi(2))
            .collect();
        let p = (1..=h)
            .map(|k| 0.01 * (1.0 + (16.0 * std::f64::consts::PI * k as f64 / hf).sin()))
            .collect();
        let mut src = PseudoSource::new(loadings_seed);
        let scale = 1.0 / (d as f64).sqrt();
        let a = (0..h * d).map(|_| scale * src.uniform()).collect::<Vec<_>>();
        Self::build(h, d, c, p, a)
    }

    /// Explicit parameters; `loadings[k]` is obligor k's loading vector.
    pub fn from_parts(c: Vec<f64>, p: Vec<f64>, loadings: Vec<Vec<f64>>) -> Result<Self> {
        let h = c.len();
        if h == 0 || p.len() != h || loadings.len() != h {
            return Err(SisError::invalid("c, p and loadings must have one entry per obligor"));
        }
        let d = loadings[0].len();
        if d == 0 || loadings.iter().any(|r| r.len() != d) {
            return Err(SisError::invalid("all loading vectors must have the same positive length"));
        }
        Self::build(h, d, c, p, loadings.concat())
    }

    fn build(h: usize, d: usize, c: Vec<f64>, p: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if c.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(SisError::invalid("exposures must be finite and nonnegative"));
        }
        if p.iter().any(|&x| !(0.0..1.0).contains(&x)) {
            return Err(SisError::invalid("default probabilities must lie in [0, 1)"));
        }
        let mut b = Vec::with_capacity(h);
        for k in 0..h {
            let s: f64 = a[k * d..(k + 1) * d].iter().map(|x| x * x).sum();
            if !(s <= 1.0) {
                return Err(SisError::invalid(format!(
                    "obligor {k} has squared loadings summing to {s} > 1"
                )));
            }
            b.push((1.0 - s).sqrt());
        }
        Ok(Self { h, d, c, p, a, b })
    }

    pub fn obligors(&self) -> usize {
        self.h
    }

    pub fn factors(&self) -> usize {
        self.d
    }

    pub fn exposures(&self) -> &[f64] {
        &self.c
    }

    pub fn default_probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn loadings(&self, k: usize) -> &[f64] {
        &self.a[k * self.d..(k + 1) * self.d]
    }

    pub fn idiosyncratic(&self) -> &[f64] {
        &self.b
    }

    pub fn total_exposure(&self) -> f64 {
        self.c.iter().sum()
    }

    /// Systematic parts `a_kᵀ z` for every obligor.
    pub(crate) fn systematic(&self, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.a
                .chunks_exact(self.d)
                .map(|row| row.iter().zip(z).map(|(a, z)| a * z).sum::<f64>()),
        );
    }
}

/// Gaussian-copula portfolio: obligor k defaults when `a_kᵀZ + b_k ε_k > Φ⁻¹(1 − p_k)`,
/// and `L = Σ c_k Y_k`. Ψ = 1{L > l}; the conditioning inputs are `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCreditModel {
    portfolio: Portfolio,
    x: Vec<f64>,
}

impl GaussianCreditModel {
    pub fn new(h: usize, d: usize, loadings_seed: u64) -> Result<Self> {
        Ok(Self::from_portfolio(Portfolio::standard(h, d, loadings_seed)?))
    }

    pub fn from_portfolio(portfolio: Portfolio) -> Self {
        let x = portfolio
            .p
            .iter()
            .map(|&p| std_normal_upper_quantile(p))
            .collect();
        Self { portfolio, x }
    }

    pub fn portfolio(&self) -> &Portfolio {
        &self.portfolio
    }

    /// Default thresholds `x_k = Φ⁻¹(1 − p_k)`.
    pub fn thresholds(&self) -> &[f64] {
        &self.x
    }

    /// `L(Z, ε)`.
    pub fn loss(&self, z: &[f64], eps: &[f64]) -> f64 {
        let pf = &self.portfolio;
        let mut loss = 0.0;
        for (k, e) in eps.iter().enumerate().take(pf.h) {
            let eta: f64 = pf.loadings(k).iter().zip(z).map(|(a, z)| a * z).sum();
            if eta + pf.b[k] * e > self.x[k] {
                loss += pf.c[k];
            }
        }
        loss
    }

    /// Conditional default probabilities `p_k(Z) = Φ((a_kᵀZ − x_k)/b_k)`.
    pub fn conditional_default_probabilities(&self, z: &[f64]) -> Vec<f64> {
        let pf = &self.portfolio;
        let mut eta = Vec::with_capacity(pf.h);
        pf.systematic(z, &mut eta);
        eta.iter()
            .zip(&self.x)
            .zip(&pf.b)
            .map(|((&e, &x), &b)| {
                if b > 0.0 {
                    std_normal_cdf((e - x) / b)
                } else if e > x {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Loss with idiosyncratic normals drawn from `src`, one per obligor in order.
    fn loss_from_source(&self, z: &[f64], src: &mut dyn Draws) -> f64 {
        let pf = &self.portfolio;
        let mut loss = 0.0;
        for (k, row) in pf.a.chunks_exact(pf.d).enumerate() {
            let eta: f64 = row.iter().zip(z).map(|(a, z)| a * z).sum();
            let e = src.normal();
            if eta + pf.b[k] * e > self.x[k] {
                loss += pf.c[k];
            }
        }
        loss
    }

    /// `L` for `Z | βᵀZ = t` and fresh idiosyncratic terms.
    pub fn conditional_loss(&self, beta: &[f64], t: f64, src: &mut dyn Draws) -> f64 {
        let mut z = vec![0.0; self.portfolio.d];
        conditional_mvn_sample(beta, t, src, &mut z);
        self.loss_from_source(&z, src)
    }

    /// Unconditional loss; writes `Z` into `z`.
    pub fn sample_loss(&self, z: &mut [f64], src: &mut dyn Draws) -> f64 {
        src.fill_normals(z);
        self.loss_from_source(z, src)
    }
}

impl ProblemModel for GaussianCreditModel {
    fn tag(&self) -> &'static str {
        "gaussian-credit"
    }

    fn index_dim(&self) -> usize {
        self.portfolio.d
    }

    fn unconditional_coords(&self) -> usize {
        self.portfolio.d + self.portfolio.h
    }

    fn conditional_coords(&self) -> usize {
        self.portfolio.d + self.portfolio.h
    }

    fn psi_kind(&self) -> PsiKind {
        PsiKind::Indicator
    }

    fn sample(&self, l: f64, inputs: &mut [f64], src: &mut dyn Draws) -> Outcome {
        let loss = self.sample_loss(inputs, src);
        Outcome {
            psi: if loss > l { 1.0 } else { 0.0 },
            response: loss,
        }
    }

    fn sample_given(&self, l: f64, beta: &[f64], t: f64, src: &mut dyn Draws) -> f64 {
        if self.conditional_loss(beta, t, src) > l {
            1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_portfolio_levels() {
        let pf = Portfolio::standard(1000, 10, 42).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for &c in pf.exposures() {
            *counts.entry(c as u32).or_insert(0) += 1;
        }
        assert_eq!(counts.into_iter().collect::<Vec<_>>(), vec![(1, 200), (4, 200), (9, 200), (16, 200), (25, 200)]);
        assert!(pf.default_probabilities().iter().all(|&p| (0.0..=0.02).contains(&p)));
        assert!((pf.total_exposure() - 11_000.0).abs() < 1e-9);
        for k in 0..1000 {
            let s: f64 = pf.loadings(k).iter().map(|a| a * a).sum();
            assert!(s <= 1.0 && pf.loadings(k).iter().all(|&a| (0.0..=1.0 / 10f64.sqrt()).contains(&a)));
            assert!((s + pf.idiosyncratic()[k].powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_probabilities_mean_zero_loss() {
        let pf = Portfolio::from_parts(vec![1.0, 2.0], vec![0.0, 0.0], vec![vec![0.5], vec![0.3]])
            .unwrap();
        let m = GaussianCreditModel::from_portfolio(pf);
        let mut src = PseudoSource::new(4);
        let mut z = [0.0];
        for _ in 0..1000 {
            assert_eq!(m.sample_loss(&mut z, &mut src), 0.0);
        }
    }

    #[test]
    fn loss_is_monotone_in_systematic_factor() {
        let m = GaussianCreditModel::new(50, 2, 3).unwrap();
        let eps: Vec<f64> = (0..50).map(|k| ((k * 37) % 11) as f64 / 5.0 - 1.0).collect();
        let mut last = -1.0;
        for i in 0..100 {
            let s = -4.0 + 0.1 * i as f64;
            let l = m.loss(&[s, s], &eps);
            assert!(l >= last);
            last = l;
        }
    }

    #[test]
    fn rejects_excess_loadings() {
        assert!(Portfolio::from_parts(vec![1.0], vec![0.01], vec![vec![0.9, 0.9]]).is_err());
    }
}
