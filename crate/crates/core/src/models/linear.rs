use super::{Outcome, ProblemModel, PsiKind};
use crate::error::{Result, SisError};
use crate::rng::{std_normal_survival, Draws};

/// `L = αT + sε` with `T, ε` independent standard normals and `α² + s² = 1`;
/// Ψ = 1{L > l}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearModel {
    alpha: f64,
    s: f64,
}

impl LinearModel {
    /// `alpha` in (0, 1].
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SisError::invalid(format!(
                "linear model needs alpha in (0, 1], got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            s: (1.0 - alpha * alpha).max(0.0).sqrt(),
        })
    }

    pub fn from_r_squared(r2: f64) -> Result<Self> {
        Self::new(r2.sqrt())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn psi(&self, t: f64, eps: f64, l: f64) -> f64 {
        if self.alpha * t + self.s * eps > l {
            1.0
        } else {
            0.0
        }
    }

    /// `P(L > l) = Φ̄(l)`.
    pub fn true_probability(l: f64) -> f64 {
        std_normal_survival(l)
    }

    /// `p_l(t) = P(L > l | T = t) = Φ̄((l − αt)/s)`.
    pub fn conditional_probability(&self, t: f64, l: f64) -> f64 {
        if self.s == 0.0 {
            if self.alpha * t > l {
                1.0
            } else {
                0.0
            }
        } else {
            std_normal_survival((l - self.alpha * t) / self.s)
        }
    }
}

impl ProblemModel for LinearModel {
    fn tag(&self) -> &'static str {
        "linear"
    }

    fn index_dim(&self) -> usize {
        1
    }

    fn unconditional_coords(&self) -> usize {
        2
    }

    fn conditional_coords(&self) -> usize {
        1
    }

    fn psi_kind(&self) -> PsiKind {
        PsiKind::Indicator
    }

    fn sample(&self, l: f64, inputs: &mut [f64], src: &mut dyn Draws) -> Outcome {
        let t = src.normal();
        let eps = src.normal();
        inputs[0] = t;
        let loss = self.alpha * t + self.s * eps;
        Outcome {
            psi: if loss > l { 1.0 } else { 0.0 },
            response: loss,
        }
    }

    fn sample_given(&self, l: f64, beta: &[f64], t: f64, src: &mut dyn Draws) -> f64 {
        let eps = src.normal();
        self.psi(beta[0] * t, eps, l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn true_probability_at_three() {
        let p = LinearModel::true_probability(3.0);
        assert!((p - 1.349_898_031_630_094_5e-3).abs() < 1e-12);
    }

    #[test]
    fn unit_alpha_is_a_step() {
        let m = LinearModel::new(1.0).unwrap();
        assert_eq!(m.s(), 0.0);
        assert_eq!(m.conditional_probability(2.9, 3.0), 0.0);
        assert_eq!(m.conditional_probability(3.1, 3.0), 1.0);
    }

    #[test]
    fn conditional_probability_reference() {
        // mpmath: z = 0.2506281446690023, Φ̄(z) = 0.4010508098865538.
        let m = LinearModel::from_r_squared(0.99).unwrap();
        let p = m.conditional_probability(5.0, 5.0);
        assert!((p - 0.401_050_809_886_553_8).abs() < 1e-12, "{p}");
    }

    #[test]
    fn rejects_alpha_outside_unit_interval() {
        assert!(LinearModel::new(0.0).is_err());
        assert!(LinearModel::new(1.2).is_err());
    }
}
