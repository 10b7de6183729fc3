//! Calibration results on disk, so estimation can run separately from calibration.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::density1d::{FitKind, MomentCurve, Tail};
use crate::error::{Result, SisError};
use crate::pipeline::{Calibration, Target};

/// One calibrated threshold and target. The moment curve is stored as knot means
/// and refitted deterministically on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub l: f64,
    pub target: Target,
    pub model_hash: String,
    pub beta: Vec<f64>,
    pub kind: FitKind,
    pub tail: Tail,
    pub knots: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub n_knot: usize,
    pub k_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_star: Option<f64>,
    /// Right end of the numeric SIS-optimal proposal, when it truncates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    /// Right end of the numeric SSIS-optimal proposal, when it truncates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max_ssis: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_shift: Option<Vec<f64>>,
    pub calibration_ms: f64,
}

impl FitEntry {
    pub fn from_calibration(cal: &Calibration, model_hash: &str) -> Self {
        let curve = &cal.curve;
        Self {
            l: cal.l,
            target: cal.target,
            model_hash: model_hash.to_string(),
            beta: cal.beta.clone(),
            kind: curve.kind(),
            tail: curve.tail(),
            knots: curve.knots().to_vec(),
            m1: curve.knot_m1().to_vec(),
            m2: curve.knot_m2().to_vec(),
            n_knot: curve.n_knot(),
            k_star: cal.k_star,
            sigma_star: cal.sigma_star,
            t_max: cal.sis_star_proposal().ok().and_then(|g| g.t_max()),
            t_max_ssis: cal.ssis_star_proposal().ok().and_then(|g| g.t_max()),
            mu_shift: cal.mu_shift.clone(),
            calibration_ms: cal.calibration_ms,
        }
    }

    pub fn to_calibration(&self) -> Result<Calibration> {
        let curve = MomentCurve::from_knot_means(
            self.kind,
            self.tail,
            self.knots.clone(),
            self.m1.clone(),
            self.m2.clone(),
            self.n_knot,
        )?;
        Ok(Calibration {
            l: self.l,
            target: self.target,
            beta: self.beta.clone(),
            curve: Arc::new(curve),
            k_star: self.k_star,
            sigma_star: self.sigma_star,
            mu_shift: self.mu_shift.clone(),
            calibration_ms: self.calibration_ms,
        })
    }
}

/// Contents of a fit file: one `[[fit]]` table per entry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PilotFit {
    #[serde(default, rename = "fit")]
    pub entries: Vec<FitEntry>,
}

impl PilotFit {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn find(&self, l: f64, target: Target) -> Option<&FitEntry> {
        self.entries.iter().find(|e| e.l == l && e.target == target)
    }

    /// Fails unless every entry was calibrated for the model with `hash`.
    pub fn check_model(&self, hash: &str) -> Result<()> {
        match self.entries.iter().find(|e| e.model_hash != hash) {
            Some(e) => Err(SisError::invalid(format!(
                "fit for l = {} was calibrated for a different model",
                e.l
            ))),
            None => Ok(()),
        }
    }
}
