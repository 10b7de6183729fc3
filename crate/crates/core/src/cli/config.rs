//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::density1d::Tail;
use crate::error::{Result, SisError};
use crate::pipeline::{CalibrationSettings, Method, ModelConfig, Target};
use crate::rng::SourceKind;

/// One experiment: a model, methods, thresholds, sample sizes and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelConfig,
    /// One tag or a list of tags.
    #[serde(deserialize_with = "one_or_many")]
    pub method: Vec<Method>,
    /// One threshold or a list of thresholds.
    #[serde(deserialize_with = "one_or_many")]
    pub l: Vec<f64>,
    pub n: usize,
    pub n_pilot: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_knot: Option<usize>,
    /// Knot count.
    #[serde(rename = "M", alias = "knots", default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<usize>,
    #[serde(rename = "B", alias = "replications", default = "one")]
    pub replications: usize,
    #[serde(default = "pseudo")]
    pub rng: SourceKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knot_range: Option<[f64; 2]>,
    #[serde(default)]
    pub tail: Tail,
    #[serde(default)]
    pub self_normalized: bool,
}

fn one() -> usize {
    1
}

fn pseudo() -> SourceKind {
    SourceKind::Pseudo
}

fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(SisError::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if self.n_pilot == 0 {
            return Err(SisError::invalid("n_pilot must be positive"));
        }
        if self.n_pilot > self.n {
            return Err(SisError::invalid(format!(
                "n_pilot = {} exceeds n = {}",
                self.n_pilot, self.n
            )));
        }
        if self.n_knot == Some(0) {
            return Err(SisError::invalid("n_knot must be positive"));
        }
        if self.replications == 0 {
            return Err(SisError::invalid("B must be positive"));
        }
        if self.method.is_empty() {
            return Err(SisError::invalid("at least one method is required"));
        }
        if self.l.is_empty() || self.l.iter().any(|l| !l.is_finite()) {
            return Err(SisError::invalid("l must be a nonempty list of finite thresholds"));
        }
        let built = self.model.build()?;
        for &m in &self.method {
            built.check_method(m)?;
        }
        Ok(())
    }

    /// Calibration settings for `target` given the requested methods.
    pub fn calibration_settings(&self, target: Target) -> CalibrationSettings {
        let uses = |m: &Method| m.target() == Some(target);
        let mut s = CalibrationSettings::new(self.n_pilot);
        s.knots = self.knots;
        s.n_knot = self.n_knot;
        s.knot_range = self.knot_range.map(|[a, b]| (a, b));
        s.tail = self.tail;
        s.fit_sigma = self.method.iter().filter(|m| uses(m)).any(|m| m.needs_sigma());
        s.mean_shift = target == Target::Psi && self.method.contains(&Method::GlIs);
        s
    }

    /// Targets needing a calibration, in a fixed order.
    pub fn targets(&self) -> Vec<Target> {
        [Target::Psi, Target::Cmc]
            .into_iter()
            .filter(|t| self.method.iter().any(|m| m.target() == Some(*t)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINEAR: &str = r#"
method = ["mc", "ssis-mu-sigma"]
l = [3.0, 4.0]
n = 10000
n_pilot = 500
B = 4
seed = 7
knot_range = [1.0, 6.0]

[model]
kind = "linear"
r_squared = 0.99
"#;

    #[test]
    fn parses_linear_spec() {
        let s = ExperimentSpec::from_toml(LINEAR).unwrap();
        assert_eq!(s.method, vec![Method::Mc, Method::SsisMuSigma]);
        assert_eq!(s.replications, 4);
        assert_eq!(s.rng, SourceKind::Pseudo);
        let c = s.calibration_settings(Target::Psi);
        assert!(c.fit_sigma && !c.mean_shift);
        assert_eq!(s.targets(), vec![Target::Psi]);
    }

    #[test]
    fn single_values_are_accepted() {
        let text = LINEAR
            .replace(r#"method = ["mc", "ssis-mu-sigma"]"#, r#"method = "sis-mu""#)
            .replace("l = [3.0, 4.0]", "l = 5.0");
        let s = ExperimentSpec::from_toml(&text).unwrap();
        assert_eq!(s.method, vec![Method::SisMu]);
        assert_eq!(s.l, vec![5.0]);
    }

    #[test]
    fn zero_pilot_is_rejected() {
        let text = LINEAR.replace("n_pilot = 500", "n_pilot = 0");
        assert!(matches!(
            ExperimentSpec::from_toml(&text),
            Err(SisError::InvalidArgument(_))
        ));
    }

    #[test]
    fn credit_spec_with_flattened_portfolio() {
        let text = r#"
method = ["gl-is", "cmc"]
l = 100
n = 1000
n_pilot = 100

[model]
kind = "t-copula"
h = 50
d = 5
nu = 12
loadings_seed = 3
"#;
        // gl-is does not apply to the t-copula model.
        assert!(ExperimentSpec::from_toml(text).is_err());
        let s = ExperimentSpec::from_toml(&text.replace("\"gl-is\", ", "")).unwrap();
        assert_eq!(s.targets(), Vec::<Target>::new());
        let round = ExperimentSpec::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(round, s);
    }
}
