//! Calibration and estimation stages over an experiment's thresholds and methods.

use std::io::Write;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentSpec;
use super::fit::{FitEntry, PilotFit};
use crate::error::{Result, SisError};
use crate::estimators::IsOptions;
use crate::pipeline::{calibrate, Calibration, Estimator, Method, Target};
use crate::rng::derive_seed;

const STREAM_CALIBRATE: u64 = 1 << 20;
const STREAM_ESTIMATE: u64 = 2 << 20;

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub model: String,
    pub l: f64,
    pub n: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub estimate: f64,
    pub var_estimate: f64,
    pub ci_halfwidth: f64,
    pub debias_added: f64,
    pub wall_ms: f64,
    pub seed: u64,
}

fn calibration_seed(base: u64, l_index: usize, target: Target) -> u64 {
    let t = match target {
        Target::Psi => 0,
        Target::Cmc => 1,
    };
    derive_seed(derive_seed(base, STREAM_CALIBRATE + l_index as u64), t)
}

/// Seed of replication `r` at threshold index `l_index`; shared by all methods.
pub fn replication_seed(base: u64, l_index: usize, r: usize) -> u64 {
    derive_seed(derive_seed(base, STREAM_ESTIMATE + l_index as u64), r as u64)
}

/// Runs the calibration stage for every threshold and every target the methods need.
pub fn run_calibrate(spec: &ExperimentSpec) -> Result<PilotFit> {
    spec.validate()?;
    let built = spec.model.build()?;
    let hash = spec.model.hash()?;
    let mut fit = PilotFit::default();
    for (j, &l) in spec.l.iter().enumerate() {
        for target in spec.targets() {
            let settings = spec.calibration_settings(target);
            let cal = calibrate(&built, target, l, &settings, calibration_seed(spec.seed, j, target))?;
            info!(
                "calibrated l = {l} ({target:?}): k* = {:.4}, sigma* = {:?}, {:.0} ms",
                cal.k_star, cal.sigma_star, cal.calibration_ms
            );
            fit.entries.push(FitEntry::from_calibration(&cal, &hash));
        }
    }
    Ok(fit)
}

/// Runs the estimation stage: `B` replications per threshold and method, in
/// threshold-major, then method, then replication order.
pub fn run_estimate(spec: &ExperimentSpec, fit: &PilotFit) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let built = spec.model.build()?;
    fit.check_model(&spec.model.hash()?)?;
    let options = IsOptions {
        self_normalized: spec.self_normalized,
    };
    let mut rows = Vec::new();
    for (j, &l) in spec.l.iter().enumerate() {
        let mut cals: Vec<(Target, Calibration)> = Vec::new();
        for target in spec.targets() {
            let entry = fit.find(l, target).ok_or_else(|| {
                SisError::invalid(format!("fit file has no {target:?} calibration for l = {l}"))
            })?;
            cals.push((target, entry.to_calibration()?));
        }
        for &method in &spec.method {
            let cal = method
                .target()
                .and_then(|t| cals.iter().find(|(ct, _)| *ct == t).map(|(_, c)| c));
            let est = Estimator::new(&built, method, l, cal, options)?;
            let results = (0..spec.replications)
                .into_par_iter()
                .map(|r| {
                    let seed = replication_seed(spec.seed, j, r);
                    est.run(spec.n, spec.rng, seed).map(|res| (seed, res))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.extend(results.into_iter().map(|(seed, r)| ResultRow {
                method: method.tag().to_string(),
                model: built.tag().to_string(),
                l,
                n: r.n,
                b: spec.replications,
                estimate: r.estimate,
                var_estimate: r.variance_estimate,
                ci_halfwidth: r.ci_halfwidth,
                debias_added: r.debias_added,
                wall_ms: r.wall_time * 1e3,
                seed,
            }));
            info!("estimated l = {l} with {method}");
        }
    }
    Ok(rows)
}

/// Calibration followed by estimation, with the same seeds as the separate stages.
pub fn run_all(spec: &ExperimentSpec) -> Result<(PilotFit, Vec<ResultRow>)> {
    let fit = run_calibrate(spec)?;
    let rows = run_estimate(spec, &fit)?;
    Ok((fit, rows))
}

/// Restricts a spec to one method, keeping everything else.
pub fn with_method(spec: &ExperimentSpec, method: Method) -> ExperimentSpec {
    ExperimentSpec {
        method: vec![method],
        ..spec.clone()
    }
}

/// Writes rows as CSV, preceded by a header line when `header` is set.
pub fn write_rows<W: Write>(out: W, rows: &[ResultRow], header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(SisError::from))
        .collect()
}
