//! Summary of a results table: per threshold and method, the mean estimate, mean
//! interval half-width, variance-reduction factor against MC and runtime.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::runner::ResultRow;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportLine {
    pub model: String,
    pub l: f64,
    pub method: String,
    pub runs: usize,
    pub mean_estimate: f64,
    pub mean_halfwidth: f64,
    /// Mean per-sample variance `n · var_estimate`.
    pub unit_variance: f64,
    /// `unit_variance(mc) / unit_variance(method)` at the same model and threshold.
    pub vrf: Option<f64>,
    pub mean_wall_ms: f64,
}

/// Groups rows by model, threshold and method, preserving first-appearance order of methods.
pub fn summarize(rows: &[ResultRow]) -> Vec<ReportLine> {
    let mut order: Vec<(String, u64, String)> = Vec::new();
    let mut groups: BTreeMap<(String, u64, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.model.clone(), r.l.to_bits(), r.method.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut lines: Vec<ReportLine> = order
        .iter()
        .map(|key| {
            let g = &groups[key];
            let k = g.len() as f64;
            ReportLine {
                model: key.0.clone(),
                l: f64::from_bits(key.1),
                method: key.2.clone(),
                runs: g.len(),
                mean_estimate: g.iter().map(|r| r.estimate).sum::<f64>() / k,
                mean_halfwidth: g.iter().map(|r| r.ci_halfwidth).sum::<f64>() / k,
                unit_variance: g.iter().map(|r| r.var_estimate * r.n as f64).sum::<f64>() / k,
                vrf: None,
                mean_wall_ms: g.iter().map(|r| r.wall_ms).sum::<f64>() / k,
            }
        })
        .collect();
    let mc: BTreeMap<(String, u64), f64> = lines
        .iter()
        .filter(|x| x.method == "mc")
        .map(|x| ((x.model.clone(), x.l.to_bits()), x.unit_variance))
        .collect();
    for line in &mut lines {
        if line.method == "mc" {
            line.vrf = Some(1.0);
        } else if let Some(&v) = mc.get(&(line.model.clone(), line.l.to_bits())) {
            // A zero MC variance (no hits) leaves the factor undefined.
            line.vrf = (v > 0.0 && line.unit_variance > 0.0).then(|| v / line.unit_variance);
        }
    }
    lines.sort_by(|a, b| (&a.model, a.l).partial_cmp(&(&b.model, b.l)).unwrap_or(std::cmp::Ordering::Equal));
    lines
}

/// Plain-text table of [`summarize`].
pub fn render(lines: &[ReportLine]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>10} {:<14} {:>5} {:>13} {:>13} {:>10} {:>11}",
        "model", "l", "method", "runs", "estimate", "halfwidth", "VRF", "wall_ms"
    );
    for x in lines {
        let vrf = x.vrf.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            s,
            "{:<16} {:>10} {:<14} {:>5} {:>13.5e} {:>13.5e} {:>10} {:>11.1}",
            x.model, x.l, x.method, x.runs, x.mean_estimate, x.mean_halfwidth, vrf, x.mean_wall_ms
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, estimate: f64, var: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            model: "linear".into(),
            l: 3.0,
            n: 100,
            b: 1,
            estimate,
            var_estimate: var,
            ci_halfwidth: 1.96 * var.sqrt(),
            debias_added: 0.0,
            wall_ms: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn single_mc_row_has_unit_vrf() {
        let lines = summarize(&[row("mc", 0.1, 1e-4)]);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].vrf, Some(1.0));
    }

    #[test]
    fn half_the_variance_doubles_the_vrf() {
        let lines = summarize(&[row("mc", 0.1, 1e-4), row("ssis-mu", 0.1, 5e-5)]);
        let ssis = lines.iter().find(|x| x.method == "ssis-mu").unwrap();
        assert!((ssis.vrf.unwrap() - 2.0).abs() < 1e-12);
        assert!(render(&lines).contains("ssis-mu"));
    }

    #[test]
    fn no_mc_means_no_vrf() {
        let lines = summarize(&[row("sis-mu", 0.1, 1e-4)]);
        assert_eq!(lines[0].vrf, None);
    }
}
