//! Deterministic table emission (CSV and markdown) in the column order
//! Est, Bias, MCSD, MSE, Cov, with values rounded to one decimal.

use super::monte_carlo::SimulationReport;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// One-decimal formatting with negative zero normalized away.
fn fmt1(v: f64) -> String {
    let r = (v * 10.0).round() / 10.0;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.1}")
}

/// Renders the report. Bias, MCSD and MSE are ×10, coverage ×100 (the
/// tables' convention); the extra ScoreSE column carries the score-scale
/// standard error for the inversion estimator and is empty otherwise.
pub fn emit_report(report: &SimulationReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::new();
            out.push_str("Est,Bias,MCSD,MSE,Cov,ScoreSE,Reps,Failures\n");
            for row in &report.rows {
                let score = row.score_se10.map(fmt1).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    row.estimator.label(),
                    fmt1(row.bias10),
                    fmt1(row.mcsd10),
                    fmt1(row.mean_se10),
                    fmt1(row.coverage100),
                    score,
                    row.replications,
                    row.failures,
                ));
            }
            out
        }
        ReportFormat::Markdown => {
            let cfg = &report.config;
            let mut out = format!(
                "Experiment {} (n={}, p={}, rho={}, tau={}, psi={}, alpha={}, seed={}, \
                 requested={}{})\n\n",
                cfg.experiment.index(),
                cfg.n,
                cfg.p,
                cfg.rho,
                cfg.tau,
                cfg.psi_true,
                report.alpha,
                cfg.seed,
                report.requested,
                if report.flagged { ", FLAGGED: failure rate > 5%" } else { "" },
            );
            out.push_str("| Est | Bias | MCSD | MSE | Cov | ScoreSE | Reps | Failures |\n");
            out.push_str("|-----|------|------|-----|-----|---------|------|----------|\n");
            for row in &report.rows {
                let score = row.score_se10.map(fmt1).unwrap_or_default();
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    row.estimator.label(),
                    fmt1(row.bias10),
                    fmt1(row.mcsd10),
                    fmt1(row.mean_se10),
                    fmt1(row.coverage100),
                    score,
                    row.replications,
                    row.failures,
                ));
            }
            out
        }
    }
}

/// Parsed CSV row: estimator label and the numeric columns
/// (bias, mcsd, mse, cov, score_se) with empty cells as None.
pub type ParsedRow = (String, [Option<f64>; 5]);

/// Parses the CSV emitted by [`emit_report`] (the parse-back check).
pub fn parse_report_csv(text: &str) -> Result<Vec<ParsedRow>, SimError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(SimError::BadConfig { what: "empty report".into() })?;
    if !header.starts_with("Est,Bias,MCSD,MSE,Cov") {
        return Err(SimError::BadConfig { what: format!("unexpected header: {header}") });
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 6 {
            return Err(SimError::BadConfig { what: format!("short row: {line}") });
        }
        let mut nums = [None; 5];
        for (slot, field) in nums.iter_mut().zip(&fields[1..6]) {
            if !field.is_empty() {
                *slot = Some(field.parse::<f64>().map_err(|e| SimError::BadConfig {
                    what: format!("bad number {field}: {e}"),
                })?);
            }
        }
        rows.push((fields[0].to_string(), nums));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::dgp::{DgpConfig, Experiment};
    use crate::sim::monte_carlo::{EstimatorKind, EstimatorSummary};

    fn tiny_report(rows: Vec<EstimatorSummary>) -> SimulationReport {
        SimulationReport {
            config: DgpConfig::new(Experiment::One, 50, 8, 1.0, 2.0, 1),
            alpha: 0.05,
            requested: 4,
            rows,
            flagged: false,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let rep = tiny_report(Vec::new());
        let csv = emit_report(&rep, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("Est,Bias,MCSD,MSE,Cov"));
    }

    #[test]
    fn single_row_roundtrip() {
        let rep = tiny_report(vec![EstimatorSummary {
            estimator: EstimatorKind::Hdbr,
            bias10: -0.7249,
            mcsd10: 2.149,
            mean_se10: 1.96,
            coverage100: 92.24,
            score_se10: Some(1.32),
            replications: 4,
            failures: 0,
        }]);
        let csv = emit_report(&rep, ReportFormat::Csv);
        let parsed = parse_report_csv(&csv).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, "HDBR");
        let round1 = |v: f64| (v * 10.0).round() / 10.0;
        assert_eq!(parsed[0].1[0], Some(round1(-0.7249)));
        assert_eq!(parsed[0].1[1], Some(round1(2.149)));
        assert_eq!(parsed[0].1[3], Some(round1(92.24)));
        assert_eq!(parsed[0].1[4], Some(round1(1.32)));

        let md = emit_report(&rep, ReportFormat::Markdown);
        assert!(md.contains("| HDBR |"));
        assert!(md.contains("-0.7"));
    }

    #[test]
    fn negative_zero_is_normalized() {
        assert_eq!(fmt1(-0.01), "0.0");
        assert_eq!(fmt1(-0.06), "-0.1");
    }
}
