//! CSV data interchange and report emission.
//!
//! The data format is fixed: header `t,y,z` or `t,y,z,s_true`, comma
//! separators, `.` decimal point, values written with 17 significant digits
//! so a write/read round trip reproduces every f64 exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Result, TvtpError};
use crate::estimate::EstimationResult;
use crate::filter::Dataset;
use crate::mc::MCReport;
use crate::mixing::MixingReport;
use crate::model::{Layout, Variant};

/// 17 significant digits: enough to reproduce any f64 bit pattern.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = String::new();
    if data.s_true.is_some() {
        out.push_str("t,y,z,s_true\n");
    } else {
        out.push_str("t,y,z\n");
    }
    for t in 0..data.len() {
        match &data.s_true {
            Some(s) => {
                let _ = writeln!(out, "{t},{},{},{}", fmt_f64(data.y[t]), fmt_f64(data.z[t]), s[t]);
            }
            None => {
                let _ = writeln!(out, "{t},{},{}", fmt_f64(data.y[t]), fmt_f64(data.z[t]));
            }
        }
    }
    out
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_csv(data))?;
    Ok(())
}

pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| TvtpError::DataFormat("empty file".into()))?
        .trim_end_matches('\r');
    let has_s = match header {
        "t,y,z" => false,
        "t,y,z,s_true" => true,
        other => {
            return Err(TvtpError::DataFormat(format!(
                "bad header {other:?}; expected \"t,y,z\" or \"t,y,z,s_true\""
            )))
        }
    };
    let ncols = if has_s { 4 } else { 3 };
    let colname = |c: usize| ["t", "y", "z", "s_true"][c];
    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut s = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(TvtpError::DataFormat(format!(
                "data row {row}: expected {ncols} fields, found {}",
                fields.len()
            )));
        }
        let t: usize = fields[0].parse().map_err(|_| {
            TvtpError::DataFormat(format!("data row {row}, column 1 (t): not an integer: {:?}", fields[0]))
        })?;
        if t != i {
            return Err(TvtpError::DataFormat(format!(
                "data row {row}: t = {t}, expected {i} (rows must be consecutive from 0)"
            )));
        }
        for (c, dst) in [(1usize, &mut y), (2, &mut z)] {
            let v: f64 = fields[c].parse().map_err(|_| {
                TvtpError::DataFormat(format!(
                    "data row {row}, column {} ({}): not a number: {:?}",
                    c + 1,
                    colname(c),
                    fields[c]
                ))
            })?;
            dst.push(v);
        }
        if has_s {
            let v: usize = fields[3].parse().map_err(|_| {
                TvtpError::DataFormat(format!(
                    "data row {row}, column 4 (s_true): not a regime index: {:?}",
                    fields[3]
                ))
            })?;
            s.push(v);
        }
    }
    if y.is_empty() {
        return Err(TvtpError::DataFormat("no data rows".into()));
    }
    Ok(Dataset { y, z, s_true: has_s.then_some(s) })
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset_csv(&text)
}

/// One row per (estimator, rho, T, parameter).
pub fn mc_report_to_csv(report: &MCReport) -> String {
    let mut out = String::from(
        "estimator,rho,T,parameter,truth,bias,sd_ratio,size,power,n_reps,n_converged,n_relabeled,low_precision,boundary_caution\n",
    );
    for cell in &report.cells {
        for row in &cell.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                variant_name(row.estimator),
                row.rho,
                row.t,
                row.parameter,
                fmt_f64(row.truth),
                fmt_f64(row.bias),
                fmt_f64(row.sd_ratio),
                fmt_f64(row.size),
                fmt_f64(row.power),
                cell.n_reps,
                cell.n_converged,
                cell.n_relabeled,
                cell.low_precision,
                row.boundary_caution
            );
        }
        if cell.invalid {
            let _ = writeln!(
                out,
                "{},{},{},<invalid: no converged replications>,,,,,,{},0,0,true,",
                variant_name(cell.estimator),
                cell.rho,
                cell.t,
                cell.n_reps
            );
        }
    }
    out
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Partial => "partial",
        Variant::Joint => "joint",
    }
}

/// Column order used by the simulation-study tables.
const TABLE_COLUMNS: [&str; 9] =
    ["mu0", "mu1", "alpha1", "beta1", "alpha0", "beta0", "sigma0", "sigma1", "phi1"];

/// Aligned plain-text table in the study's row/column layout: per
/// (estimator, rho), blocks of bias, sd-to-SE ratio, size and power with
/// one row per T.
pub fn mc_report_to_table(report: &MCReport) -> String {
    let mut out = String::new();
    let mut combos: Vec<(Variant, f64)> = Vec::new();
    for cell in &report.cells {
        if !combos.iter().any(|&(e, r)| e == cell.estimator && r == cell.rho) {
            combos.push((cell.estimator, cell.rho));
        }
    }
    for (estimator, rho) in combos {
        let cells: Vec<_> = report
            .cells
            .iter()
            .filter(|c| c.estimator == estimator && c.rho == rho)
            .collect();
        let _ = writeln!(
            out,
            "{} ML (rho = {rho})",
            match estimator {
                Variant::Partial => "Partial",
                Variant::Joint => "Joint",
            }
        );
        let _ = write!(out, "{:>6}", "T");
        for col in TABLE_COLUMNS {
            let display = if col == "phi1" { "phi" } else { col };
            let _ = write!(out, "{display:>9}");
        }
        let _ = writeln!(out);
        for (label, pick) in [
            ("Bias", 0usize),
            ("Ratio of sampling sd to estimated SE", 1),
            ("Size", 2),
            ("Power", 3),
        ] {
            let _ = writeln!(out, "{label}");
            for cell in &cells {
                if cell.invalid {
                    let _ = writeln!(out, "{:>6}  <no converged replications>", cell.t);
                    continue;
                }
                let _ = write!(out, "{:>6}", cell.t);
                for col in TABLE_COLUMNS {
                    let v = cell
                        .rows
                        .iter()
                        .find(|r| r.parameter == col)
                        .map(|r| match pick {
                            0 => r.bias,
                            1 => r.sd_ratio,
                            2 => r.size,
                            _ => r.power,
                        });
                    match v {
                        Some(v) => {
                            let _ = write!(out, "{v:>9.3}");
                        }
                        None => {
                            let _ = write!(out, "{:>9}", "-");
                        }
                    }
                }
                let _ = writeln!(out);
            }
        }
        let mut notes = Vec::new();
        for cell in &cells {
            notes.push(format!(
                "T={}: {}/{} converged, {} relabeled{}",
                cell.t,
                cell.n_converged,
                cell.n_reps,
                cell.n_relabeled,
                if cell.low_precision { " [low precision]" } else { "" }
            ));
        }
        let _ = writeln!(out, "({})", notes.join("; "));
        let _ = writeln!(
            out,
            "Note: power rows for sigma parameters test a boundary null; interpret with caution."
        );
        let _ = writeln!(out);
    }
    out
}

pub fn mixing_report_to_csv(report: &MixingReport) -> String {
    let mut out = String::from(
        "segment_len,product_bound,exact_tv,bound_satisfied,dobrushin_product,max_step_excess\n",
    );
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.segment_len,
            fmt_f64(r.product_bound),
            fmt_f64(r.exact_tv),
            r.bound_satisfied,
            fmt_f64(r.dobrushin_product),
            fmt_f64(r.max_step_excess)
        );
    }
    let _ = writeln!(
        out,
        "# max_violation = {}, n_violations = {}",
        fmt_f64(report.max_violation),
        report.n_violations
    );
    out
}

/// Machine-readable fit result.
pub fn estimation_result_to_json(result: &EstimationResult) -> serde_json::Value {
    let layout = Layout::new(&result.config);
    let estimates: Vec<f64> =
        (0..layout.n_free()).map(|j| layout.get_free(&result.theta_hat, j)).collect();
    let mat = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
    };
    serde_json::json!({
        "config": result.config,
        "parameters": result.param_names,
        "estimates": estimates,
        "loglik": result.loglik,
        "mean_loglik": result.mean_loglik,
        "grad_norm": result.grad_norm,
        "converged": result.converged,
        "start_index": result.start_index,
        "n_iter": result.n_iter,
        "n_obs": result.n_obs,
        "hessian": mat(&result.hessian),
        "hessian_neg_definite": result.hessian_neg_definite,
        "cov_hessian": result.cov_hessian.as_ref().map(&mat),
        "cov_sandwich": result.cov_sandwich.as_ref().map(&mat),
        "se_hessian": result.se_hessian,
        "se_sandwich": result.se_sandwich,
        "ar_root_warning": result.ar_root_warning,
    })
}

/// Human-readable estimate table: parameter, estimate, both SE flavors and
/// the t statistic against zero.
pub fn estimation_result_to_table(result: &EstimationResult) -> String {
    let layout = Layout::new(&result.config);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>14} {:>14} {:>14} {:>10}",
        "parameter", "estimate", "se(hessian)", "se(sandwich)", "t (vs 0)"
    );
    for j in 0..layout.n_free() {
        let est = layout.get_free(&result.theta_hat, j);
        let se_h = result.se_hessian.as_ref().map(|v| v[j]);
        let se_s = result.se_sandwich.as_ref().map(|v| v[j]);
        let t = se_h.and_then(|s| if s > 0.0 { Some(est / s) } else { None });
        let fmt_opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:>14.6}"),
            None => format!("{:>14}", "-"),
        };
        let _ = writeln!(
            out,
            "{:<10} {:>14.6} {} {} {}",
            result.param_names[j],
            est,
            fmt_opt(se_h),
            fmt_opt(se_s),
            match t {
                Some(t) => format!("{t:>10.3}"),
                None => format!("{:>10}", "-"),
            }
        );
    }
    let _ = writeln!(
        out,
        "loglik = {:.6} (mean {:.6}), grad norm = {:.2e}, converged = {}, start = {}, iters = {}",
        result.loglik,
        result.mean_loglik,
        result.grad_norm,
        result.converged,
        result.start_index,
        result.n_iter
    );
    if !result.hessian_neg_definite {
        let _ = writeln!(out, "WARNING: Hessian not negative definite; no standard errors reported.");
    }
    if let Some(w) = &result.ar_root_warning {
        let _ = writeln!(out, "WARNING: {w}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = crate::simulate::DgpSpec::study(0.8, 50, 3, 1);
        let data = crate::simulate::simulate_dgp(&spec).unwrap();
        let text = dataset_to_csv(&data);
        assert!(text.starts_with("t,y,z,s_true\n"));
        let back = parse_dataset_csv(&text).unwrap();
        assert_eq!(data, back);
        // Without the regime column.
        let bare = Dataset { s_true: None, ..data.clone() };
        let text2 = dataset_to_csv(&bare);
        assert!(text2.starts_with("t,y,z\n"));
        assert_eq!(parse_dataset_csv(&text2).unwrap(), bare);
    }

    #[test]
    fn parse_errors_name_row_and_column() {
        let bad = "t,y,z\n0,1.0,2.0\n1,oops,2.0\n";
        match parse_dataset_csv(bad) {
            Err(TvtpError::DataFormat(msg)) => {
                assert!(msg.contains("row 2"), "{msg}");
                assert!(msg.contains("column 2"), "{msg}");
                assert!(msg.contains('y'), "{msg}");
            }
            other => panic!("expected data format error, got {other:?}"),
        }
        assert!(parse_dataset_csv("wrong,header\n").is_err());
        assert!(parse_dataset_csv("t,y,z\n5,1.0,2.0\n").is_err());
        assert!(parse_dataset_csv("t,y,z\n").is_err());
    }

    #[test]
    fn mc_table_has_paper_layout() {
        let design = crate::mc::MCDesign::desk(0.0, 64, 4, 9);
        let report = crate::mc::run_monte_carlo_with(&design, |_, config, truth, _| {
            let layout = Layout::new(config);
            Ok(crate::mc::RepOutcome {
                estimates: (0..layout.n_free()).map(|j| layout.get_free(truth, j)).collect(),
                se_hessian: Some(vec![1.0; layout.n_free()]),
                converged: true,
                relabeled: false,
            })
        })
        .unwrap();
        let table = mc_report_to_table(&report);
        assert!(table.contains("Partial ML (rho = 0)"));
        assert!(table.contains("Joint ML (rho = 0)"));
        assert!(table.contains("Bias"));
        assert!(table.contains("Size"));
        assert!(table.contains("boundary"));
        let csv = mc_report_to_csv(&report);
        assert!(csv.lines().count() > 9);
        assert!(csv.starts_with("estimator,rho,T,parameter"));
    }
}
