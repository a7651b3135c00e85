//! File input and byte-stable output for the command-line front end.
//!
//! All numeric CSV cells use 6 decimal places and LF line endings so that
//! reruns with the same seed produce byte-identical files.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::diagnostics::{CounterexampleReport, RegimeReport, StabilityReport};
use crate::error::{Error, Result};
use crate::estimator::EstimateResult;
use crate::simulation::{QqData, RepRecord, SummaryRow};

/// Write `content` to `path`, with `-` meaning stdout.
pub fn write_output(path: &str, content: &str) -> Result<()> {
    if path == "-" {
        print!("{content}");
        Ok(())
    } else {
        std::fs::write(path, content).map_err(Error::Io)
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("config,n,n_x,learner,m_rule,cv,bias,std,std_est,cov95,reps,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            r.config, r.n, r.n_x, r.learner, r.m_rule, r.cv, r.bias, r.std, r.std_est, r.cov95,
            r.reps, r.seed
        ));
    }
    out
}

pub fn raw_csv(rows: &[SummaryRow], raws_per_row: &[Vec<RepRecord>]) -> String {
    let mut out = String::from("config,n,n_x,learner,m_rule,cv,rep,theta_hat,se,degenerate\n");
    for (row, raws) in rows.iter().zip(raws_per_row.iter()) {
        for rec in raws {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.6},{:.6},{}\n",
                row.config,
                row.n,
                row.n_x,
                row.learner,
                row.m_rule,
                row.cv,
                rec.rep,
                rec.theta_hat,
                rec.se,
                u8::from(rec.degenerate)
            ));
        }
    }
    out
}

pub fn stability_csv(reports: &[StabilityReport]) -> String {
    let mut out = String::from(
        "n,m,B,probes,replications,a_train_l1,a_fresh_l2,nu_train_l1,nu_fresh_l2,sup_loo\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.n,
            r.m,
            r.b,
            r.probes,
            r.replications,
            r.a_train_l1,
            r.a_fresh_l2,
            r.nu_train_l1,
            r.nu_fresh_l2,
            r.sup_loo
        ));
    }
    out
}

pub fn counterexample_summary_csv(reports: &[(CounterexampleReport, f64)]) -> String {
    let mut out =
        String::from("n,reps,mean_lambda,ks_exp2,median_equicont,nu_loo_l2,c1_change_freq\n");
    for (r, ks) in reports {
        let mean_lambda = r.lambda.iter().sum::<f64>() / r.lambda.len() as f64;
        let median = median_of(&r.equicont_stat);
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.n, r.replications, mean_lambda, ks, median, r.nu_loo_l2, r.c1_change_frequency
        ));
    }
    out
}

pub fn counterexample_samples_csv(reports: &[(CounterexampleReport, f64)]) -> String {
    let mut out = String::from("n,rep,lambda,equicont\n");
    for (r, _) in reports {
        for (i, (l, e)) in r.lambda.iter().zip(r.equicont_stat.iter()).enumerate() {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", r.n, i, l, e));
        }
    }
    out
}

pub fn qq_csv(qq: &QqData) -> String {
    let mut out = String::from("theoretical,sample\n");
    for (t, s) in &qq.points {
        out.push_str(&format!("{t:.6},{s:.6}\n"));
    }
    out
}

pub fn regime_csv(n: usize, m: usize, b: usize, rule: &str, param: f64, r: &RegimeReport) -> String {
    format!(
        "n,m,B,rule,param,required_B,verdict\n{n},{m},{b},{rule},{param:.6},{:.6},{}\n",
        r.required_b, r.verdict
    )
}

pub fn median_of(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

#[derive(Serialize)]
struct RegimeJson {
    verdict: String,
    explanation: String,
    required_b: f64,
    m: usize,
    b: usize,
}

#[derive(Serialize)]
struct EstimateJson {
    theta_hat: Vec<f64>,
    se: Vec<f64>,
    ci_low: Vec<f64>,
    ci_high: Vec<f64>,
    degenerate: bool,
    min_singular_value: f64,
    mode: String,
    regime_advisory: RegimeJson,
}

pub fn estimate_json(result: &EstimateResult, regime: &RegimeReport, m: usize, b: usize) -> String {
    let payload = EstimateJson {
        theta_hat: result.theta_hat.to_vec(),
        se: result.se.to_vec(),
        ci_low: result.ci_low.to_vec(),
        ci_high: result.ci_high.to_vec(),
        degenerate: result.degenerate,
        min_singular_value: result.min_singular_value,
        mode: result.mode.label(),
        regime_advisory: RegimeJson {
            verdict: regime.verdict.to_string(),
            explanation: regime.explanation.clone(),
            required_b: regime.required_b,
            m,
            b,
        },
    };
    let mut s = serde_json::to_string_pretty(&payload).expect("serializable result");
    s.push('\n');
    s
}

pub fn estimate_csv(result: &EstimateResult) -> String {
    let mut out = String::from(
        "component,theta_hat,se,ci_low,ci_high,degenerate,min_singular_value,mode\n",
    );
    for j in 0..result.theta_hat.len() {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{},{:.6},{}\n",
            j,
            result.theta_hat[j],
            result.se[j],
            result.ci_low[j],
            result.ci_high[j],
            u8::from(result.degenerate),
            result.min_singular_value,
            result.mode.label()
        ));
    }
    out
}

/// Column layout read from a user-supplied CSV: `y` (required), treatment
/// columns `t` or `t0,t1,...`, covariates `x` or `x0,x1,...`, optional
/// instrument `w` columns.
pub fn read_dataset_csv(path: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Schema(format!("cannot read data file '{path}': {e}")))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Schema(format!("bad header in '{path}': {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let group = |prefix: &str| -> Vec<usize> {
        let mut cols: Vec<(u64, usize)> = Vec::new();
        for (idx, h) in headers.iter().enumerate() {
            if h == prefix {
                cols.push((0, idx));
            } else if let Some(rest) = h.strip_prefix(prefix) {
                if let Ok(k) = rest.parse::<u64>() {
                    cols.push((k, idx));
                }
            }
        }
        cols.sort();
        cols.into_iter().map(|(_, idx)| idx).collect()
    };

    let y_col = headers.iter().position(|h| h == "y");
    let t_cols = group("t");
    let x_cols = group("x");
    let w_cols = group("w");

    let mut missing = Vec::new();
    if y_col.is_none() {
        missing.push("y");
    }
    if t_cols.is_empty() {
        missing.push("t");
    }
    if x_cols.is_empty() {
        missing.push("x");
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "data file '{path}' is missing required columns: {}",
            missing.join(", ")
        )));
    }
    let y_col = y_col.expect("checked above");

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Schema(format!("row {}: {e}", i + 2)))?;
        let parsed: Vec<f64> = record
            .iter()
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Schema(format!("row {}: non-numeric cell '{cell}'", i + 2)))
            })
            .collect::<Result<_>>()?;
        if parsed.len() != headers.len() {
            return Err(Error::Schema(format!(
                "row {}: expected {} cells, got {}",
                i + 2,
                headers.len(),
                parsed.len()
            )));
        }
        rows.push(parsed);
    }
    let n = rows.len();
    let gather = |cols: &[usize]| -> Array2<f64> {
        let mut m = Array2::zeros((n, cols.len()));
        for (i, row) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                m[(i, j)] = row[c];
            }
        }
        m
    };
    let x = gather(&x_cols);
    let t = gather(&t_cols);
    let y = Array1::from_iter(rows.iter().map(|r| r[y_col]));
    let w = if w_cols.is_empty() {
        None
    } else {
        Some(gather(&w_cols))
    };
    Dataset::new(x, t, y, w)
}

/// Read `theta_hat` values from a raw replication CSV (as written by the
/// simulate subcommand), optionally filtered by config id and cv.
pub fn read_raw_estimates(
    path: &str,
    config_filter: Option<&str>,
    cv_filter: Option<usize>,
) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Schema(format!("cannot read raw file '{path}': {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("bad header in '{path}': {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("raw file '{path}' lacks column '{name}'")))
    };
    let config_col = col("config")?;
    let cv_col = col("cv")?;
    let theta_col = col("theta_hat")?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Schema(format!("row {}: {e}", i + 2)))?;
        if let Some(cfg) = config_filter {
            if !record[config_col].contains(cfg) {
                continue;
            }
        }
        if let Some(cv) = cv_filter {
            let row_cv: usize = record[cv_col]
                .parse()
                .map_err(|_| Error::Schema(format!("row {}: bad cv cell", i + 2)))?;
            if row_cv != cv {
                continue;
            }
        }
        let theta: f64 = record[theta_col]
            .parse()
            .map_err(|_| Error::Schema(format!("row {}: bad theta_hat cell", i + 2)))?;
        out.push(theta);
    }
    Ok(out)
}
