//! Aggregation of per-instance benchmark measurements into quantile tables.
//!
//! Each metric is summarized by the 0.05/0.5/0.95 quantiles (linear
//! interpolation between order statistics), the average, and the standard
//! error `sd/√N`.  When a baseline series is supplied, per-instance ratios
//! `100·value/baseline` are aggregated the same way, so a method measured
//! against itself reports 100 in every ratio column.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("no values to aggregate")]
    Empty,
    #[error("baseline has {baseline} values but the metric has {values}")]
    LengthMismatch { values: usize, baseline: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("baseline value at index {0} is zero; ratio undefined")]
    BaselineZero(usize),
    #[error("quantile level {0} outside [0, 1]")]
    BadLevel(f64),
    #[error("malformed report CSV: {0}")]
    Parse(String),
}

/// Quantile by linear interpolation between order statistics: level `p` maps
/// to fractional rank `p·(n−1)` of the sorted values.  `[1..100]` at 0.5
/// gives 50.5.
pub fn quantile(values: &[f64], p: f64) -> Result<f64, ReportError> {
    if values.is_empty() {
        return Err(ReportError::Empty);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(ReportError::BadLevel(p));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ReportError::NonFinite(i));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        Ok(sorted[lo])
    } else {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean, `sd/√N` with the `N−1` variance estimator;
/// zero for a single observation.
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// One aggregated metric line; ratio columns are percentages against the
/// baseline series and absent when no baseline applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub avg: f64,
    pub stderr: f64,
    pub ratio_q05: Option<f64>,
    pub ratio_q50: Option<f64>,
    pub ratio_q95: Option<f64>,
    pub ratio_avg: Option<f64>,
}

/// Aggregates one metric; `baseline`, when present, must pair with `values`
/// index-by-index (same instances in the same order).
pub fn aggregate(
    metric: &str,
    values: &[f64],
    baseline: Option<&[f64]>,
) -> Result<ReportRow, ReportError> {
    if values.is_empty() {
        return Err(ReportError::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ReportError::NonFinite(i));
    }
    let ratios = match baseline {
        None => None,
        Some(base) => {
            if base.len() != values.len() {
                return Err(ReportError::LengthMismatch {
                    values: values.len(),
                    baseline: base.len(),
                });
            }
            if let Some(i) = base.iter().position(|v| !v.is_finite()) {
                return Err(ReportError::NonFinite(i));
            }
            if let Some(i) = base.iter().position(|v| *v == 0.0) {
                return Err(ReportError::BaselineZero(i));
            }
            Some(
                values
                    .iter()
                    .zip(base)
                    // Grouped so v == b yields exactly 100 (v/b == 1.0).
                    .map(|(v, b)| 100.0 * (v / b))
                    .collect::<Vec<f64>>(),
            )
        }
    };
    let r = ratios.as_deref();
    Ok(ReportRow {
        metric: metric.to_string(),
        q05: quantile(values, 0.05)?,
        q50: quantile(values, 0.50)?,
        q95: quantile(values, 0.95)?,
        avg: mean(values),
        stderr: standard_error(values),
        ratio_q05: r.map(|r| quantile(r, 0.05)).transpose()?,
        ratio_q50: r.map(|r| quantile(r, 0.50)).transpose()?,
        ratio_q95: r.map(|r| quantile(r, 0.95)).transpose()?,
        ratio_avg: r.map(mean),
    })
}

pub const CSV_HEADER: &str =
    "metric,q05,q50,q95,avg,stderr,ratio_q05,ratio_q50,ratio_q95,ratio_avg";

fn fmt_opt(v: Option<f64>) -> String {
    // Display for f64 prints the shortest decimal that parses back to the
    // identical bits, so rendered tables round-trip exactly.
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Renders rows in the fixed column order; header-only for an empty set.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.metric,
            r.q05,
            r.q50,
            r.q95,
            r.avg,
            r.stderr,
            fmt_opt(r.ratio_q05),
            fmt_opt(r.ratio_q50),
            fmt_opt(r.ratio_q95),
            fmt_opt(r.ratio_avg),
        ));
    }
    out
}

fn parse_field(s: &str, line: usize) -> Result<f64, ReportError> {
    s.parse::<f64>()
        .map_err(|e| ReportError::Parse(format!("line {line}: bad number {s:?}: {e}")))
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>, ReportError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, line).map(Some)
    }
}

/// Parses a table produced by [`render_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>, ReportError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(ReportError::Parse(format!(
                "expected header {CSV_HEADER:?}, found {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(ReportError::Parse(format!(
                "line {}: expected 10 fields, found {}",
                i + 2,
                f.len()
            )));
        }
        let n = i + 2;
        rows.push(ReportRow {
            metric: f[0].to_string(),
            q05: parse_field(f[1], n)?,
            q50: parse_field(f[2], n)?,
            q95: parse_field(f[3], n)?,
            avg: parse_field(f[4], n)?,
            stderr: parse_field(f[5], n)?,
            ratio_q05: parse_opt(f[6], n)?,
            ratio_q50: parse_opt(f[7], n)?,
            ratio_q95: parse_opt(f[8], n)?,
            ratio_avg: parse_opt(f[9], n)?,
        });
    }
    Ok(rows)
}

/// Fixed-width plain-text rendering for terminals.
pub fn render_text(rows: &[ReportRow]) -> String {
    let headers = [
        "metric", "q05", "q50", "q95", "avg", "stderr", "r_q05", "r_q50", "r_q95", "r_avg",
    ];
    let cells: Vec<[String; 10]> = rows
        .iter()
        .map(|r| {
            [
                r.metric.clone(),
                format!("{:.4}", r.q05),
                format!("{:.4}", r.q50),
                format!("{:.4}", r.q95),
                format!("{:.4}", r.avg),
                format!("{:.4}", r.stderr),
                r.ratio_q05.map(|v| format!("{v:.2}")).unwrap_or_default(),
                r.ratio_q50.map(|v| format!("{v:.2}")).unwrap_or_default(),
                r.ratio_q95.map(|v| format!("{v:.2}")).unwrap_or_default(),
                r.ratio_avg.map(|v| format!("{v:.2}")).unwrap_or_default(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, fields: &[String]| {
        let rendered: Vec<String> = fields
            .iter()
            .zip(&widths)
            .map(|(f, w)| format!("{f:>w$}", w = w))
            .collect();
        out.push_str(&rendered.join("  "));
        out.push('\n');
    };
    line(&mut out, &headers.map(String::from));
    for row in &cells {
        line(&mut out, row);
    }
    out
}
