//! Forecast evaluation: log predictive density ratios, predictive quantiles,
//! interval coverage and trace tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::density::Density;
use crate::error::{invalid, Error, Result};

/// Default quantile levels.
pub const DEFAULT_PROBS: [f64; 3] = [0.05, 0.5, 0.95];

/// Cumulative sum of `method - baseline` from index `start` on.
pub fn lpdr(method: &[f64], baseline: &[f64], start: usize) -> Result<Vec<f64>> {
    if method.len() != baseline.len() {
        return Err(Error::Misaligned(format!(
            "method has {} scores, baseline {}",
            method.len(),
            baseline.len()
        )));
    }
    if start > method.len() {
        return Err(Error::Misaligned(format!(
            "start {start} beyond {} scores",
            method.len()
        )));
    }
    let mut acc = 0.0;
    Ok(method[start..]
        .iter()
        .zip(&baseline[start..])
        .map(|(m, b)| {
            acc += m - b;
            acc
        })
        .collect())
}

fn pdf<D: Density + ?Sized>(d: &D, x: f64) -> f64 {
    d.ln_pdf(x).exp()
}

fn quantile<D: Density + ?Sized>(d: &D, p: f64) -> f64 {
    let (mut lo, mut hi) = d.bracket();
    if lo == hi {
        return lo;
    }
    while d.cdf(lo) > p {
        lo -= 2.0 * (hi - lo);
    }
    while d.cdf(hi) < p {
        hi += 2.0 * (hi - lo);
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let g = d.cdf(x) - p;
        if g.abs() < 1e-10 {
            break;
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-13 * (1.0 + x.abs()) {
            break;
        }
        let dens = pdf(d, x);
        let newton = x - g / dens;
        x = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

/// Quantiles by safeguarded Newton inversion of the analytic CDF.
pub fn predictive_quantiles<D: Density + ?Sized>(density: &D, probs: &[f64]) -> Result<Vec<f64>> {
    if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(invalid("probs", "must lie in (0, 1)"));
    }
    if probs.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("probs", "must be sorted"));
    }
    let mut out: Vec<f64> = probs.iter().map(|&p| quantile(density, p)).collect();
    for i in 1..out.len() {
        out[i] = out[i].max(out[i - 1]);
    }
    Ok(out)
}

/// Fraction of `(lo, hi, y)` triples with `lo <= y <= hi`.
pub fn coverage(intervals: impl IntoIterator<Item = (f64, f64, f64)>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (lo, hi, y) in intervals {
        n += 1;
        if lo <= y && y <= hi {
            hit += 1;
        }
    }
    hit as f64 / n as f64
}

/// One row of a trace table.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRecord {
    pub t: usize,
    pub date: String,
    pub y: f64,
    pub log_scores: Vec<f64>,
    /// 5%, 50% and 95% predictive quantiles.
    pub quantiles: [f64; 3],
    pub ess: Option<f64>,
    pub intervened: bool,
}

/// Trace table: named methods plus one record per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Traces {
    pub methods: Vec<String>,
    pub records: Vec<ForecastRecord>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes comma-separated traces with header
/// `t,date,y,logscore_<method>...,q05,q50,q95,ess,intervened`.
pub fn emit_traces(traces: &Traces, path: impl AsRef<Path>) -> Result<()> {
    if traces.records.is_empty() {
        return Err(Error::Empty("trace records"));
    }
    let k = traces.methods.len();
    if let Some(r) = traces.records.iter().find(|r| r.log_scores.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: r.log_scores.len(),
        });
    }
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = vec!["t".to_string(), "date".into(), "y".into()];
    header.extend(traces.methods.iter().map(|m| format!("logscore_{m}")));
    header.extend(["q05", "q50", "q95", "ess", "intervened"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for r in &traces.records {
        let mut row = vec![r.t.to_string(), r.date.clone(), r.y.to_string()];
        row.extend(r.log_scores.iter().map(f64::to_string));
        row.extend(r.quantiles.iter().map(f64::to_string));
        row.push(fmt_opt(r.ess));
        row.push(u8::from(r.intervened).to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a table written by [`emit_traces`].
pub fn parse_traces(path: impl AsRef<Path>) -> Result<Traces> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let err = |line: usize, column: &str, reason: String| Error::Parse {
        path: path.display().to_string(),
        line,
        column: column.to_string(),
        reason,
    };
    let header: Vec<&str> = lines.next().ok_or(Error::Empty("trace file"))?.split(',').collect();
    let n = header.len();
    if n < 8 || header[..3] != ["t", "date", "y"] || header[n - 5..] != ["q05", "q50", "q95", "ess", "intervened"] {
        return Err(err(1, "header", "unexpected columns".into()));
    }
    let methods = header[3..n - 5]
        .iter()
        .map(|h| {
            h.strip_prefix("logscore_")
                .map(String::from)
                .ok_or_else(|| err(1, h, "expected logscore_<method>".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(err(lineno, "*", format!("expected {n} cells, got {}", cells.len())));
        }
        let num = |j: usize| -> Result<f64> {
            cells[j]
                .parse::<f64>()
                .map_err(|e| err(lineno, header[j], e.to_string()))
        };
        let t = cells[0]
            .parse()
            .map_err(|e: std::num::ParseIntError| err(lineno, "t", e.to_string()))?;
        let ess = if cells[n - 2] == "NA" { None } else { Some(num(n - 2)?) };
        let intervened = match cells[n - 1] {
            "0" => false,
            "1" => true,
            other => return Err(err(lineno, "intervened", format!("expected 0 or 1, got {other}"))),
        };
        records.push(ForecastRecord {
            t,
            date: cells[1].to_string(),
            y: num(2)?,
            log_scores: (3..n - 5).map(num).collect::<Result<_>>()?,
            quantiles: [num(n - 5)?, num(n - 4)?, num(n - 3)?],
            ess,
            intervened,
        });
    }
    if records.is_empty() {
        return Err(Error::Empty("trace records"));
    }
    Ok(Traces { methods, records })
}
