//! Quarterly macro series and CSV ingestion.
//!
//! Two layouts are accepted:
//!
//! * one combined quarterly file with header `date,y,u,r`;
//! * one file per series with header `date,value` (the layout of a FRED
//!   download). Monthly files are collapsed to quarterly by keeping the last
//!   month of each quarter; quarterly files pass through unchanged.
//!
//! Dates may be written `YYYY-MM-DD`, `YYYY-MM` or `YYYYQn`. A monthly or
//! daily date is mapped to the quarter containing it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A calendar quarter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    pub year: i32,
    pub q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Option<Self> {
        (1..=4).contains(&q).then_some(Quarter { year, q })
    }

    pub fn next(self) -> Quarter {
        if self.q == 4 {
            Quarter {
                year: self.year + 1,
                q: 1,
            }
        } else {
            Quarter {
                year: self.year,
                q: self.q + 1,
            }
        }
    }

    /// First month of the quarter, 1-based.
    pub fn first_month(self) -> u32 {
        3 * (self.q as u32 - 1) + 1
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

/// Parsed date: quarter plus month when the input carried one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ParsedDate {
    quarter: Quarter,
    month: Option<u32>,
}

impl FromStr for ParsedDate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if let Some((y, q)) = s.split_once(['Q', 'q']) {
            let year: i32 = y
                .trim_end_matches(['-', ' '])
                .parse()
                .map_err(|_| format!("bad year in `{s}`"))?;
            let q: u8 = q.parse().map_err(|_| format!("bad quarter in `{s}`"))?;
            let quarter = Quarter::new(year, q).ok_or_else(|| format!("quarter out of range in `{s}`"))?;
            return Ok(ParsedDate { quarter, month: None });
        }
        let mut parts = s.split(['-', '/']);
        let year: i32 = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| format!("bad year in `{s}`"))?;
        let month: u32 = parts
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| format!("bad month in `{s}`"))?;
        if !(1..=12).contains(&month) {
            return Err(format!("month out of range in `{s}`"));
        }
        if let Some(day) = parts.next() {
            let day: u32 = day.parse().map_err(|_| format!("bad day in `{s}`"))?;
            if !(1..=31).contains(&day) {
                return Err(format!("day out of range in `{s}`"));
            }
        }
        let quarter = Quarter {
            year,
            q: ((month - 1) / 3 + 1) as u8,
        };
        Ok(ParsedDate {
            quarter,
            month: Some(month),
        })
    }
}

/// The three quarterly series: inflation `y`, unemployment `u`, short rate `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroSeries {
    dates: Vec<Quarter>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub r: Vec<f64>,
}

impl MacroSeries {
    pub fn new(dates: Vec<Quarter>, y: Vec<f64>, u: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        let n = dates.len();
        if y.len() != n || u.len() != n || r.len() != n {
            return Err(Error::Misaligned(format!(
                "lengths dates={n}, y={}, u={}, r={}",
                y.len(),
                u.len(),
                r.len()
            )));
        }
        for w in dates.windows(2) {
            if w[1] != w[0].next() {
                return Err(Error::Gap {
                    path: "<series>".into(),
                    before: w[0].to_string(),
                    after: w[1].to_string(),
                });
            }
        }
        Ok(MacroSeries { dates, y, u, r })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[Quarter] {
        &self.dates
    }

    /// Leading `len` quarters.
    pub fn truncate(&self, len: usize) -> MacroSeries {
        let len = len.min(self.len());
        MacroSeries {
            dates: self.dates[..len].to_vec(),
            y: self.y[..len].to_vec(),
            u: self.u[..len].to_vec(),
            r: self.r[..len].to_vec(),
        }
    }

    /// Builds a series with consecutive quarters starting at `start`.
    pub fn from_start(start: Quarter, y: Vec<f64>, u: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        let mut dates = Vec::with_capacity(y.len());
        let mut q = start;
        for _ in 0..y.len() {
            dates.push(q);
            q = q.next();
        }
        MacroSeries::new(dates, y, u, r)
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or(Error::Empty("csv file has no header"))?;
    let header: Vec<String> = header.split(',').map(|h| h.trim().to_ascii_lowercase()).collect();
    let rows = lines
        .map(|(n, l)| (n, l.split(',').map(|c| c.trim().to_string()).collect()))
        .collect();
    Ok(Table { header, rows })
}

fn parse_err(path: &Path, line: usize, column: &str, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        column: column.to_string(),
        reason: reason.into(),
    }
}

fn column(table: &Table, path: &Path, names: &[&str]) -> Result<usize> {
    table
        .header
        .iter()
        .position(|h| names.contains(&h.as_str()))
        .ok_or_else(|| parse_err(path, 1, names[0], "missing column"))
}

fn cell<'a>(row: &'a [String], idx: usize, path: &Path, line: usize, name: &str) -> Result<&'a str> {
    row.get(idx)
        .map(|s| s.as_str())
        .ok_or_else(|| parse_err(path, line, name, "missing cell"))
}

fn number(s: &str, path: &Path, line: usize, name: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(path, line, name, format!("non-numeric value `{s}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, name, format!("non-finite value `{s}`")));
    }
    Ok(v)
}

fn check_consecutive(path: &Path, dates: &[Quarter]) -> Result<()> {
    for w in dates.windows(2) {
        if w[1] <= w[0] {
            return Err(parse_err(
                path,
                0,
                "date",
                format!("dates not strictly increasing: {} then {}", w[0], w[1]),
            ));
        }
        if w[1] != w[0].next() {
            return Err(Error::Gap {
                path: path.display().to_string(),
                before: w[0].to_string(),
                after: w[1].to_string(),
            });
        }
    }
    Ok(())
}

/// Reads a combined quarterly file with columns `date,y,u,r`.
pub fn ingest_quarterly(path: impl AsRef<Path>) -> Result<MacroSeries> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let cd = column(&table, path, &["date"])?;
    let cy = column(&table, path, &["y"])?;
    let cu = column(&table, path, &["u"])?;
    let cr = column(&table, path, &["r"])?;
    let (mut dates, mut y, mut u, mut r) = (vec![], vec![], vec![], vec![]);
    for (line, row) in &table.rows {
        let d: ParsedDate = cell(row, cd, path, *line, "date")?
            .parse()
            .map_err(|e: String| parse_err(path, *line, "date", e))?;
        if let Some(prev) = dates.last() {
            if d.quarter <= *prev {
                return Err(parse_err(
                    path,
                    *line,
                    "date",
                    format!("dates not strictly increasing: {} then {}", prev, d.quarter),
                ));
            }
            if d.quarter != prev.next() {
                return Err(Error::Gap {
                    path: path.display().to_string(),
                    before: prev.to_string(),
                    after: d.quarter.to_string(),
                });
            }
        }
        dates.push(d.quarter);
        y.push(number(cell(row, cy, path, *line, "y")?, path, *line, "y")?);
        u.push(number(cell(row, cu, path, *line, "u")?, path, *line, "u")?);
        r.push(number(cell(row, cr, path, *line, "r")?, path, *line, "r")?);
    }
    if dates.is_empty() {
        return Err(Error::Empty("no data rows"));
    }
    MacroSeries::new(dates, y, u, r)
}

/// Reads a `date,value` file and returns it at quarterly frequency.
///
/// Monthly input keeps the value of the last month in each quarter; a quarter
/// whose last month is missing is a gap.
pub fn ingest_single_series(path: impl AsRef<Path>) -> Result<Vec<(Quarter, f64)>> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let cd = column(&table, path, &["date", "observation_date"])?;
    let cv = if table.header.len() == 2 {
        1 - cd
    } else {
        column(&table, path, &["value"])?
    };
    let mut obs: Vec<(ParsedDate, f64, usize)> = Vec::new();
    for (line, row) in &table.rows {
        let d: ParsedDate = cell(row, cd, path, *line, "date")?
            .parse()
            .map_err(|e: String| parse_err(path, *line, "date", e))?;
        let v = number(cell(row, cv, path, *line, "value")?, path, *line, "value")?;
        obs.push((d, v, *line));
    }
    if obs.is_empty() {
        return Err(Error::Empty("no data rows"));
    }
    let monthly = obs.windows(2).any(|w| w[0].0.quarter == w[1].0.quarter);
    let mut out: Vec<(Quarter, f64)> = Vec::new();
    if monthly {
        let mut prev_month: Option<(i32, u32)> = None;
        for (d, v, line) in &obs {
            let month = d
                .month
                .ok_or_else(|| parse_err(path, *line, "date", "monthly file needs month dates"))?;
            let key = (d.quarter.year, month);
            if let Some(p) = prev_month {
                if key <= p {
                    return Err(parse_err(path, *line, "date", "dates not strictly increasing"));
                }
            }
            prev_month = Some(key);
            if month % 3 == 0 {
                out.push((d.quarter, *v));
            }
        }
    } else {
        out = obs.iter().map(|(d, v, _)| (d.quarter, *v)).collect();
    }
    let dates: Vec<Quarter> = out.iter().map(|(q, _)| *q).collect();
    check_consecutive(path, &dates)?;
    Ok(out)
}

/// Combines three `date,value` files on their common quarterly range.
pub fn ingest_series_files(
    y_path: impl AsRef<Path>,
    u_path: impl AsRef<Path>,
    r_path: impl AsRef<Path>,
) -> Result<MacroSeries> {
    let ys = ingest_single_series(y_path)?;
    let us = ingest_single_series(u_path)?;
    let rs = ingest_single_series(r_path)?;
    let start = ys[0].0.max(us[0].0).max(rs[0].0);
    let end = ys.last().unwrap().0.min(us.last().unwrap().0).min(rs.last().unwrap().0);
    if end < start {
        return Err(Error::Misaligned("series do not overlap".into()));
    }
    let pick = |s: &[(Quarter, f64)]| -> Vec<f64> {
        s.iter()
            .filter(|(q, _)| *q >= start && *q <= end)
            .map(|(_, v)| *v)
            .collect()
    };
    let y = pick(&ys);
    let dates: Vec<Quarter> = ys
        .iter()
        .map(|(q, _)| *q)
        .filter(|q| *q >= start && *q <= end)
        .collect();
    MacroSeries::new(dates, y, pick(&us), pick(&rs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_date_formats() {
        let d: ParsedDate = "1961-01-01".parse().unwrap();
        assert_eq!(d.quarter, Quarter { year: 1961, q: 1 });
        let d: ParsedDate = "2022Q4".parse().unwrap();
        assert_eq!(d.quarter, Quarter { year: 2022, q: 4 });
        let d: ParsedDate = "1999-08".parse().unwrap();
        assert_eq!(d.quarter, Quarter { year: 1999, q: 3 });
        assert!("1999-13-01".parse::<ParsedDate>().is_err());
        assert!("1999Q5".parse::<ParsedDate>().is_err());
    }

    #[test]
    fn quarterly_file() {
        let f = write("date,y,u,r\n1961-01-01,1.0,6.8,2.4\n1961-04-01,1.2,7.0,2.3\n1961Q3,1.1,6.9,2.2\n");
        let s = ingest_quarterly(f.path()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.dates()[2], Quarter { year: 1961, q: 3 });
        assert_eq!(s.u, vec![6.8, 7.0, 6.9]);
    }

    #[test]
    fn missing_quarter_names_the_gap() {
        let f = write("date,y,u,r\n1961-01-01,1,1,1\n1961-07-01,1,1,1\n");
        let err = ingest_quarterly(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Gap { .. }));
        assert!(msg.contains("1961Q1") && msg.contains("1961Q3"), "{msg}");
    }

    #[test]
    fn non_numeric_cell_reports_row_and_column() {
        let f = write("date,y,u,r\n1961-01-01,1,1,1\n1961-04-01,1,abc,1\n");
        match ingest_quarterly(f.path()).unwrap_err() {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "u");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn non_monotone_dates_rejected() {
        let f = write("date,y,u,r\n1961-04-01,1,1,1\n1961-01-01,1,1,1\n");
        assert!(ingest_quarterly(f.path()).is_err());
    }

    #[test]
    fn monthly_collapses_to_last_month_of_quarter() {
        let mut s = String::from("DATE,VALUE\n");
        for m in 1..=12 {
            s.push_str(&format!("2000-{m:02}-01,{}\n", m as f64 * 10.0));
        }
        let f = write(&s);
        let q = ingest_single_series(f.path()).unwrap();
        assert_eq!(q.len(), 4);
        assert_eq!(
            q.iter().map(|(_, v)| *v).collect::<Vec<_>>(),
            vec![30.0, 60.0, 90.0, 120.0]
        );
        assert_eq!(q[3].0, Quarter { year: 2000, q: 4 });
    }

    #[test]
    fn series_files_align_on_common_range() {
        let y = write("date,value\n2000-01-01,1\n2000-04-01,2\n2000-07-01,3\n");
        let mut m = String::from("date,value\n");
        for mo in 4..=12 {
            m.push_str(&format!("2000-{mo:02}-01,{mo}\n"));
        }
        let u = write(&m);
        let r = write(&m);
        let s = ingest_series_files(y.path(), u.path(), r.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.y, vec![2.0, 3.0]);
        assert_eq!(s.u, vec![6.0, 9.0]);
    }

    #[test]
    fn bundled_substitute_dataset() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/us_macro_1961q1_2009q3.csv");
        let s = ingest_quarterly(path).unwrap();
        assert_eq!(s.len(), 195);
        assert_eq!(s.dates()[0], Quarter { year: 1961, q: 1 });
        assert_eq!(s.dates()[116], Quarter { year: 1990, q: 1 });
    }
}
