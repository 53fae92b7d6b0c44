//! Market data ingestion and alignment.
//!
//! A [`MarketSeries`] holds the daily realized volatility, the asymmetry
//! dummy, the policy proxy with its one-step forecast and the announcement
//! mask. Input is a headered CSV (`date,rv[,ret][,d][,x][,x_hat][,lambda]`);
//! announcement calendars are plain text, one ISO-8601 date per line.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Default autoregressive order for the proxy forecaster.
pub const DEFAULT_AR_LAGS: usize = 4;

/// Aligned daily series ready for estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    pub dates: Vec<NaiveDate>,
    /// Annualized realized volatility, strictly positive.
    pub rv: Vec<f64>,
    /// Same-day return, when the input supplied one.
    pub ret: Option<Vec<f64>>,
    /// 1 when the same-day return is negative.
    pub d: Vec<u8>,
    /// Policy proxy.
    pub x: Option<Vec<f64>>,
    /// One-step conditional expectation of the proxy.
    pub x_hat: Option<Vec<f64>>,
    /// Long-term mean of the proxy.
    pub x_bar: f64,
    /// Announcement mask.
    pub lambda: Vec<u8>,
}

impl MarketSeries {
    pub fn len(&self) -> usize {
        self.rv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rv.is_empty()
    }

    /// `x_hat[t] - x_bar`, or zeros when the series carries no proxy.
    pub fn proxy_deviation(&self) -> Vec<f64> {
        match &self.x_hat {
            Some(xh) => xh.iter().map(|v| v - self.x_bar).collect(),
            None => vec![0.0; self.len()],
        }
    }

    pub fn has_proxy(&self) -> bool {
        self.x_hat.is_some()
    }

    /// Dates flagged in the announcement mask.
    pub fn announcement_dates(&self) -> Vec<NaiveDate> {
        self.dates
            .iter()
            .zip(&self.lambda)
            .filter(|(_, &l)| l == 1)
            .map(|(d, _)| *d)
            .collect()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n < 2 {
            return Err(Error::TooShort { needed: 2, got: n });
        }
        let lens = [
            self.dates.len(),
            self.d.len(),
            self.lambda.len(),
            self.ret.as_ref().map_or(n, Vec::len),
            self.x.as_ref().map_or(n, Vec::len),
            self.x_hat.as_ref().map_or(n, Vec::len),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Input(format!(
                "parallel arrays have unequal lengths: {lens:?} vs {n}"
            )));
        }
        for t in 1..n {
            if self.dates[t] <= self.dates[t - 1] {
                return Err(Error::Validation {
                    row: t + 1,
                    message: "dates are not strictly increasing".into(),
                });
            }
        }
        for (t, &v) in self.rv.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation {
                    row: t + 1,
                    message: format!("rv must be positive and finite, got {v}"),
                });
            }
        }
        if let Some(t) = self.d.iter().position(|&v| v > 1) {
            return Err(Error::Validation {
                row: t + 1,
                message: "d must be 0 or 1".into(),
            });
        }
        if let Some(t) = self.lambda.iter().position(|&v| v > 1) {
            return Err(Error::Validation {
                row: t + 1,
                message: "lambda must be 0 or 1".into(),
            });
        }
        if let Some(xh) = &self.x_hat {
            if let Some(t) = xh.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation {
                    row: t + 1,
                    message: "x_hat must be finite".into(),
                });
            }
        }
        Ok(())
    }
}

/// Column names used when reading a market CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub date: String,
    pub rv: String,
    pub ret: String,
    pub d: String,
    pub x: String,
    pub x_hat: String,
    pub lambda: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            rv: "rv".into(),
            ret: "ret".into(),
            d: "d".into(),
            x: "x".into(),
            x_hat: "x_hat".into(),
            lambda: "lambda".into(),
        }
    }
}

pub fn load_market_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MarketSeries> {
    let file = File::open(path)?;
    read_market_csv(file, schema)
}

/// Reads and validates a market CSV. Rows are sorted by date; `d` is derived
/// from `ret` when that column is present.
pub fn read_market_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<MarketSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let col_date = find(&schema.date).ok_or_else(|| Error::MissingColumn(schema.date.clone()))?;
    let col_rv = find(&schema.rv).ok_or_else(|| Error::MissingColumn(schema.rv.clone()))?;
    let col_ret = find(&schema.ret);
    let col_d = find(&schema.d);
    if col_ret.is_none() && col_d.is_none() {
        return Err(Error::MissingColumn(format!("{} or {}", schema.ret, schema.d)));
    }
    let col_x = find(&schema.x);
    let col_xh = find(&schema.x_hat);
    let col_lambda = find(&schema.lambda);

    struct Row {
        date: NaiveDate,
        line: usize,
        rv: f64,
        ret: Option<f64>,
        d: u8,
        x: Option<f64>,
        x_hat: Option<f64>,
        lambda: u8,
    }

    let parse_num = |rec: &csv::StringRecord, col: usize, name: &str, line: usize| {
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<f64>().map_err(|_| Error::NumberParse {
            row: line,
            column: name.to_string(),
            value: raw.to_string(),
        })
    };
    let parse_flag = |rec: &csv::StringRecord, col: usize, name: &str, line: usize| {
        let v = parse_num(rec, col, name, line)?;
        if v == 0.0 {
            Ok(0u8)
        } else if v == 1.0 {
            Ok(1u8)
        } else {
            Err(Error::Validation {
                row: line,
                message: format!("{name} must be 0 or 1, got {v}"),
            })
        }
    };

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        let raw_date = rec.get(col_date).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, DATE_FORMAT).map_err(|_| Error::DateParse {
            row: line,
            value: raw_date.to_string(),
        })?;
        let rv = parse_num(&rec, col_rv, &schema.rv, line)?;
        if !(rv > 0.0 && rv.is_finite()) {
            return Err(Error::Validation {
                row: line,
                message: format!("rv must be positive, got {rv}"),
            });
        }
        let ret = col_ret
            .map(|c| parse_num(&rec, c, &schema.ret, line))
            .transpose()?;
        let d = match (ret, col_d) {
            (Some(r), _) => u8::from(r < 0.0),
            (None, Some(c)) => parse_flag(&rec, c, &schema.d, line)?,
            (None, None) => unreachable!(),
        };
        let x = col_x.map(|c| parse_num(&rec, c, &schema.x, line)).transpose()?;
        let x_hat = col_xh
            .map(|c| parse_num(&rec, c, &schema.x_hat, line))
            .transpose()?;
        let lambda = col_lambda
            .map(|c| parse_flag(&rec, c, &schema.lambda, line))
            .transpose()?
            .unwrap_or(0);
        rows.push(Row {
            date,
            line,
            rv,
            ret,
            d,
            x,
            x_hat,
            lambda,
        });
    }

    rows.sort_by_key(|r| r.date);
    for w in rows.windows(2) {
        if w[0].date == w[1].date {
            return Err(Error::DuplicateDate {
                row: w[1].line.max(w[0].line),
                date: w[1].date.to_string(),
            });
        }
    }
    if rows.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: rows.len(),
        });
    }

    let mut series = MarketSeries {
        dates: rows.iter().map(|r| r.date).collect(),
        rv: rows.iter().map(|r| r.rv).collect(),
        ret: col_ret.map(|_| rows.iter().map(|r| r.ret.unwrap_or(0.0)).collect()),
        d: rows.iter().map(|r| r.d).collect(),
        x: col_x.map(|_| rows.iter().map(|r| r.x.unwrap_or(0.0)).collect()),
        x_hat: col_xh.map(|_| rows.iter().map(|r| r.x_hat.unwrap_or(0.0)).collect()),
        x_bar: 0.0,
        lambda: rows.iter().map(|r| r.lambda).collect(),
    };
    if let Some(xh) = &series.x_hat {
        if let Some(t) = xh.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                row: t + 1,
                message: "x_hat must be finite".into(),
            });
        }
    }
    series.x_bar = proxy_mean(&series);
    Ok(series)
}

/// Writes the series in the same layout the loader reads. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_market_csv<W: Write>(series: &MarketSeries, mut out: W, preamble: Option<&str>) -> Result<()> {
    if let Some(p) = preamble {
        writeln!(out, "# {p}")?;
    }
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["date", "rv"];
    if series.ret.is_some() {
        header.push("ret");
    }
    header.push("d");
    if series.x.is_some() {
        header.push("x");
    }
    if series.x_hat.is_some() {
        header.push("x_hat");
    }
    header.push("lambda");
    wtr.write_record(&header)?;
    for t in 0..series.len() {
        let mut rec = vec![series.dates[t].format(DATE_FORMAT).to_string(), series.rv[t].to_string()];
        if let Some(r) = &series.ret {
            rec.push(r[t].to_string());
        }
        rec.push(series.d[t].to_string());
        if let Some(x) = &series.x {
            rec.push(x[t].to_string());
        }
        if let Some(xh) = &series.x_hat {
            rec.push(xh[t].to_string());
        }
        rec.push(series.lambda[t].to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Set of announcement dates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnouncementCalendar {
    pub dates: BTreeSet<NaiveDate>,
}

impl AnnouncementCalendar {
    pub fn new(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            dates: dates.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

pub fn load_calendar(path: impl AsRef<Path>) -> Result<AnnouncementCalendar> {
    read_calendar(BufReader::new(File::open(path)?))
}

/// Parses one date per line; `#` starts a comment, blank lines are skipped.
pub fn read_calendar<R: BufRead>(reader: R) -> Result<AnnouncementCalendar> {
    let mut dates = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let date = NaiveDate::parse_from_str(body, DATE_FORMAT).map_err(|_| Error::DateParse {
            row: i + 1,
            value: body.to_string(),
        })?;
        if !dates.insert(date) {
            return Err(Error::DuplicateDate {
                row: i + 1,
                date: date.to_string(),
            });
        }
    }
    Ok(AnnouncementCalendar { dates })
}

pub fn write_calendar<W: Write>(cal: &AnnouncementCalendar, mut out: W, preamble: Option<&str>) -> Result<()> {
    if let Some(p) = preamble {
        writeln!(out, "# {p}")?;
    }
    for d in &cal.dates {
        writeln!(out, "{}", d.format(DATE_FORMAT))?;
    }
    Ok(())
}

/// Sets `lambda[t] = 1` exactly on calendar dates. Calendar dates missing
/// from the series (non-trading days) are returned instead of failing.
pub fn align_announcements(
    series: &MarketSeries,
    cal: &AnnouncementCalendar,
) -> (MarketSeries, Vec<NaiveDate>) {
    let mut out = series.clone();
    for (l, date) in out.lambda.iter_mut().zip(&series.dates) {
        *l = u8::from(cal.dates.contains(date));
    }
    let present: BTreeSet<NaiveDate> = series.dates.iter().copied().collect();
    let absent = cal.dates.difference(&present).copied().collect();
    (out, absent)
}

/// Fitted autoregression on first differences plus the implied forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyForecast {
    pub coefficients: Vec<f64>,
    pub forecasts: Vec<f64>,
}

/// One-step forecasts of the proxy from an AR(`lags`) on first differences,
/// fit by least squares without intercept. The first `lags + 1` entries fall
/// back to the random-walk forecast `x[t-1]` (and `x[0]` at `t = 0`).
pub fn forecast_policy_proxy(x: &[f64], lags: usize) -> Result<ProxyForecast> {
    if lags == 0 {
        return Err(Error::Input("lag order must be at least 1".into()));
    }
    if x.len() < lags + 2 {
        return Err(Error::TooShort {
            needed: lags + 2,
            got: x.len(),
        });
    }
    let diff: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    // diff[i] = x[i+1] - x[i]; regress diff[i] on diff[i-1..=i-lags].
    let rows = diff.len() - lags;
    let design = DMatrix::from_fn(rows, lags, |r, c| diff[r + lags - 1 - c]);
    let target = DVector::from_fn(rows, |r, _| diff[r + lags]);
    let svd = design.svd(true, true);
    let coef = svd
        .solve(&target, 1e-12)
        .map_err(|e| Error::Domain(format!("least squares failed: {e}")))?;
    let coefficients: Vec<f64> = coef.iter().copied().collect();

    let mut forecasts = Vec::with_capacity(x.len());
    forecasts.push(x[0]);
    for t in 1..x.len() {
        if t < lags + 1 {
            forecasts.push(x[t - 1]);
            continue;
        }
        // Differences available up to diff[t-2] = x[t-1] - x[t-2].
        let pred: f64 = coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| c * diff[t - 2 - k])
            .sum();
        forecasts.push(x[t - 1] + pred);
    }
    Ok(ProxyForecast {
        coefficients,
        forecasts,
    })
}

fn proxy_mean(series: &MarketSeries) -> f64 {
    let src = series.x.as_ref().or(series.x_hat.as_ref());
    match src {
        Some(v) if !v.is_empty() => v.iter().sum::<f64>() / v.len() as f64,
        _ => 0.0,
    }
}

/// Sets `x_bar` to the sample mean of `x` (of `x_hat` when `x` is absent).
pub fn demean_proxy(series: &MarketSeries) -> MarketSeries {
    let mut out = series.clone();
    out.x_bar = proxy_mean(series);
    out
}

/// Fills `x_hat` from `x` when the input did not supply it, then demeans.
/// A user-supplied `x_hat` takes precedence.
pub fn prepare_proxy(series: &MarketSeries, lags: usize) -> Result<MarketSeries> {
    let mut out = series.clone();
    if out.x_hat.is_none() {
        if let Some(x) = &out.x {
            out.x_hat = Some(forecast_policy_proxy(x, lags)?.forecasts);
        }
    }
    Ok(demean_proxy(&out))
}
