//! Output file formats. Every CSV starts with a `# config_hash=... seed=...`
//! line and every JSON document carries the same two fields under
//! `provenance`, so any file can be traced back to the configuration that
//! produced it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::classify::{adjusted_rand, Classification, Group, Method};
use crate::data::{MarketSeries, DATE_FORMAT};
use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::regime::FilterOutput;

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!("config_hash={} seed={}", self.config_hash, self.seed)
    }

    /// Parses the first line of a file written by this module.
    pub fn parse(line: &str) -> Option<Self> {
        let body = line.trim().strip_prefix('#')?.trim();
        let mut hash = None;
        let mut seed = None;
        for part in body.split_whitespace() {
            if let Some(v) = part.strip_prefix("config_hash=") {
                hash = Some(v.to_string());
            } else if let Some(v) = part.strip_prefix("seed=") {
                seed = v.parse().ok();
            }
        }
        Some(Self {
            config_hash: hash?,
            seed: seed?,
        })
    }
}

/// A JSON document tagged with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tagged<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Tagged<T> {
    pub fn new(prov: &Provenance, body: T) -> Self {
        Self {
            provenance: prov.clone(),
            body,
        }
    }
}

pub fn write_json<T: Serialize, W: Write>(prov: &Provenance, body: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &Tagged::new(prov, body))?;
    out.write_all(b"\n")?;
    Ok(())
}

fn fmt_date(d: &NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

fn csv_writer<W: Write>(prov: &Provenance, mut out: W) -> Result<csv::Writer<W>> {
    writeln!(out, "# {}", prov.line())?;
    Ok(csv::Writer::from_writer(out))
}

/// Per-day regime probabilities and conditional means.
pub fn write_filter_csv<W: Write>(prov: &Provenance, dates: &[NaiveDate], f: &FilterOutput, out: W) -> Result<()> {
    if dates.len() != f.len() {
        return Err(Error::Input(format!("{} dates for {} filter rows", dates.len(), f.len())));
    }
    let k = f.k();
    let mut w = csv_writer(prov, out)?;
    let mut header = vec!["date".to_string()];
    for prefix in ["predicted", "filtered", "smoothed"] {
        header.extend((0..k).map(|j| format!("{prefix}_{j}")));
    }
    header.extend(["mu_onestep".into(), "mu_smoothed".into(), "loglik_term".into()]);
    w.write_record(&header)?;
    for (t, d) in dates.iter().enumerate() {
        let mut rec = vec![fmt_date(d)];
        for m in [&f.predicted, &f.filtered, &f.smoothed] {
            rec.extend(m.row(t).iter().map(f64::to_string));
        }
        rec.push(f.mu_onestep[t].to_string());
        rec.push(f.mu_smoothed[t].to_string());
        rec.push(f.loglik_terms[t].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// The parts of a filter file needed downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTable {
    pub provenance: Option<Provenance>,
    pub dates: Vec<NaiveDate>,
    /// `smoothed[t][j]`.
    pub smoothed: Vec<Vec<f64>>,
    pub mu_onestep: Vec<f64>,
    pub mu_smoothed: Vec<f64>,
}

/// Splits off a leading provenance comment, returning the remaining text.
fn read_with_provenance<R: BufRead>(mut reader: R) -> Result<(Option<Provenance>, String)> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut prov = None;
    let mut body = String::with_capacity(text.len());
    for line in text.lines() {
        if line.starts_with('#') {
            if prov.is_none() {
                prov = Provenance::parse(line);
            }
            continue;
        }
        body.push_str(line);
        body.push('\n');
    }
    Ok((prov, body))
}

fn parse_num(s: &str, row: usize, column: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::NumberParse {
        row,
        column: column.to_string(),
        value: s.to_string(),
    })
}

fn parse_date(s: &str, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).map_err(|_| Error::DateParse {
        row,
        value: s.to_string(),
    })
}

pub fn read_filter_csv<R: BufRead>(reader: R) -> Result<FilterTable> {
    let (provenance, body) = read_with_provenance(reader)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let date_col = col("date")?;
    let smoothed_cols: Vec<(String, usize)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("smoothed_"))
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    if smoothed_cols.is_empty() {
        return Err(Error::MissingColumn("smoothed_0".into()));
    }
    let (mu1, mu2) = (col("mu_onestep")?, col("mu_smoothed")?);
    let mut table = FilterTable {
        provenance,
        dates: Vec::new(),
        smoothed: Vec::new(),
        mu_onestep: Vec::new(),
        mu_smoothed: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        table.dates.push(parse_date(&rec[date_col], row)?);
        table.smoothed.push(
            smoothed_cols
                .iter()
                .map(|(name, c)| parse_num(&rec[*c], row, name))
                .collect::<Result<_>>()?,
        );
        table.mu_onestep.push(parse_num(&rec[mu1], row, "mu_onestep")?);
        table.mu_smoothed.push(parse_num(&rec[mu2], row, "mu_smoothed")?);
    }
    Ok(table)
}

/// Plain-text estimates table with robust standard errors in parentheses.
pub fn estimates_table(prov: &Provenance, fit: &FitResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}", prov.line());
    let _ = writeln!(s, "model: {}  regimes: {}", fit.model.variant.as_str(), fit.model.k());
    let width = fit.names.iter().map(String::len).max().unwrap_or(0).max(9);
    for (i, name) in fit.names.iter().enumerate() {
        let se = match &fit.se {
            Some(se) => format!("({:.4})", se[i]),
            None => "(n/a)".into(),
        };
        let _ = writeln!(s, "{name:<width$}  {:>12.4}  {se:>12}", fit.estimates[i]);
    }
    let _ = writeln!(s, "{:<width$}  {:>12.3}", "loglik", fit.loglik);
    let _ = writeln!(s, "{:<width$}  {:>12.3}", "AIC", fit.aic);
    let _ = writeln!(s, "{:<width$}  {:>12.3}", "BIC", fit.bic);
    for (j, d) in fit.durations.iter().enumerate() {
        let shown = d.map_or("inf".to_string(), |v| format!("{v:.1}"));
        let _ = writeln!(s, "{:<width$}  {shown:>12}", format!("duration{j}"));
    }
    if let Some(w) = &fit.se_warning {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// One row per announcement with the group assigned by each method.
pub fn write_classification_csv<W: Write>(prov: &Provenance, results: &[Classification], out: W) -> Result<()> {
    let Some(first) = results.first() else {
        return Err(Error::EmptyTask("no classification to write".into()));
    };
    let mut w = csv_writer(prov, out)?;
    let mut header: Vec<String> = ["date", "p_prev", "p_t", "delta_p", "phi_prev", "phi_t"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(results.iter().map(|c| c.method.as_str().to_string()));
    w.write_record(&header)?;
    for (i, e) in first.effects.iter().enumerate() {
        let mut rec = vec![
            fmt_date(&e.date),
            e.p_prev.to_string(),
            e.p_t.to_string(),
            e.delta_p.to_string(),
            e.phi_prev.to_string(),
            e.phi_t.to_string(),
        ];
        for c in results {
            rec.push(c.effects[i].group.map_or("", Group::as_str).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-announcement labels read back from a classification file.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnouncementTable {
    pub provenance: Option<Provenance>,
    pub dates: Vec<NaiveDate>,
    pub labels: BTreeMap<Method, Vec<Group>>,
}

fn parse_group(s: &str, row: usize) -> Result<Group> {
    Group::ALL
        .iter()
        .copied()
        .find(|g| g.as_str() == s.trim())
        .ok_or_else(|| Error::Validation {
            row,
            message: format!("unknown group `{s}`"),
        })
}

pub fn read_classification_csv<R: BufRead>(reader: R) -> Result<AnnouncementTable> {
    let (provenance, body) = read_with_provenance(reader)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    let date_col = headers
        .iter()
        .position(|h| h == "date")
        .ok_or_else(|| Error::MissingColumn("date".into()))?;
    let method_cols: Vec<(Method, usize)> = Method::ALL
        .iter()
        .filter_map(|m| headers.iter().position(|h| h == m.as_str()).map(|c| (*m, c)))
        .collect();
    let mut table = AnnouncementTable {
        provenance,
        dates: Vec::new(),
        labels: method_cols.iter().map(|(m, _)| (*m, Vec::new())).collect(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        table.dates.push(parse_date(&rec[date_col], i + 1)?);
        for (m, c) in &method_cols {
            let g = parse_group(&rec[*c], i + 1)?;
            table.labels.get_mut(m).expect("inserted").push(g);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    /// Counts with the two Plank cases merged.
    pub counts: BTreeMap<String, usize>,
    /// Mean `delta_p` per merged group.
    pub centers: BTreeMap<String, f64>,
    /// Counts before merging (SP-level distinguishes low and high Plank).
    pub counts_unmerged: BTreeMap<String, usize>,
    pub u: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub announcements: usize,
    /// Calendar dates with no trading day or no predecessor in the sample.
    pub skipped: Vec<String>,
    pub methods: BTreeMap<String, MethodSummary>,
    pub ari_methods: Vec<String>,
    /// Pairwise adjusted Rand index on the merged labels.
    pub ari: Vec<Vec<f64>>,
}

fn keyed<V: Clone>(m: &BTreeMap<Group, V>) -> BTreeMap<String, V> {
    m.iter().map(|(g, v)| (g.as_str().to_string(), v.clone())).collect()
}

pub fn classification_summary(results: &[Classification], skipped: &[NaiveDate]) -> Result<ClassificationSummary> {
    let methods = results
        .iter()
        .map(|c| {
            let (counts, centers) = c.merged_summary();
            (
                c.method.as_str().to_string(),
                MethodSummary {
                    counts: keyed(&counts),
                    centers: keyed(&centers),
                    counts_unmerged: keyed(&c.group_counts),
                    u: c.u,
                    flags: c.flags.clone(),
                },
            )
        })
        .collect();
    let mut ari = vec![vec![0.0; results.len()]; results.len()];
    for (i, a) in results.iter().enumerate() {
        for (j, b) in results.iter().enumerate() {
            ari[i][j] = adjusted_rand(&a.merged_labels(), &b.merged_labels())?;
        }
    }
    Ok(ClassificationSummary {
        announcements: results.first().map_or(0, |c| c.effects.len()),
        skipped: skipped.iter().map(fmt_date).collect(),
        methods,
        ari_methods: results.iter().map(|c| c.method.as_str().to_string()).collect(),
        ari,
    })
}

/// Tidy per-day series for external plotting.
pub fn write_plot_csv<W: Write>(prov: &Provenance, series: &MarketSeries, phi: &[f64], p_high: &[f64], out: W) -> Result<()> {
    if phi.len() != series.len() || p_high.len() != series.len() {
        return Err(Error::Input("plot columns differ in length".into()));
    }
    let mut w = csv_writer(prov, out)?;
    w.write_record(["date", "rv", "phi_hat", "p_smoothed", "announcement"])?;
    for t in 0..series.len() {
        w.write_record([
            fmt_date(&series.dates[t]),
            series.rv[t].to_string(),
            phi[t].to_string(),
            p_high[t].to_string(),
            series.lambda[t].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_residuals_csv<W: Write>(prov: &Provenance, dates: &[NaiveDate], residuals: &[f64], out: W) -> Result<()> {
    let mut w = csv_writer(prov, out)?;
    w.write_record(["date", "residual"])?;
    for (d, r) in dates.iter().zip(residuals) {
        w.write_record([fmt_date(d), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_residuals_csv<R: BufRead>(reader: R) -> Result<(Vec<NaiveDate>, Vec<f64>)> {
    let (_, body) = read_with_provenance(reader)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Validation {
                row: i + 1,
                message: "expected date,residual".into(),
            });
        }
        dates.push(parse_date(&rec[0], i + 1)?);
        values.push(parse_num(&rec[1], i + 1, "residual")?);
    }
    Ok((dates, values))
}

/// A labelled square matrix written as CSV.
pub fn write_matrix_csv<W: Write>(prov: &Provenance, names: &[String], m: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv_writer(prov, out)?;
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in names.iter().zip(m) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
