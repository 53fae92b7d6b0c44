//! Command-line pipeline: `simulate`, `fit`, `classify`, `diagnose`,
//! `compare`.
//!
//! A run is configured by one JSON file (unknown keys are rejected) plus a
//! few flag overrides. The SHA-256 of the effective configuration, with the
//! output location blanked, and the seed are written into every output file.
//! `fit` writes into the output directory; `classify` and `diagnose` read the
//! fit artifacts from that same directory; `compare` reads several of them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::{announcement_deltas, classify, Classification, Method};
use crate::data::{
    align_announcements, load_calendar, load_market_csv, prepare_proxy, write_calendar, write_market_csv,
    AnnouncementCalendar, CsvSchema, MarketSeries, DEFAULT_AR_LAGS,
};
use crate::diagnostics::{cross_correlation_lag1, residual_report, DatedResiduals, ResidualBasis, DEFAULT_LB_LAGS};
use crate::error::{Error, Result};
use crate::estimation::{fit_qml, FitResult, FitSettings, ModelSpec, ModelVariant, DEFAULT_STARTS};
use crate::model::{BaseParams, MsAcmParams, PolicyParams, TransitionMatrix};
use crate::report::{
    classification_summary, estimates_table, read_classification_csv, read_filter_csv, read_residuals_csv,
    write_classification_csv, write_filter_csv, write_json, write_matrix_csv, write_plot_csv, write_residuals_csv,
    Provenance, Tagged,
};
use crate::simulate::{simulate, ExoSpec, SimulateOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;
pub const EXIT_EMPTY: i32 = 4;

/// File names inside a run directory.
pub mod files {
    pub const SERIES: &str = "series.csv";
    pub const STATES: &str = "states.csv";
    pub const CALENDAR: &str = "calendar.csv";
    pub const DATA: &str = "data.csv";
    pub const FIT: &str = "fit.json";
    pub const STARTS: &str = "starts.json";
    pub const FILTER: &str = "filter.csv";
    pub const ESTIMATES: &str = "estimates.txt";
    pub const ANNOUNCEMENTS: &str = "announcements.csv";
    pub const CLASSIFICATION: &str = "classification.json";
    pub const PLOT: &str = "plot.csv";
    pub const DIAGNOSTICS: &str = "diagnostics.json";
    pub const RESIDUALS: &str = "residuals.csv";
    pub const COMPARE_ARI: &str = "compare_ari.csv";
    pub const CROSS_CORRELATION: &str = "cross_correlation.csv";
    pub const COMPARE: &str = "compare.json";
    pub const LOCK: &str = ".msacm.lock";
}

#[derive(Debug, Parser)]
#[command(name = "msacm", version, about = "Markov-switching composite MEM: simulate, fit, classify, diagnose")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["amem", "amemx", "acm", "msacm"])]
    pub model: Option<String>,
    /// Number of regimes for the switching model.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub k: Option<u8>,
    #[arg(long, global = true)]
    pub starts: Option<usize>,
    /// Output (run) directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print a configuration template and exit.
    #[arg(long, global = true)]
    pub init: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate a switching-model series.
    Simulate,
    /// Fit a model by multi-start quasi-maximum likelihood.
    Fit,
    /// Classify announcement days from a fitted run.
    Classify,
    /// Residual diagnostics for a fitted run.
    Diagnose,
    /// Cross-market agreement and residual cross-correlations.
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub starts: usize,
    pub max_evals: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub polish: bool,
    pub standard_errors: bool,
    pub parallel: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let s = FitSettings::default();
        Self {
            starts: DEFAULT_STARTS,
            max_evals: s.max_evals,
            ftol: s.ftol,
            xtol: s.xtol,
            polish: s.polish,
            standard_errors: s.standard_errors,
            parallel: s.parallel,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelFlags {
    /// Estimate the low-regime intercept.
    pub phi0: bool,
    /// Estimate the AR coefficient; the variant default applies when unset.
    pub psi: Option<bool>,
    /// Announcement-dummy term (ACM only).
    pub announcement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Market CSV for `fit`.
    pub input: Option<PathBuf>,
    /// Announcement calendar; overrides any `lambda` column.
    pub calendar: Option<PathBuf>,
    /// Lags of the policy-proxy forecaster.
    pub ar_lags: usize,
    pub schema: CsvSchema,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input: None,
            calendar: None,
            ar_lags: DEFAULT_AR_LAGS,
            schema: CsvSchema::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub residual_basis: ResidualBasis,
    pub lb_lags: Vec<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            residual_basis: ResidualBasis::OneStep,
            lb_lags: DEFAULT_LB_LAGS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub t: usize,
    pub params: MsAcmParams,
    pub exo: ExoSpec,
    pub negative_prob: f64,
    pub announcements: usize,
    pub initial_state: Option<usize>,
    pub start_date: NaiveDate,
}

/// Two-regime parameters in the range typically estimated on a large
/// European index.
pub fn reference_params() -> MsAcmParams {
    MsAcmParams {
        base: BaseParams {
            omega: 0.853,
            alpha: 0.142,
            beta: 0.732,
            gamma: 0.112,
        },
        policy: PolicyParams {
            delta: -0.776,
            phi0: 0.0,
            phi: vec![6.273],
            psi: 0.0,
        },
        trans: TransitionMatrix::two_state(0.964, 0.222).expect("valid rows"),
        theta: vec![8.852, 3.271],
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let opts = SimulateOptions::default();
        Self {
            t: 3000,
            params: reference_params(),
            exo: ExoSpec::Ar1 { coef: 0.9, scale: 0.5 },
            negative_prob: opts.negative_prob,
            announcements: 144,
            initial_state: None,
            start_date: opts.start_date,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelVariant,
    pub k: usize,
    pub optimizer: OptimizerConfig,
    pub flags: ModelFlags,
    pub data: DataConfig,
    pub diagnostics: DiagnosticsConfig,
    /// Run directories for `compare`.
    pub runs: Vec<PathBuf>,
    pub out: PathBuf,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelVariant::MsAcm,
            k: 2,
            optimizer: OptimizerConfig::default(),
            flags: ModelFlags::default(),
            data: DataConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            runs: Vec::new(),
            out: PathBuf::from("run"),
            simulate: SimulateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        if self.optimizer.starts == 0 {
            return Err(Error::Input("optimizer.starts must be at least 1".into()));
        }
        if self.diagnostics.lb_lags.contains(&0) {
            return Err(Error::Input("diagnostics.lb_lags must be positive".into()));
        }
        self.simulate.params.validate()?;
        Ok(())
    }

    pub fn spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::new(self.model, self.k)
            .with_phi0(self.flags.phi0)
            .with_announcement(self.flags.announcement);
        if let Some(psi) = self.flags.psi {
            spec = spec.with_psi(psi);
        }
        spec
    }

    pub fn fit_settings(&self) -> FitSettings {
        let o = &self.optimizer;
        FitSettings {
            starts: o.starts,
            seed: self.seed,
            max_evals: o.max_evals,
            ftol: o.ftol,
            xtol: o.xtol,
            polish: o.polish,
            standard_errors: o.standard_errors,
            parallel: o.parallel,
        }
    }

    /// SHA-256 of the configuration with the output location blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            seed: self.seed,
        }
    }

    /// Applies command-line overrides.
    pub fn apply(&mut self, cli: &Cli) -> Result<()> {
        if let Some(s) = cli.seed {
            self.seed = s;
        }
        if let Some(m) = &cli.model {
            self.model = m.parse()?;
        }
        if let Some(k) = cli.k {
            self.k = usize::from(k);
        }
        if let Some(s) = cli.starts {
            self.optimizer.starts = s;
        }
        if let Some(o) = &cli.out {
            self.out = o.clone();
        }
        Ok(())
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Estimation { .. } | Error::Degenerate(_) | Error::RankDeficient | Error::Domain(_) => EXIT_ESTIMATION,
        Error::EmptyTask(_) | Error::Alignment(_) => EXIT_EMPTY,
        _ => EXIT_INPUT,
    }
}

/// Exclusive claim on an output directory, released on drop.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(files::LOCK);
        OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Input(format!("{} is locked by another run ({})", dir.display(), path.display()))
            } else {
                Error::Io(e)
            }
        })?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))
}

fn read_fit(dir: &Path) -> Result<FitResult> {
    let tagged: Tagged<FitResult> = serde_json::from_reader(open(&dir.join(files::FIT))?)?;
    Ok(tagged.body)
}

fn read_run_series(dir: &Path) -> Result<MarketSeries> {
    let path = dir.join(files::DATA);
    if !path.exists() {
        return Err(Error::Input(format!("{} not found; run `fit` first", path.display())));
    }
    load_market_csv(path, &CsvSchema::default())
}

/// Loads the configured input and applies the calendar and proxy forecaster.
pub fn load_input(cfg: &RunConfig) -> Result<MarketSeries> {
    let input = cfg
        .data
        .input
        .as_ref()
        .ok_or_else(|| Error::Input("data.input is not set".into()))?;
    let mut series = load_market_csv(input, &cfg.data.schema)?;
    if let Some(cal) = &cfg.data.calendar {
        let cal = load_calendar(cal)?;
        series = align_announcements(&series, &cal).0;
    }
    let series = prepare_proxy(&series, cfg.data.ar_lags)?;
    series.validate()?;
    Ok(series)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let sim = &cfg.simulate;
    let opts = SimulateOptions {
        seed: cfg.seed,
        negative_prob: sim.negative_prob,
        initial_state: sim.initial_state,
        announcements: sim.announcements,
        start_date: sim.start_date,
    };
    let path = simulate(&sim.params, sim.t, sim.exo, &opts)?;
    let _lock = RunLock::acquire(&cfg.out)?;
    let prov = cfg.provenance();
    let line = prov.line();
    write_market_csv(&path.series, create(&cfg.out.join(files::SERIES))?, Some(&line))?;

    let mut w = create(&cfg.out.join(files::STATES))?;
    writeln!(w, "# {line}")?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["date", "state", "xi", "mu"])?;
    for t in 0..path.states.len() {
        csv.write_record([
            path.series.dates[t].to_string(),
            path.states[t].to_string(),
            path.xi_true[t].to_string(),
            path.mu_true[t].to_string(),
        ])?;
    }
    csv.flush()?;

    let cal = AnnouncementCalendar::new(path.series.announcement_dates());
    write_calendar(&cal, create(&cfg.out.join(files::CALENDAR))?, Some(&line))?;
    Ok(())
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.spec();
    spec.validate()?;
    let series = load_input(cfg)?;
    if spec.has_delta() && !series.has_proxy() {
        return Err(Error::Input(format!(
            "model `{}` needs a policy proxy column (x or x_hat)",
            spec.variant.as_str()
        )));
    }
    let _lock = RunLock::acquire(&cfg.out)?;
    let prov = cfg.provenance();
    let fit = match fit_qml(&spec, &series, &cfg.fit_settings()) {
        Ok(f) => f,
        Err(Error::Estimation { message, starts }) => {
            write_json(&prov, &serde_json::json!({ "error": message, "starts": starts }), create(&cfg.out.join(files::STARTS))?)?;
            return Err(Error::Estimation { message, starts });
        }
        Err(e) => return Err(e),
    };
    let filter = crate::estimation::filter_output(&spec, &fit.params, &series)?;
    write_market_csv(&series, create(&cfg.out.join(files::DATA))?, Some(&prov.line()))?;
    write_json(&prov, &fit, create(&cfg.out.join(files::FIT))?)?;
    write_filter_csv(&prov, &series.dates, &filter, create(&cfg.out.join(files::FILTER))?)?;
    fs::write(cfg.out.join(files::ESTIMATES), estimates_table(&prov, &fit))?;
    let p = &fit.params.params;
    let intercepts = p.policy.intercepts();
    let phi: Vec<f64> = (0..filter.len())
        .map(|t| filter.smoothed.row(t).iter().zip(&intercepts).map(|(w, c)| w * c).sum())
        .collect();
    let p_high: Vec<f64> = (0..filter.len()).map(|t| 1.0 - filter.smoothed.get(t, 0)).collect();
    write_plot_csv(&prov, &series, &phi, &p_high, create(&cfg.out.join(files::PLOT))?)?;
    Ok(())
}

/// Classification of a fitted two-regime run under all three methods,
/// together with announcement dates that could not be used.
pub fn classify_run(fit: &FitResult, series: &MarketSeries, smoothed: &[Vec<f64>]) -> Result<(Vec<Classification>, Vec<NaiveDate>)> {
    if !fit.model.is_switching() || fit.model.k() != 2 {
        return Err(Error::Input("classification needs a fitted two-regime switching model".into()));
    }
    if smoothed.len() != series.len() {
        return Err(Error::Input(format!(
            "filter has {} rows, data has {}",
            smoothed.len(),
            series.len()
        )));
    }
    let p_high: Vec<f64> = smoothed.iter().map(|r| r[1]).collect();
    let policy = &fit.params.params.policy;
    let (effects, skipped) = announcement_deltas(&series.dates, &p_high, &series.lambda, policy.phi0, policy.phi[0])?;
    if effects.is_empty() {
        return Err(Error::EmptyTask("no announcement falls inside the sample".into()));
    }
    let results = Method::ALL
        .iter()
        .map(|&m| classify(m, &effects))
        .collect::<Result<Vec<_>>>()?;
    Ok((results, skipped))
}

pub fn cmd_classify(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.out;
    let fit = read_fit(dir)?;
    let mut series = read_run_series(dir)?;
    let mut skipped = Vec::new();
    if let Some(cal) = &cfg.data.calendar {
        let (aligned, absent) = align_announcements(&series, &load_calendar(cal)?);
        series = aligned;
        skipped = absent;
    }
    let table = read_filter_csv(open(&dir.join(files::FILTER))?)?;
    if table.dates != series.dates {
        return Err(Error::Input("filter and data dates differ; re-run `fit`".into()));
    }
    let (results, first_day) = classify_run(&fit, &series, &table.smoothed)?;
    skipped.extend(first_day);
    skipped.sort();
    let _lock = RunLock::acquire(dir)?;
    let prov = cfg.provenance();
    write_classification_csv(&prov, &results, create(&dir.join(files::ANNOUNCEMENTS))?)?;
    let summary = classification_summary(&results, &skipped)?;
    write_json(&prov, &summary, create(&dir.join(files::CLASSIFICATION))?)?;
    let policy = &fit.params.params.policy;
    let p_high: Vec<f64> = table.smoothed.iter().map(|r| r[1]).collect();
    let phi = crate::classify::phi_series(policy.phi0, policy.phi[0], &p_high);
    write_plot_csv(&prov, &series, &phi, &p_high, create(&dir.join(files::PLOT))?)?;
    Ok(())
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.out;
    let fit = read_fit(dir)?;
    let series = read_run_series(dir)?;
    let table = read_filter_csv(open(&dir.join(files::FILTER))?)?;
    if table.dates != series.dates {
        return Err(Error::Input("filter and data dates differ; re-run `fit`".into()));
    }
    let mu = match cfg.diagnostics.residual_basis {
        ResidualBasis::OneStep => &table.mu_onestep,
        ResidualBasis::Smoothed => &table.mu_smoothed,
    };
    let resid: Vec<f64> = series.rv.iter().zip(mu).map(|(y, m)| y / m).collect();
    let pi = if fit.ergodic.is_empty() { vec![1.0] } else { fit.ergodic.clone() };
    let report = residual_report(
        resid,
        cfg.diagnostics.residual_basis,
        &cfg.diagnostics.lb_lags,
        &fit.params.params.theta,
        &pi,
    )?;
    let _lock = RunLock::acquire(dir)?;
    let prov = cfg.provenance();
    write_json(&prov, &report, create(&dir.join(files::DIAGNOSTICS))?)?;
    write_residuals_csv(&prov, &series.dates, &report.residuals, create(&dir.join(files::RESIDUALS))?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AriRow {
    pub method: String,
    pub market_a: String,
    pub market_b: String,
    pub ari: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub markets: Vec<String>,
    pub announcements: usize,
    pub ari: Vec<AriRow>,
    /// `cross_correlation[a][b] = corr(eps^a_t, eps^b_{t-1})`; empty when
    /// some run has no residuals.
    pub cross_correlation: Vec<Vec<f64>>,
}

fn market_names(runs: &[PathBuf]) -> Vec<String> {
    let base: Vec<String> = runs
        .iter()
        .map(|p| {
            p.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string())
        })
        .collect();
    let unique: BTreeSet<&String> = base.iter().collect();
    if unique.len() == base.len() {
        base
    } else {
        runs.iter().map(|p| p.display().to_string()).collect()
    }
}

pub fn compare_runs(runs: &[PathBuf]) -> Result<CompareReport> {
    if runs.len() < 2 {
        return Err(Error::Input(format!("compare needs at least two runs, got {}", runs.len())));
    }
    let names = market_names(runs);
    let tables = runs
        .iter()
        .map(|r| read_classification_csv(open(&r.join(files::ANNOUNCEMENTS))?))
        .collect::<Result<Vec<_>>>()?;
    let reference: BTreeSet<NaiveDate> = tables[0].dates.iter().copied().collect();
    let mut mismatch = BTreeSet::new();
    for t in &tables[1..] {
        let dates: BTreeSet<NaiveDate> = t.dates.iter().copied().collect();
        mismatch.extend(reference.symmetric_difference(&dates).copied());
    }
    if !mismatch.is_empty() {
        return Err(Error::Alignment(mismatch.iter().map(|d| d.to_string()).collect()));
    }
    let mut ari = Vec::new();
    for m in Method::ALL {
        for i in 0..tables.len() {
            for j in i + 1..tables.len() {
                let (Some(a), Some(b)) = (tables[i].labels.get(&m), tables[j].labels.get(&m)) else {
                    continue;
                };
                let merged = |v: &[crate::classify::Group]| v.iter().map(|g| g.merged()).collect::<Vec<_>>();
                ari.push(AriRow {
                    method: m.as_str().to_string(),
                    market_a: names[i].clone(),
                    market_b: names[j].clone(),
                    ari: crate::classify::adjusted_rand(&merged(a), &merged(b))?,
                });
            }
        }
    }
    let cross_correlation = if runs.iter().all(|r| r.join(files::RESIDUALS).exists()) {
        let mut sets = BTreeMap::new();
        for (name, r) in names.iter().zip(runs) {
            let (dates, values) = read_residuals_csv(open(&r.join(files::RESIDUALS))?)?;
            sets.insert(name.clone(), DatedResiduals { dates, values });
        }
        let (order, m) = cross_correlation_lag1(&sets)?;
        // Reorder from sorted keys to run order.
        let pos: Vec<usize> = names
            .iter()
            .map(|n| order.iter().position(|o| o == n).expect("same keys"))
            .collect();
        pos.iter().map(|&i| pos.iter().map(|&j| m[i][j]).collect()).collect()
    } else {
        Vec::new()
    };
    Ok(CompareReport {
        markets: names,
        announcements: tables[0].dates.len(),
        ari,
        cross_correlation,
    })
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<()> {
    let report = compare_runs(&cfg.runs)?;
    let _lock = RunLock::acquire(&cfg.out)?;
    let prov = cfg.provenance();
    let w = create(&cfg.out.join(files::COMPARE_ARI))?;
    let mut w = {
        let mut inner = w;
        writeln!(inner, "# {}", prov.line())?;
        csv::Writer::from_writer(inner)
    };
    w.write_record(["method", "market_a", "market_b", "ari"])?;
    for r in &report.ari {
        w.write_record([r.method.as_str(), &r.market_a, &r.market_b, &r.ari.to_string()])?;
    }
    w.flush()?;
    if !report.cross_correlation.is_empty() {
        write_matrix_csv(
            &prov,
            &report.markets,
            &report.cross_correlation,
            create(&cfg.out.join(files::CROSS_CORRELATION))?,
        )?;
    }
    write_json(&prov, &report, create(&cfg.out.join(files::COMPARE))?)?;
    Ok(())
}

/// Builds the effective configuration from the file and flag overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.apply(cli)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    if cli.init {
        let mut out = std::io::stdout().lock();
        serde_json::to_writer_pretty(&mut out, &cfg)?;
        writeln!(out)?;
        return Ok(());
    }
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Fit => cmd_fit(&cfg),
        Command::Classify => cmd_classify(&cfg),
        Command::Diagnose => cmd_diagnose(&cfg),
        Command::Compare => cmd_compare(&cfg),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_validates_and_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "bogus": true}"#).is_err());
        assert!(RunConfig::from_json(r#"{"optimizer": {"strats": 3}}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from(["msacm", "fit", "--seed", "9", "--model", "acm", "--starts", "3"]).unwrap();
        let cfg = effective_config(&cli).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model, ModelVariant::Acm);
        assert_eq!(cfg.optimizer.starts, 3);
        assert!(Cli::try_parse_from(["msacm", "fit", "--k", "4"]).is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&Error::Input("x".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::Params("x".into())), EXIT_INPUT);
        assert_eq!(
            exit_code(&Error::Estimation {
                message: "x".into(),
                starts: vec![]
            }),
            EXIT_ESTIMATION
        );
        assert_eq!(exit_code(&Error::EmptyTask("x".into())), EXIT_EMPTY);
        assert_eq!(exit_code(&Error::Alignment(vec![])), EXIT_EMPTY);
    }
}
