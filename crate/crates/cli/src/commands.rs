use std::fs::{self, File};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use recurrence_core::events::{extract_intervals_with, IntervalOptions};
use recurrence_core::fit::sample_pareto;
use recurrence_core::ingest::{synth_correlated_gaussian, synth_student_returns};
use recurrence_core::memory::dfa;
use recurrence_core::{fmt_num, NormalizedReturnSeries, RecurrenceIntervalSeries, ThresholdSpec};

use crate::config::{ConfigFile, DEFAULT_BINS_PER_DECADE, DEFAULT_DELTA_T, DEFAULT_N_BOOTSTRAP};
use crate::error::{CliError, CliResult};
use crate::output::{json_document, read_column, OutputDir};
use crate::pipeline::{load_returns, run_pipeline, write_risk};
use crate::stages::{self, FitRecord};

#[derive(Debug, Parser)]
#[command(name = "recurrence", version, about = "Recurrence-interval analysis of extreme returns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every stage on each input price file
    Run(RunArgs),
    /// Recurrence intervals of one threshold from a price file
    Intervals(IntervalsArgs),
    /// Scaled or conditional interval densities
    Pdf(PdfArgs),
    /// Power-law fit with bootstrap goodness-of-fit tests
    Fit(FitArgs),
    /// Goodness-of-fit tests against the x_min of an earlier fit
    Gof(GofArgs),
    /// Detrended fluctuation analysis of one column
    Dfa(DfaArgs),
    /// Hazard probability of the next event
    Hazard(HazardArgs),
    /// Return-tail fit, conditional mean interval and loss surfaces
    Risk(RiskArgs),
    /// Synthetic data
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    #[arg(long = "threshold", allow_negative_numbers = true, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub n_bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub keep_overnight: bool,
    #[arg(long)]
    pub reset_at_sessions: bool,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub delta_t: Option<u64>,
    #[arg(long)]
    pub bins_per_decade: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IntervalsArgs {
    /// Price CSV (`timestamp,price`)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub q: f64,
    #[arg(long)]
    pub keep_overnight: bool,
    #[arg(long)]
    pub reset_at_sessions: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct PdfArgs {
    #[arg(long)]
    pub intervals: PathBuf,
    /// Densities conditioned on the quartile of the preceding interval
    #[arg(long)]
    pub conditional: bool,
    #[arg(long, default_value_t = DEFAULT_BINS_PER_DECADE)]
    pub bins_per_decade: usize,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[group(id = "data", required = true, multiple = false, args = ["intervals", "samples"])]
pub struct FitData {
    /// Interval files; their scaled intervals are pooled
    #[arg(long, num_args = 1..)]
    pub intervals: Vec<PathBuf>,
    /// One column `x` of samples, fitted as given
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: FitData,
    #[arg(long, default_value_t = DEFAULT_N_BOOTSTRAP)]
    pub n_bootstrap: usize,
    #[arg(long)]
    pub seed: u64,
    /// Name written to the `code` field
    #[arg(long, default_value = "input")]
    pub instrument: String,
    /// JSON output
    #[arg(long)]
    pub output: PathBuf,
    /// Optional one-row CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GofArgs {
    /// Fit JSON whose x_min is reused
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub data: FitData,
    #[arg(long, default_value_t = DEFAULT_N_BOOTSTRAP)]
    pub n_bootstrap: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "input")]
    pub instrument: String,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DfaArgs {
    /// CSV with a column named r, x, interval or value
    #[arg(long)]
    pub input: PathBuf,
    /// Shuffle the series first (needs --seed)
    #[arg(long, requires = "seed")]
    pub shuffle: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `l,F` output
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct HazardArgs {
    #[arg(long)]
    pub intervals: PathBuf,
    /// Fit JSON from `fit`
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DELTA_T)]
    pub delta_t: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    /// Either a price CSV or a `returns.csv` written by `run`
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the input as normalized returns (one column `r`)
    #[arg(long)]
    pub returns: bool,
    #[arg(long = "threshold", allow_negative_numbers = true, value_delimiter = ',', default_values_t = [-2.0, -3.0, -4.0, -5.0])]
    pub thresholds: Vec<f64>,
    #[arg(long)]
    pub keep_overnight: bool,
    #[arg(long)]
    pub reset_at_sessions: bool,
    #[arg(long, default_value_t = DEFAULT_BINS_PER_DECADE)]
    pub bins_per_decade: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Pareto samples, column `x`
    Powerlaw,
    /// Long-memory Gaussian series, column `r`
    CorrGauss,
    /// Unit-variance Student-t returns, column `r`
    Student,
    /// Minute prices (`timestamp,price`) driven by Student-t returns
    Prices,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 2.2)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub x_min: f64,
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    pub beta: f64,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Intervals(a) => cmd_intervals(a),
        Command::Pdf(a) => cmd_pdf(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Gof(a) => cmd_gof(a),
        Command::Dfa(a) => cmd_dfa(a),
        Command::Hazard(a) => cmd_hazard(a),
        Command::Risk(a) => cmd_risk(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn cmd_run(a: RunArgs) -> CliResult<()> {
    let base = match &a.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let flags = ConfigFile {
        inputs: a.inputs,
        thresholds: (!a.thresholds.is_empty()).then_some(a.thresholds),
        n_bootstrap: a.n_bootstrap,
        seed: a.seed,
        keep_overnight: a.keep_overnight.then_some(true),
        reset_at_sessions: a.reset_at_sessions.then_some(true),
        output_dir: a.output_dir,
        delta_t: a.delta_t,
        bins_per_decade: a.bins_per_decade,
    };
    let cfg = base.overridden_by(flags).resolve()?;
    let manifest = run_pipeline(&cfg)?;
    eprintln!("wrote {} files to {}", manifest.files.len() + 1, cfg.output_dir.display());
    Ok(())
}

fn read_intervals(path: &Path) -> CliResult<(RecurrenceIntervalSeries, Option<f64>)> {
    let f = File::open(path).map_err(|e| input_err(path, e.to_string()))?;
    RecurrenceIntervalSeries::read_csv(f).map_err(|e| input_err(path, e.to_string()))
}

fn input_err(path: &Path, message: String) -> CliError {
    CliError::Input { path: path.display().to_string(), message }
}

fn cmd_intervals(a: IntervalsArgs) -> CliResult<()> {
    let returns = load_returns(&a.input, a.keep_overnight)?;
    let s = extract_intervals_with(
        &returns,
        ThresholdSpec::new(a.q)?,
        IntervalOptions { reset_at_sessions: a.reset_at_sessions },
    )?;
    fs::write(&a.output, stages::intervals_csv(&s, Some(a.q))?)?;
    Ok(())
}

fn cmd_pdf(a: PdfArgs) -> CliResult<()> {
    let (s, _) = read_intervals(&a.intervals)?;
    let bytes = if a.conditional {
        stages::conditional_pdf_csv(&s, a.bins_per_decade)?
    } else {
        stages::scaled_pdf_csv(&s, a.bins_per_decade)?
    };
    fs::write(&a.output, bytes)?;
    Ok(())
}

enum Data {
    Sets(Vec<(RecurrenceIntervalSeries, Option<f64>)>),
    Samples(Vec<f64>),
}

fn load_fit_data(d: &FitData) -> CliResult<Data> {
    match &d.samples {
        Some(p) => Ok(Data::Samples(read_column(p, &["x"])?)),
        None => Ok(Data::Sets(d.intervals.iter().map(|p| read_intervals(p)).collect::<CliResult<_>>()?)),
    }
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let rec = match load_fit_data(&a.data)? {
        Data::Sets(sets) => stages::fit_sets(&a.instrument, &sets, a.n_bootstrap, a.seed)?,
        Data::Samples(x) => stages::fit_samples(&a.instrument, &x, a.n_bootstrap, a.seed)?,
    };
    fs::write(&a.output, json_document(&rec)?)?;
    if let Some(p) = &a.csv {
        fs::write(p, rec.csv())?;
    }
    Ok(())
}

fn read_fit(path: &Path) -> CliResult<FitRecord> {
    let text = fs::read_to_string(path).map_err(|e| input_err(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| input_err(path, format!("not a fit file: {e}")))
}

fn cmd_gof(a: GofArgs) -> CliResult<()> {
    let fit = read_fit(&a.fit)?;
    let (samples, thresholds) = match load_fit_data(&a.data)? {
        Data::Samples(x) => (x, Vec::new()),
        Data::Sets(sets) => {
            let series: Vec<_> = sets.iter().map(|s| s.0.clone()).collect();
            let x = recurrence_core::fit::aggregate_scaled_samples(&series)?;
            (x, sets.iter().map(|s| s.1).collect())
        }
    };
    let mut rec = stages::gof_at(&a.instrument, &samples, fit.x_min, a.n_bootstrap, a.seed)?;
    rec.thresholds = thresholds;
    fs::write(&a.output, json_document(&rec)?)?;
    Ok(())
}

fn cmd_dfa(a: DfaArgs) -> CliResult<()> {
    let mut values = read_column(&a.input, &["r", "x", "interval", "value"])?;
    if a.shuffle {
        use rand::seq::SliceRandom;
        let seed = a.seed.expect("clap enforces --seed with --shuffle");
        values.shuffle(&mut recurrence_core::rng::stream(seed));
    }
    let r = dfa(&values)?;
    fs::write(&a.output, stages::dfa_csv(&r)?)?;
    println!("alpha,alpha_se\n{},{}", fmt_num(r.alpha), fmt_num(r.alpha_se));
    Ok(())
}

fn cmd_hazard(a: HazardArgs) -> CliResult<()> {
    let (s, _) = read_intervals(&a.intervals)?;
    let fit = read_fit(&a.fit)?;
    fs::write(&a.output, stages::hazard_csv(&s, &fit.power_law(), a.delta_t)?)?;
    Ok(())
}

fn cmd_risk(a: RiskArgs) -> CliResult<()> {
    let returns = if a.returns {
        let values = read_column(&a.input, &["r"])?;
        NormalizedReturnSeries { session_ids: vec![0; values.len()], sd: 1.0, values }
    } else {
        load_returns(&a.input, a.keep_overnight)?
    };
    let options = IntervalOptions { reset_at_sessions: a.reset_at_sessions };
    let sets = stages::risk_thresholds(&a.thresholds)
        .into_iter()
        .map(|q| Ok((q, extract_intervals_with(&returns, ThresholdSpec::new(q)?, options)?)))
        .collect::<recurrence_core::Result<Vec<_>>>()?;
    let risk = stages::risk_stage(&returns, &sets, a.bins_per_decade)?;
    let mut out = OutputDir::new(&a.output_dir, "")?;
    write_risk(&risk, &mut out)?;
    match risk.numeric_failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

/// Minutes per synthetic trading session and the session's opening minute.
const SESSION_MINUTES: i64 = 240;
const SESSION_OPEN: i64 = 570;
/// Per-minute volatility of synthetic prices.
const PRICE_VOL: f64 = 1e-3;

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let text = match a.kind {
        SynthKind::Powerlaw => column_text("x", &sample_pareto(a.x_min, a.delta, a.n, a.seed)?),
        SynthKind::CorrGauss => column_text("r", &synth_correlated_gaussian(a.n, a.alpha, a.seed)?.values),
        SynthKind::Student => column_text("r", &synth_student_returns(a.n, a.beta, a.seed)?.values),
        SynthKind::Prices => {
            let r = synth_student_returns(a.n, a.beta, a.seed)?;
            let mut out = String::from("timestamp,price\n");
            let mut log_p = 100f64.ln();
            for i in 0..=a.n as i64 {
                if i > 0 {
                    log_p += PRICE_VOL * r.values[(i - 1) as usize];
                }
                let t = (i / SESSION_MINUTES) * 1440 + SESSION_OPEN + i % SESSION_MINUTES;
                out.push_str(&format!("{t},{}\n", fmt_num(log_p.exp())));
            }
            out
        }
    };
    fs::write(&a.output, text)?;
    Ok(())
}

fn column_text(name: &str, v: &[f64]) -> String {
    let mut out = String::with_capacity(v.len() * 16);
    out.push_str(name);
    out.push('\n');
    for x in v {
        out.push_str(&fmt_num(*x));
        out.push('\n');
    }
    out
}
