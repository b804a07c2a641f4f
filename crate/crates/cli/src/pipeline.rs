//! The full per-instrument pipeline and the run manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use recurrence_core::events::{extract_intervals_with, mask_positive_returns, IntervalOptions};
use recurrence_core::ingest::{compute_log_returns_with, normalize_returns, read_price_csv, OvernightPolicy};
use recurrence_core::{round_sig, NormalizedReturnSeries, RecurrenceIntervalSeries, ThresholdSpec};
use serde::Serialize;

use crate::config::{instrument_name, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::output::{json_document, q_label, OutputDir};
use crate::stages;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub instrument: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config: PipelineConfig,
    pub files: BTreeMap<String, String>,
    pub failures: Vec<Failure>,
}

struct Outcome {
    files: BTreeMap<String, String>,
    error: Option<CliError>,
}

/// Runs every instrument, writes the manifest, and returns it. Any failed
/// instrument makes the result an error, after the manifest is written.
pub fn run_pipeline(cfg: &PipelineConfig) -> CliResult<Manifest> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let outcomes: Vec<(String, Outcome)> = cfg
        .inputs
        .par_iter()
        .map(|path| {
            let name = instrument_name(path);
            let outcome = match OutputDir::new(&cfg.output_dir, &name) {
                Ok(mut out) => {
                    let error = process_instrument(cfg, path, &name, &mut out).err();
                    Outcome { files: out.files, error }
                }
                Err(e) => Outcome { files: BTreeMap::new(), error: Some(e) },
            };
            (name, outcome)
        })
        .collect();

    let mut files = BTreeMap::new();
    let mut failures = Vec::new();
    let mut errors = Vec::new();
    for (name, o) in outcomes {
        files.extend(o.files);
        if let Some(e) = o.error {
            let stage = match &e {
                CliError::Stage { stage, .. } => stage.to_string(),
                _ => "output".into(),
            };
            eprintln!("error: {e}");
            failures.push(Failure { instrument: name, stage, message: e.to_string() });
            errors.push(e);
        }
    }
    let manifest = Manifest { config: cfg.clone(), files, failures };
    let mut root = OutputDir::new(&cfg.output_dir, "")?;
    root.write(MANIFEST, &json_document(&manifest)?)?;
    match errors.len() {
        0 => Ok(manifest),
        n => Err(CliError::Pipeline { n_failed: n, first: Box::new(errors.remove(0)) }),
    }
}

fn at<T>(name: &str, stage: &'static str, r: recurrence_core::Result<T>) -> CliResult<T> {
    r.map_err(|source| CliError::Stage { instrument: name.to_string(), stage, source })
}

/// Normalized returns of a price file, rounded to the digits written to
/// `returns.csv` so later stages rerun from that file see the same numbers.
pub fn load_returns(path: &Path, keep_overnight: bool) -> recurrence_core::Result<NormalizedReturnSeries> {
    let prices = read_price_csv(File::open(path)?)?;
    let policy = if keep_overnight { OvernightPolicy::Keep } else { OvernightPolicy::Drop };
    let mut r = normalize_returns(&compute_log_returns_with(&prices, policy)?)?;
    for v in &mut r.values {
        *v = round_sig(*v);
    }
    Ok(r)
}

fn process_instrument(cfg: &PipelineConfig, path: &Path, name: &str, out: &mut OutputDir) -> CliResult<()> {
    let returns = at(name, "ingest", load_returns(path, cfg.keep_overnight))?;
    out.write("returns.csv", &stages::returns_csv(&returns))?;

    let options = IntervalOptions { reset_at_sessions: cfg.reset_at_sessions };
    let mut sets: Vec<(f64, RecurrenceIntervalSeries)> = Vec::new();
    for &q in &cfg.thresholds {
        let spec = at(name, "intervals", ThresholdSpec::new(q))?;
        let s = at(name, "intervals", extract_intervals_with(&returns, spec, options))?;
        out.write(&format!("intervals_{}.csv", q_label(q)), &at(name, "intervals", stages::intervals_csv(&s, Some(q)))?)?;
        sets.push((q, s));
    }

    for (q, s) in &sets {
        let label = q_label(*q);
        out.write(&format!("pdf_{label}.csv"), &at(name, "pdf", stages::scaled_pdf_csv(s, cfg.bins_per_decade))?)?;
        out.write(
            &format!("conditional_pdf_{label}.csv"),
            &at(name, "pdf", stages::conditional_pdf_csv(s, cfg.bins_per_decade))?,
        )?;
    }

    let tagged: Vec<(RecurrenceIntervalSeries, Option<f64>)> = sets.iter().map(|(q, s)| (s.clone(), Some(*q))).collect();
    let fit = at(name, "fit", stages::fit_sets(name, &tagged, cfg.n_bootstrap, cfg.seed))?;
    let fit_json = json_document(&fit)?;
    out.write("fit.json", &fit_json)?;
    // Later stages use the fit as written, so rerunning them from fit.json
    // reproduces their files.
    let fit: stages::FitRecord = serde_json::from_slice(&fit_json).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    out.write("fit.csv", &fit.csv())?;

    let mut summary = Vec::new();
    let mut dfa_one = |label: String, values: &[f64], out: &mut OutputDir| -> CliResult<()> {
        let r = at(name, "dfa", stages::dfa_optional(values))?;
        if let Some(r) = &r {
            out.write(&format!("dfa_{label}.csv"), &at(name, "dfa", stages::dfa_csv(r))?)?;
        }
        summary.push((label, r));
        Ok(())
    };
    dfa_one("returns".into(), &returns.values, out)?;
    dfa_one("negative_returns".into(), &mask_positive_returns(&returns).values, out)?;
    for (q, s) in &sets {
        let label = q_label(*q);
        dfa_one(format!("intervals_{label}"), &stages::intervals_as_f64(s), out)?;
        dfa_one(format!("shuffled_{label}"), &stages::intervals_as_f64(&s.shuffled(cfg.seed)), out)?;
    }
    out.write("dfa_summary.csv", &stages::dfa_summary_csv(&summary))?;

    let power_law = fit.power_law();
    for (q, s) in &sets {
        out.write(
            &format!("hazard_{}.csv", q_label(*q)),
            &at(name, "hazard", stages::hazard_csv(s, &power_law, cfg.delta_t))?,
        )?;
    }

    let risk_q = stages::risk_thresholds(&cfg.thresholds);
    let risk_sets: Vec<(f64, RecurrenceIntervalSeries)> = risk_q
        .iter()
        .filter_map(|q| sets.iter().find(|s| s.0 == *q).cloned())
        .collect();
    let risk = at(name, "risk", stages::risk_stage(&returns, &risk_sets, cfg.bins_per_decade))?;
    write_risk(&risk, out).map_err(|e| match e {
        CliError::Core(source) => CliError::Stage { instrument: name.into(), stage: "risk", source },
        other => other,
    })?;
    if let Some(source) = risk.numeric_failure {
        return Err(CliError::Stage { instrument: name.into(), stage: "risk", source });
    }
    Ok(())
}

pub fn write_risk(risk: &stages::RiskOutputs, out: &mut OutputDir) -> CliResult<()> {
    out.write("tail_fit.json", &json_document(&risk.tail)?)?;
    out.write("conditional_mean.json", &json_document(&risk.conditional_mean)?)?;
    if let Some(s) = &risk.theoretical {
        out.write("loss_surface_theoretical.csv", &stages::surface_csv(s)?)?;
    }
    if let Some(s) = &risk.empirical {
        out.write("loss_surface_empirical.csv", &stages::surface_csv(s)?)?;
    }
    Ok(())
}
