//! One function per analysis stage, each returning the bytes of its output
//! files. The pipeline and the single-stage subcommands both go through here,
//! so their files are identical.

use std::io::Write;

use recurrence_core::dist::{conditional_pdf, scaled_pdf};
use recurrence_core::events::partition_quartiles;
use recurrence_core::fit::{
    aggregate_scaled_samples, bootstrap_gof, fit_power_law, fit_power_law_at, GofReport, PowerLawFit,
};
use recurrence_core::memory::{dfa, DfaResult};
use recurrence_core::risk::{
    conditional_loss_surface, default_t_grid, empirical_loss_surface, fit_return_tail, hazard_curve,
    pooled_conditional_mean_points, fit_conditional_mean_points, ConditionalMeanFit,
    ConditionalMeanPoint, LossSurface, Side, TailFit, TAIL_CUTOFF,
};
use recurrence_core::{fmt_num, Error, NormalizedReturnSeries, RecurrenceIntervalSeries, Result};
use serde::{Deserialize, Serialize};

/// Grid points per decade for hazard curves.
pub const HAZARD_POINTS_PER_DECADE: usize = 10;
/// Loss surfaces cover `tau0 / <tau>` over this many decades either side of 1.
const SURFACE_DECADES: i64 = 2;

// ---------------------------------------------------------------------------
// pdf

/// `quartile,x,density,count` for the four conditional densities; quartiles
/// with no successor interval are left out.
pub fn conditional_pdf_csv(series: &RecurrenceIntervalSeries, bins_per_decade: usize) -> Result<Vec<u8>> {
    let partition = partition_quartiles(series)?;
    let mut out = Vec::new();
    writeln!(out, "quartile,x,density,count")?;
    for b in 0..4 {
        let pdf = match conditional_pdf(series, &partition, b, bins_per_decade) {
            Ok(p) => p,
            Err(Error::InsufficientData(_)) => continue,
            Err(e) => return Err(e),
        };
        for i in 0..pdf.counts.len() {
            writeln!(
                out,
                "{b},{},{},{}",
                fmt_num(pdf.bin_centers[i]),
                fmt_num(pdf.densities[i]),
                pdf.counts[i]
            )?;
        }
    }
    Ok(out)
}

pub fn scaled_pdf_csv(series: &RecurrenceIntervalSeries, bins_per_decade: usize) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    scaled_pdf(series, bins_per_decade)?.write_csv(&mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// fit

/// Fit and goodness-of-fit, in the column order of the usual summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub code: String,
    pub x_min: f64,
    pub delta: f64,
    pub delta_se: f64,
    pub c: f64,
    pub ks: f64,
    pub p_ks: f64,
    pub p_ksw: f64,
    pub w2: f64,
    pub ksw: f64,
    pub cvm_reject_1pct: bool,
    pub n_tail: usize,
    pub n_total: usize,
    pub n_bootstrap: usize,
    pub seed: u64,
    pub thresholds: Vec<Option<f64>>,
}

impl FitRecord {
    pub fn power_law(&self) -> PowerLawFit {
        PowerLawFit {
            x_min: self.x_min,
            delta: self.delta,
            delta_se: self.delta_se,
            c: self.c,
            n_tail: self.n_tail,
            n_total: self.n_total,
            ks: self.ks,
        }
    }

    pub fn csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"code,x_min,delta,delta_se,c,ks,p_ks,p_ksw,w2\n");
        let row = [self.x_min, self.delta, self.delta_se, self.c, self.ks, self.p_ks, self.p_ksw, self.w2]
            .iter()
            .map(|v| fmt_num(*v))
            .collect::<Vec<_>>()
            .join(",");
        out.extend_from_slice(format!("{},{row}\n", self.code).as_bytes());
        out
    }
}

/// Fits the pooled scaled intervals and runs the bootstrap tests.
pub fn fit_sets(
    code: &str,
    sets: &[(RecurrenceIntervalSeries, Option<f64>)],
    n_bootstrap: usize,
    seed: u64,
) -> Result<FitRecord> {
    let series: Vec<RecurrenceIntervalSeries> = sets.iter().map(|s| s.0.clone()).collect();
    let samples = aggregate_scaled_samples(&series)?;
    let mut rec = fit_samples(code, &samples, n_bootstrap, seed)?;
    rec.thresholds = sets.iter().map(|s| s.1).collect();
    Ok(rec)
}

pub fn fit_samples(code: &str, samples: &[f64], n_bootstrap: usize, seed: u64) -> Result<FitRecord> {
    let fit = fit_power_law(samples)?;
    let gof = bootstrap_gof(&fit.tail_of(samples), &fit, n_bootstrap, seed)?;
    Ok(record(code, &fit, &gof, seed))
}

/// Goodness of fit with `x_min` taken from an earlier fit; the exponent is
/// re-estimated on `samples`.
pub fn gof_at(code: &str, samples: &[f64], x_min: f64, n_bootstrap: usize, seed: u64) -> Result<FitRecord> {
    let fit = fit_power_law_at(samples, snap_to_sample(samples, x_min))?;
    let gof = bootstrap_gof(&fit.tail_of(samples), &fit, n_bootstrap, seed)?;
    Ok(record(code, &fit, &gof, seed))
}

/// A cutoff read back from a file carries 12 significant digits; map it to
/// the sample value it was printed from so the tail is the same one.
fn snap_to_sample(samples: &[f64], x_min: f64) -> f64 {
    samples
        .iter()
        .copied()
        .filter(|x| ((x - x_min) / x_min).abs() < 1e-10)
        .min_by(|a, b| (a - x_min).abs().total_cmp(&(b - x_min).abs()))
        .unwrap_or(x_min)
}

fn record(code: &str, fit: &PowerLawFit, gof: &GofReport, seed: u64) -> FitRecord {
    FitRecord {
        code: code.to_string(),
        x_min: fit.x_min,
        delta: fit.delta,
        delta_se: fit.delta_se,
        c: fit.c,
        ks: gof.ks,
        p_ks: gof.p_ks,
        p_ksw: gof.p_ksw,
        w2: gof.w2,
        ksw: gof.ksw,
        cvm_reject_1pct: gof.cvm_reject_1pct,
        n_tail: fit.n_tail,
        n_total: fit.n_total,
        n_bootstrap: gof.n_bootstrap,
        seed,
        thresholds: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// dfa

pub fn dfa_csv(result: &DfaResult) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    result.write_csv(&mut out)?;
    Ok(out)
}

/// DFA of a series; `None` when it is too short for the default grid.
pub fn dfa_optional(values: &[f64]) -> Result<Option<DfaResult>> {
    match dfa(values) {
        Ok(r) => Ok(Some(r)),
        Err(Error::InsufficientData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `series,alpha,alpha_se,l_lo,l_hi`; series too short for DFA have empty fields.
pub fn dfa_summary_csv(rows: &[(String, Option<DfaResult>)]) -> Vec<u8> {
    let mut out = String::from("series,alpha,alpha_se,l_lo,l_hi\n");
    for (name, r) in rows {
        match r {
            Some(r) => out.push_str(&format!(
                "{name},{},{},{},{}\n",
                fmt_num(r.alpha),
                fmt_num(r.alpha_se),
                r.fit_range.0,
                r.fit_range.1
            )),
            None => out.push_str(&format!("{name},,,,\n")),
        }
    }
    out.into_bytes()
}

pub fn intervals_as_f64(series: &RecurrenceIntervalSeries) -> Vec<f64> {
    series.intervals().iter().map(|&t| t as f64).collect()
}

// ---------------------------------------------------------------------------
// hazard

pub fn hazard_csv(series: &RecurrenceIntervalSeries, fit: &PowerLawFit, delta_t: u64) -> Result<Vec<u8>> {
    let grid = default_t_grid(series, HAZARD_POINTS_PER_DECADE);
    let mut out = Vec::new();
    hazard_curve(series, fit, delta_t, &grid)?.write_csv(&mut out)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// risk

#[derive(Debug, Clone, Serialize)]
pub struct TailRecord {
    pub cutoff: f64,
    pub negative: Option<TailFit>,
    pub positive: Option<TailFit>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionalMeanRecord {
    pub thresholds: Vec<f64>,
    pub bins_per_decade: usize,
    pub fit: Option<ConditionalMeanFit>,
    pub error: Option<String>,
    pub points: Vec<ConditionalMeanPoint>,
}

pub struct RiskOutputs {
    pub tail: TailRecord,
    pub conditional_mean: ConditionalMeanRecord,
    /// Error that stopped the stage short of a result, if it is numeric.
    pub numeric_failure: Option<Error>,
    pub theoretical: Option<LossSurface>,
    pub empirical: Option<LossSurface>,
}

/// Negative thresholds in the tail region, closest to zero first.
pub fn risk_thresholds(thresholds: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = thresholds.iter().copied().filter(|&q| q <= -TAIL_CUTOFF).collect();
    q.sort_by(|a, b| b.total_cmp(a));
    q.dedup();
    q
}

/// Log-bin centres of `tau0 / <tau>` from `1e-2` to `1e2`.
pub fn surface_tau0_grid(bins_per_decade: usize) -> Vec<f64> {
    let b = bins_per_decade as i64;
    (-SURFACE_DECADES * b..=SURFACE_DECADES * b)
        .map(|k| 10f64.powf(k as f64 / bins_per_decade as f64))
        .collect()
}

/// Tail fits on both sides, the conditional-mean model fitted to intervals
/// pooled over the negative thresholds, and both loss surfaces.
pub fn risk_stage(
    returns: &NormalizedReturnSeries,
    sets: &[(f64, RecurrenceIntervalSeries)],
    bins_per_decade: usize,
) -> Result<RiskOutputs> {
    let mut errors = Vec::new();
    let mut side = |s: Side| match fit_return_tail(returns, s) {
        Ok(t) => Ok(Some(t)),
        Err(e @ Error::TailTooThin(_)) => {
            errors.push(format!("{s:?}: {e}").to_lowercase());
            Ok(None)
        }
        Err(e) => Err(e),
    };
    let negative = side(Side::Negative)?;
    let positive = side(Side::Positive)?;
    let tail = TailRecord { cutoff: TAIL_CUTOFF, negative, positive, errors };

    let qs: Vec<f64> = sets.iter().map(|s| s.0).collect();
    let series: Vec<RecurrenceIntervalSeries> = sets.iter().map(|s| s.1.clone()).collect();
    let mut numeric_failure = None;
    let (points, fit, error) = if series.is_empty() {
        (Vec::new(), None, Some("no threshold at or below -2".to_string()))
    } else {
        let points = pooled_conditional_mean_points(&series, bins_per_decade)?;
        match fit_conditional_mean_points(&points) {
            Ok(f) => (points, Some(f), None),
            Err(e @ Error::InsufficientData(_)) => (points, None, Some(e.to_string())),
            Err(e) if e.is_numeric() => {
                let msg = e.to_string();
                numeric_failure = Some(e);
                (points, None, Some(msg))
            }
            Err(e) => return Err(e),
        }
    };
    let conditional_mean = ConditionalMeanRecord {
        thresholds: qs.clone(),
        bins_per_decade,
        fit,
        error,
        points,
    };

    let grid = surface_tau0_grid(bins_per_decade);
    let theoretical = match (&tail.negative, &conditional_mean.fit) {
        (Some(t), Some(f)) if !qs.is_empty() => Some(conditional_loss_surface(t, f, &qs, &grid)?),
        _ => None,
    };
    let empirical = if qs.is_empty() {
        None
    } else {
        Some(empirical_loss_surface(returns, &qs, &grid, bins_per_decade)?)
    };
    Ok(RiskOutputs { tail, conditional_mean, numeric_failure, theoretical, empirical })
}

pub fn surface_csv(s: &LossSurface) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    s.write_csv(&mut out)?;
    Ok(out)
}

/// One column `r` of normalized returns.
pub fn returns_csv(r: &NormalizedReturnSeries) -> Vec<u8> {
    let mut out = String::with_capacity(r.len() * 16 + 2);
    out.push_str("r\n");
    for v in &r.values {
        out.push_str(&fmt_num(*v));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn intervals_csv(series: &RecurrenceIntervalSeries, q: Option<f64>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    series.write_csv(q, &mut out)?;
    Ok(out)
}
