//! Power-law tail fitting and goodness-of-fit tests for scaled intervals.
//!
//! The tail density is `f(x) = c x^-delta` for `x >= x_min`. The exponent is
//! the continuous maximum-likelihood estimate
//! `delta = 1 + n_tail / sum(ln(x_i / x_min))`, and `x_min` is the sample
//! value whose fit minimizes the Kolmogorov-Smirnov distance between the tail
//! sample and the fitted CDF `F(x) = 1 - (x / x_min)^(1 - delta)`.
//!
//! Goodness of fit is judged three ways: KS and variance-weighted KS with
//! parametric-bootstrap p-values, and the Cramer-von Mises `W^2` against its
//! asymptotic 1% critical value.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::RecurrenceIntervalSeries;
use crate::rng;

/// Upper 1% point of the asymptotic Cramer-von Mises distribution.
pub const CVM_CRITICAL_1PCT: f64 = 0.743;

/// Fewest samples worth scanning for `x_min`.
pub const MIN_SAMPLES: usize = 50;
/// Fewest tail samples a candidate `x_min` may leave.
pub const MIN_TAIL: usize = 10;
/// Candidates are capped so that at least this fraction of the data is tail.
pub const MIN_TAIL_FRACTION: f64 = 0.05;
/// Above this many candidates the scan runs coarse-to-fine.
const EXACT_SCAN_LIMIT: usize = 2000;
const COARSE_POINTS: usize = 1000;
/// Endpoint guard for the weighted KS statistic.
const KSW_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub x_min: f64,
    pub delta: f64,
    pub delta_se: f64,
    pub c: f64,
    pub n_tail: usize,
    pub n_total: usize,
    pub ks: f64,
}

impl PowerLawFit {
    /// Fitted CDF of the tail. Zero below `x_min`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.x_min {
            return 0.0;
        }
        tail_cdf(self.delta - 1.0, (x / self.x_min).ln())
    }

    /// `c x^-delta`, zero below `x_min`.
    pub fn density(&self, x: f64) -> f64 {
        if x < self.x_min {
            0.0
        } else {
            self.c * x.powf(-self.delta)
        }
    }

    /// Samples at or above `x_min`, in input order.
    pub fn tail_of(&self, x: &[f64]) -> Vec<f64> {
        x.iter().copied().filter(|&v| v >= self.x_min).collect()
    }

    /// `n_tail / n_total`.
    pub fn tail_fraction(&self) -> f64 {
        self.n_tail as f64 / self.n_total as f64
    }

    fn from_exponent(x_min: f64, delta: f64, n_tail: usize, n_total: usize) -> Self {
        let a = delta - 1.0;
        Self {
            x_min,
            delta,
            delta_se: a / (n_tail as f64).sqrt(),
            c: (n_tail as f64 / n_total as f64) * a * x_min.powf(a),
            n_tail,
            n_total,
            ks: f64::NAN,
        }
    }
}

#[inline]
fn tail_cdf(a: f64, log_ratio: f64) -> f64 {
    -(-a * log_ratio).exp_m1()
}

/// Concatenates `tau / <tau>` over every set, each scaled by its own mean.
pub fn aggregate_scaled_samples(sets: &[RecurrenceIntervalSeries]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(sets.iter().map(|s| s.len()).sum());
    for s in sets {
        if s.is_empty() {
            return Err(Error::InsufficientData("an interval set is empty".into()));
        }
        out.extend(s.scaled());
    }
    Ok(out)
}

/// Continuous MLE of the exponent for a tail sample above `x_min`.
pub fn mle_exponent(tail: &[f64], x_min: f64) -> Result<f64> {
    if tail.is_empty() {
        return Err(Error::TailTooThin("empty tail".into()));
    }
    let ln_min = x_min.ln();
    let mut s = 0.0;
    for &x in tail {
        if x < x_min {
            return Err(Error::InvalidArgument(format!(
                "tail sample {x} below x_min {x_min}"
            )));
        }
        s += x.ln() - ln_min;
    }
    if !(s > 0.0) {
        return Err(Error::TailTooThin(format!(
            "all tail samples equal x_min = {x_min}"
        )));
    }
    Ok(1.0 + tail.len() as f64 / s)
}

/// Fit with `x_min` held fixed; only the exponent is estimated.
pub fn fit_power_law_at(x: &[f64], x_min: f64) -> Result<PowerLawFit> {
    if !(x_min.is_finite() && x_min > 0.0) {
        return Err(Error::InvalidArgument(format!("x_min = {x_min}")));
    }
    let tail: Vec<f64> = x.iter().copied().filter(|&v| v >= x_min).collect();
    let delta = mle_exponent(&tail, x_min)?;
    let mut fit = PowerLawFit::from_exponent(x_min, delta, tail.len(), x.len());
    fit.ks = ks_statistic(&tail, &fit)?;
    Ok(fit)
}

/// Scans candidate `x_min` values and keeps the one whose MLE fit has the
/// smallest KS distance.
///
/// Candidates are the distinct sample values leaving at least
/// `max(10, 5% of n)` samples in the tail. When there are more than 2000 of
/// them, every k-th candidate is scanned first (about 1000 in all) and the
/// neighbourhood of the coarse winner is then scanned at full resolution.
pub fn fit_power_law(x: &[f64]) -> Result<PowerLawFit> {
    if x.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} samples; the x_min scan needs at least {MIN_SAMPLES}",
            x.len()
        )));
    }
    if let Some(bad) = x.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive sample {bad}")));
    }
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let scan = TailScan::new(&sorted);
    let candidates = scan.candidates();
    if candidates.is_empty() {
        return Err(Error::TailTooThin(format!(
            "no x_min candidate leaves {} tail samples",
            scan.min_tail()
        )));
    }

    let mut best = Best::default();
    if candidates.len() <= EXACT_SCAN_LIMIT {
        for &j in &candidates {
            best.offer(j, scan.ks_bounded(j, best.ks));
        }
    } else {
        let stride = candidates.len().div_ceil(COARSE_POINTS);
        let mut coarse = Best::default();
        for pos in (0..candidates.len()).step_by(stride) {
            coarse.offer(pos, scan.ks_bounded(candidates[pos], coarse.ks));
        }
        let pos = coarse.index.expect("at least one coarse candidate");
        let lo = pos.saturating_sub(stride);
        let hi = (pos + stride).min(candidates.len() - 1);
        for &j in &candidates[lo..=hi] {
            best.offer(j, scan.ks_bounded(j, best.ks));
        }
    }
    let j = best.index.ok_or_else(|| {
        Error::TailTooThin("no candidate produced a finite exponent".into())
    })?;
    fit_power_law_at(x, sorted[j])
}

#[derive(Default)]
struct Best {
    index: Option<usize>,
    ks: f64,
}

impl Best {
    fn offer(&mut self, index: usize, ks: Option<f64>) {
        if let Some(ks) = ks {
            if self.index.is_none() || ks < self.ks {
                self.index = Some(index);
                self.ks = ks;
            }
        }
    }
}

/// Precomputed logs and suffix sums over an ascending sample.
struct TailScan<'a> {
    sorted: &'a [f64],
    logs: Vec<f64>,
    suffix: Vec<f64>,
}

impl<'a> TailScan<'a> {
    fn new(sorted: &'a [f64]) -> Self {
        let logs: Vec<f64> = sorted.iter().map(|v| v.ln()).collect();
        let mut suffix = vec![0.0; sorted.len() + 1];
        for i in (0..sorted.len()).rev() {
            suffix[i] = suffix[i + 1] + logs[i];
        }
        Self {
            sorted,
            logs,
            suffix,
        }
    }

    fn min_tail(&self) -> usize {
        MIN_TAIL.max((MIN_TAIL_FRACTION * self.sorted.len() as f64).ceil() as usize)
    }

    /// Indices of first occurrences of distinct values, capped by tail size.
    fn candidates(&self) -> Vec<usize> {
        let n = self.sorted.len();
        let min_tail = self.min_tail();
        if n < min_tail {
            return Vec::new();
        }
        (0..=n - min_tail)
            .filter(|&j| j == 0 || self.sorted[j] != self.sorted[j - 1])
            .collect()
    }

    /// KS distance of the MLE fit at candidate `j`. Returns `None` if the
    /// exponent is undefined, or as soon as the running maximum exceeds
    /// `bound` (such a candidate cannot win).
    fn ks_bounded(&self, j: usize, bound: f64) -> Option<f64> {
        let n = self.sorted.len();
        let m = n - j;
        let mf = m as f64;
        let s = self.suffix[j] - mf * self.logs[j];
        if !(s > 0.0) {
            return None;
        }
        let a = mf / s;
        let bound = if bound > 0.0 { bound } else { f64::INFINITY };
        let lx0 = self.logs[j];
        let mut d = 0.0f64;
        for (i, &lx) in self.logs[j..].iter().enumerate() {
            let f = tail_cdf(a, lx - lx0);
            let hi = (i + 1) as f64 / mf - f;
            let lo = f - i as f64 / mf;
            d = d.max(hi).max(lo);
            if d > bound {
                return Some(d);
            }
        }
        Some(d)
    }
}

fn sorted_tail(x_tail: &[f64], fit: &PowerLawFit) -> Result<Vec<f64>> {
    if x_tail.is_empty() {
        return Err(Error::TailTooThin("empty tail".into()));
    }
    if let Some(v) = x_tail.iter().find(|&&v| !(v >= fit.x_min)) {
        return Err(Error::InvalidArgument(format!(
            "tail sample {v} below x_min {}",
            fit.x_min
        )));
    }
    let mut t = x_tail.to_vec();
    t.sort_unstable_by(f64::total_cmp);
    Ok(t)
}

/// Sup distance between the tail's empirical CDF and the fitted CDF, taking
/// both sides of every step.
pub fn ks_statistic(x_tail: &[f64], fit: &PowerLawFit) -> Result<f64> {
    let t = sorted_tail(x_tail, fit)?;
    let n = t.len() as f64;
    Ok(t.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = fit.cdf(x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    }))
}

/// KS distance weighted by `1 / sqrt(F (1 - F))`, evaluated where
/// `F in (1e-12, 1 - 1e-12)`.
pub fn ksw_statistic(x_tail: &[f64], fit: &PowerLawFit) -> Result<f64> {
    let t = sorted_tail(x_tail, fit)?;
    let n = t.len() as f64;
    let mut best: Option<f64> = None;
    for (i, &x) in t.iter().enumerate() {
        let f = fit.cdf(x);
        if let Some(w) = weighted_gap(f, i, n) {
            best = Some(best.map_or(w, |b| b.max(w)));
        }
    }
    best.ok_or_else(|| {
        Error::InsufficientData("no tail sample has a fitted CDF strictly inside (0, 1)".into())
    })
}

#[inline]
fn weighted_gap(f: f64, i: usize, n: f64) -> Option<f64> {
    if !(f > KSW_EPS && f < 1.0 - KSW_EPS) {
        return None;
    }
    let gap = ((i + 1) as f64 / n - f).abs().max((f - i as f64 / n).abs());
    Some(gap / (f * (1.0 - f)).sqrt())
}

/// `W^2 = 1/(12N) + sum_i (u_(i) - (2i-1)/(2N))^2` over sorted
/// probability-integral transforms `u`.
pub fn cvm_from_uniform(u: &[f64]) -> f64 {
    let mut u = u.to_vec();
    u.sort_unstable_by(f64::total_cmp);
    let n = u.len() as f64;
    let spread: f64 = u
        .iter()
        .enumerate()
        .map(|(i, &ui)| {
            let d = ui - (2 * i + 1) as f64 / (2.0 * n);
            d * d
        })
        .sum();
    1.0 / (12.0 * n) + spread
}

/// Cramer-von Mises `W^2` of the tail against the fit, via `u_i = F(x_i)`.
pub fn cvm_statistic(x_tail: &[f64], fit: &PowerLawFit) -> Result<f64> {
    let t = sorted_tail(x_tail, fit)?;
    let u: Vec<f64> = t.iter().map(|&x| fit.cdf(x)).collect();
    Ok(cvm_from_uniform(&u))
}

pub fn cvm_rejects_1pct(w2: f64) -> bool {
    w2 > CVM_CRITICAL_1PCT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub ks: f64,
    pub p_ks: f64,
    pub ksw: f64,
    pub p_ksw: f64,
    pub w2: f64,
    pub cvm_reject_1pct: bool,
    pub n_bootstrap: usize,
}

/// Bootstrap distribution of the KS and weighted-KS statistics for samples
/// of one size drawn from a fitted power law and refit.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReference {
    pub ks: Vec<f64>,
    pub ksw: Vec<f64>,
}

impl BootstrapReference {
    /// Fraction of replicas with `KS_sim > ks`.
    pub fn p_ks(&self, ks: f64) -> f64 {
        exceed_fraction(&self.ks, ks)
    }

    pub fn p_ksw(&self, ksw: f64) -> f64 {
        exceed_fraction(&self.ksw, ksw)
    }
}

fn exceed_fraction(reference: &[f64], observed: f64) -> f64 {
    if reference.is_empty() {
        return f64::NAN;
    }
    reference.iter().filter(|&&s| s > observed).count() as f64 / reference.len() as f64
}

/// Draws `n_bootstrap` replicas of `n_tail` samples from `fit`, refits the
/// exponent of each (with `x_min` fixed) and records each replica's KS and
/// weighted KS against its own fit. Replica `i` uses substream `i` of `seed`,
/// so the result does not depend on scheduling.
pub fn bootstrap_reference(
    fit: &PowerLawFit,
    n_tail: usize,
    n_bootstrap: usize,
    seed: u64,
) -> Result<BootstrapReference> {
    if !(fit.delta > 1.0) {
        return Err(Error::InvalidArgument(format!("delta = {} <= 1", fit.delta)));
    }
    if n_tail < 2 {
        return Err(Error::TailTooThin(format!("{n_tail} tail sample(s)")));
    }
    let a = fit.delta - 1.0;
    let stats: Vec<(f64, f64)> = (0..n_bootstrap as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; n_tail],
            |buf, r| replica_statistics(a, buf, &mut rng::substream(seed, r)),
        )
        .collect();
    let (ks, ksw) = stats.into_iter().unzip();
    Ok(BootstrapReference { ks, ksw })
}

/// One replica, worked in log coordinates `y = ln(x / x_min)`, where the
/// power law is exponential with rate `a = delta - 1`. Sorted draws come from
/// the exponential-spacings representation of order statistics, which is the
/// inverse transform applied to sorted uniforms, so no sort is needed.
fn replica_statistics<R: Rng>(a: f64, y: &mut [f64], rng: &mut R) -> (f64, f64) {
    let n = y.len();
    let mut acc = 0.0;
    let mut sum = 0.0;
    for (i, slot) in y.iter_mut().enumerate() {
        let e = -(1.0 - rng.random::<f64>()).ln();
        acc += e / (n - i) as f64;
        *slot = acc / a;
        sum += *slot;
    }
    let a_hat = n as f64 / sum;
    let nf = n as f64;
    let mut ks = 0.0f64;
    let mut ksw = 0.0f64;
    for (i, &yi) in y.iter().enumerate() {
        let f = tail_cdf(a_hat, yi);
        ks = ks.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
        if let Some(w) = weighted_gap(f, i, nf) {
            ksw = ksw.max(w);
        }
    }
    (ks, ksw)
}

/// KS and weighted-KS p-values by parametric bootstrap, plus `W^2` on the data.
pub fn bootstrap_gof(
    x_tail: &[f64],
    fit: &PowerLawFit,
    n_bootstrap: usize,
    seed: u64,
) -> Result<GofReport> {
    if n_bootstrap < 100 {
        return Err(Error::InvalidArgument(format!(
            "n_bootstrap = {n_bootstrap}; need at least 100"
        )));
    }
    let ks = ks_statistic(x_tail, fit)?;
    let ksw = ksw_statistic(x_tail, fit)?;
    let w2 = cvm_statistic(x_tail, fit)?;
    let reference = bootstrap_reference(fit, x_tail.len(), n_bootstrap, seed)?;
    Ok(GofReport {
        ks,
        p_ks: reference.p_ks(ks),
        ksw,
        p_ksw: reference.p_ksw(ksw),
        w2,
        cvm_reject_1pct: cvm_rejects_1pct(w2),
        n_bootstrap,
    })
}

/// `x_min (1 - u)^(-1 / (delta - 1))`.
pub fn power_law_quantile(x_min: f64, delta: f64, u: f64) -> f64 {
    x_min * (1.0 - u).powf(-1.0 / (delta - 1.0))
}

/// Inverse-transform draws from the fitted tail law.
pub fn sample_power_law(fit: &PowerLawFit, n: usize, seed: u64) -> Result<Vec<f64>> {
    sample_pareto(fit.x_min, fit.delta, n, seed)
}

pub fn sample_pareto(x_min: f64, delta: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(delta > 1.0) || !(x_min > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "power law needs delta > 1 and x_min > 0 (got {delta}, {x_min})"
        )));
    }
    let mut rng = rng::stream(seed);
    Ok((0..n)
        .map(|_| power_law_quantile(x_min, delta, rng.random::<f64>()))
        .collect())
}
