//! Risk estimators built on recurrence intervals: the hazard probability of
//! the next extreme event, the unconditional and conditional loss
//! probabilities, and the return-tail fit that links them.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::LogBinning;
use crate::error::{Error, Result};
use crate::events::{extract_intervals, RecurrenceIntervalSeries, ThresholdSpec};
use crate::fit::PowerLawFit;
use crate::ingest::NormalizedReturnSeries;

/// Returns with `|r|` at or above this are treated as tail.
pub const TAIL_CUTOFF: f64 = 2.0;
pub const MIN_TAIL_RETURNS: usize = 500;
/// Band of `tau0 / <tau>` on which the conditional-mean model is fitted and used.
pub const BAND: (f64, f64) = (0.1, 10.0);
pub const MIN_BAND_BINS: usize = 10;

pub fn in_band(x: f64) -> bool {
    x > BAND.0 && x <= BAND.1
}

// ---------------------------------------------------------------------------
// Hazard probability

#[derive(Debug, Clone, PartialEq)]
pub struct HazardCurve {
    pub delta_t: u64,
    pub t_values: Vec<f64>,
    pub w_empirical: Vec<f64>,
    pub w_theoretical: Vec<f64>,
    /// Whether `t >= x_min <tau>`, where the power-law approximation applies.
    pub valid: Vec<bool>,
}

impl HazardCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,w_empirical,w_theoretical,valid")?;
        for i in 0..self.t_values.len() {
            writeln!(
                out,
                "{},{},{},{}",
                crate::fmt_num(self.t_values[i]),
                crate::fmt_num(self.w_empirical[i]),
                crate::fmt_num(self.w_theoretical[i]),
                self.valid[i]
            )?;
        }
        Ok(())
    }
}

/// `W(t) = #{t < tau <= t + dt} / #{tau > t}` at each grid point. Points with
/// no surviving interval are left out of the result.
pub fn hazard_empirical(
    intervals: &RecurrenceIntervalSeries,
    delta_t: u64,
    t_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if intervals.is_empty() {
        return Err(Error::InsufficientData("no intervals".into()));
    }
    check_grid(t_grid)?;
    let mut sorted = intervals.intervals().to_vec();
    sorted.sort_unstable();
    let above = |t: f64| sorted.len() - sorted.partition_point(|&v| v as f64 <= t);
    let out: Vec<(f64, f64)> = t_grid
        .iter()
        .filter_map(|&t| {
            let survivors = above(t);
            (survivors > 0).then(|| {
                let hit = survivors - above(t + delta_t as f64);
                (t, hit as f64 / survivors as f64)
            })
        })
        .collect();
    if out.is_empty() {
        return Err(Error::InsufficientData(
            "no interval outlasts any grid point".into(),
        ));
    }
    Ok(out)
}

/// `W = (delta - 1) dt / t`, clamped to `[0, 1]`, with a validity flag for
/// `t >= x_min <tau>`.
pub fn hazard_theoretical(
    fit: &PowerLawFit,
    mean_interval: f64,
    delta_t: u64,
    t_grid: &[f64],
) -> Vec<(f64, bool)> {
    let t_min = fit.x_min * mean_interval;
    t_grid
        .iter()
        .map(|&t| {
            let w = ((fit.delta - 1.0) * delta_t as f64 / t).clamp(0.0, 1.0);
            (if w.is_nan() { 1.0 } else { w }, t >= t_min)
        })
        .collect()
}

/// Empirical and theoretical hazard on the grid points the empirical part keeps.
pub fn hazard_curve(
    intervals: &RecurrenceIntervalSeries,
    fit: &PowerLawFit,
    delta_t: u64,
    t_grid: &[f64],
) -> Result<HazardCurve> {
    let emp = hazard_empirical(intervals, delta_t, t_grid)?;
    let t_values: Vec<f64> = emp.iter().map(|p| p.0).collect();
    let theo = hazard_theoretical(fit, intervals.mean_interval(), delta_t, &t_values);
    Ok(HazardCurve {
        delta_t,
        w_empirical: emp.iter().map(|p| p.1).collect(),
        w_theoretical: theo.iter().map(|p| p.0).collect(),
        valid: theo.iter().map(|p| p.1).collect(),
        t_values,
    })
}

/// Log-spaced integer grid from 1 to the largest interval, `per_decade` points
/// per decade.
pub fn default_t_grid(intervals: &RecurrenceIntervalSeries, per_decade: usize) -> Vec<f64> {
    let max = intervals.intervals().iter().copied().max().unwrap_or(1).max(1) as f64;
    let top = (max.log10() * per_decade as f64).floor() as i64;
    let mut grid: Vec<f64> = (0..=top)
        .map(|k| 10f64.powf(k as f64 / per_decade as f64).round())
        .collect();
    grid.dedup();
    grid
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty t grid".into()));
    }
    if t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidArgument("t grid must be finite and >= 0".into()));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("t grid must be increasing".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Return tail and loss probability

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Negative,
    Positive,
}

/// Tail density `k |r|^-(beta + 1)` for `|r| >= 2` on one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub beta: f64,
    pub beta_se: f64,
    pub k: f64,
    pub cutoff: f64,
    pub side: Side,
    pub n_tail: usize,
    pub n_total: usize,
}

/// Continuous Hill estimate with the cutoff fixed at 2. `k` matches the
/// fitted tail mass `(k / beta) 2^-beta` to the observed fraction.
pub fn fit_return_tail(returns: &NormalizedReturnSeries, side: Side) -> Result<TailFit> {
    let tail: Vec<f64> = returns
        .values
        .iter()
        .filter_map(|&r| match side {
            Side::Negative if r <= -TAIL_CUTOFF => Some(-r),
            Side::Positive if r >= TAIL_CUTOFF => Some(r),
            _ => None,
        })
        .collect();
    if tail.len() < MIN_TAIL_RETURNS {
        return Err(Error::TailTooThin(format!(
            "{} returns beyond |r| = {TAIL_CUTOFF}; need {MIN_TAIL_RETURNS}",
            tail.len()
        )));
    }
    let s: f64 = tail.iter().map(|x| (x / TAIL_CUTOFF).ln()).sum();
    if !(s > 0.0) {
        return Err(Error::TailTooThin("every tail return sits on the cutoff".into()));
    }
    let n_tail = tail.len();
    let beta = n_tail as f64 / s;
    let fraction = n_tail as f64 / returns.len() as f64;
    Ok(TailFit {
        beta,
        beta_se: beta / (n_tail as f64).sqrt(),
        k: beta * fraction * TAIL_CUTOFF.powf(beta),
        cutoff: TAIL_CUTOFF,
        side,
        n_tail,
        n_total: returns.len(),
    })
}

/// `p* = (k / beta) |q|^-beta` for a loss level `q <= -2`.
pub fn loss_probability(tail: &TailFit, q: f64) -> Result<f64> {
    if !(q <= -TAIL_CUTOFF) {
        return Err(Error::OutsideTailRegion { q });
    }
    Ok(tail.k / tail.beta * q.abs().powf(-tail.beta))
}

// ---------------------------------------------------------------------------
// Conditional mean interval

/// Mean of the following interval for preceding intervals in one log bin,
/// both in units of `<tau>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMeanPoint {
    pub tau0_scaled: f64,
    pub mean_ratio: f64,
    pub count: usize,
}

/// `<tau|tau0> / <tau> = [1 + gamma x^-mu] x^nu` with `x = tau0 / <tau>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMeanFit {
    pub gamma: f64,
    pub mu: f64,
    pub nu: f64,
    pub fit_region: (f64, f64),
    pub residual_rms: f64,
    pub n_points: usize,
}

impl ConditionalMeanFit {
    pub fn eval(&self, x: f64) -> f64 {
        conditional_mean_model(self.gamma, self.mu, self.nu, x)
    }
}

pub fn conditional_mean_model(gamma: f64, mu: f64, nu: f64, x: f64) -> f64 {
    (1.0 + gamma * x.powf(-mu)) * x.powf(nu)
}

/// Groups successor pairs by the log bin of `tau0 / <tau>`. Each point sits at
/// the mean scaled `tau0` of its bin.
pub fn conditional_mean_points(
    intervals: &RecurrenceIntervalSeries,
    bins_per_decade: usize,
) -> Result<Vec<ConditionalMeanPoint>> {
    pooled_conditional_mean_points(std::slice::from_ref(intervals), bins_per_decade)
}

/// As [`conditional_mean_points`], pooling the pairs of several series, each
/// scaled by its own `<tau>`.
pub fn pooled_conditional_mean_points(
    sets: &[RecurrenceIntervalSeries],
    bins_per_decade: usize,
) -> Result<Vec<ConditionalMeanPoint>> {
    let binning = LogBinning::new(bins_per_decade)?;
    let mut pairs: Vec<(i64, f64, f64)> = Vec::new();
    for s in sets {
        let m = s.mean_interval();
        pairs.extend(s.successor_pairs().map(|(a, b)| {
            let x0 = a as f64 / m;
            (binning.index(x0), x0, b as f64 / m)
        }));
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no successor pairs".into()));
    }
    pairs.sort_by_key(|p| p.0);
    Ok(pairs
        .chunk_by(|a, b| a.0 == b.0)
        .map(|g| {
            let n = g.len() as f64;
            ConditionalMeanPoint {
                tau0_scaled: g.iter().map(|p| p.1).sum::<f64>() / n,
                mean_ratio: g.iter().map(|p| p.2).sum::<f64>() / n,
                count: g.len(),
            }
        })
        .collect())
}

/// Fits the conditional-mean model to binned successor pairs on the band.
pub fn fit_conditional_mean(
    intervals: &RecurrenceIntervalSeries,
    bins_per_decade: usize,
) -> Result<ConditionalMeanFit> {
    fit_conditional_mean_points(&conditional_mean_points(intervals, bins_per_decade)?)
}

pub fn fit_conditional_mean_points(points: &[ConditionalMeanPoint]) -> Result<ConditionalMeanFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.mean_ratio > 0.0)
        .map(|p| (p.tau0_scaled, p.mean_ratio))
        .unzip();
    fit_conditional_mean_curve(&x, &y)
}

const GAMMA_STARTS: [f64; 3] = [0.1, 0.5, 1.0];
const MU_STARTS: [f64; 3] = [0.5, 1.0, 2.0];
const NU_STARTS: [f64; 3] = [0.1, 0.3, 0.6];
const LM_MAX_ITER: usize = 500;

/// Least squares on `ln y - ln g(x)` over points with `x` in the band,
/// Levenberg-Marquardt from each point of a 3x3x3 start grid.
pub fn fit_conditional_mean_curve(x: &[f64], y: &[f64]) -> Result<ConditionalMeanFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("x and y lengths differ".into()));
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(&a, &b)| in_band(a) && b > 0.0 && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    if lx.len() < MIN_BAND_BINS {
        return Err(Error::InsufficientData(format!(
            "{} populated bins inside ({}, {}]; need {MIN_BAND_BINS}",
            lx.len(),
            BAND.0,
            BAND.1
        )));
    }
    let mut best: Option<(Vector3<f64>, f64, bool)> = None;
    for g in GAMMA_STARTS {
        for mu in MU_STARTS {
            for nu in NU_STARTS {
                let (p, cost, converged) = levenberg_marquardt(&lx, &ly, Vector3::new(g, mu, nu));
                let better = match &best {
                    None => true,
                    Some((_, c, conv)) => (converged && !conv) || (converged == *conv && cost < *c),
                };
                if better && cost.is_finite() {
                    best = Some((p, cost, converged));
                }
            }
        }
    }
    let n = lx.len() as f64;
    match best {
        Some((p, cost, true)) => Ok(ConditionalMeanFit {
            gamma: p[0],
            mu: p[1],
            nu: p[2],
            fit_region: BAND,
            residual_rms: (cost / n).sqrt(),
            n_points: lx.len(),
        }),
        Some((_, cost, false)) => Err(Error::NonConvergence {
            best_residual: (cost / n).sqrt(),
        }),
        None => Err(Error::NonConvergence {
            best_residual: f64::INFINITY,
        }),
    }
}

/// Residuals `ln y - ln g` and their Jacobian with respect to the model's
/// log (sign flipped). `None` where `1 + gamma x^-mu <= 0`.
fn residuals(lx: &[f64], ly: &[f64], p: &Vector3<f64>, jac: Option<&mut Vec<[f64; 3]>>) -> Option<Vec<f64>> {
    let (gamma, mu, nu) = (p[0], p[1], p[2]);
    let mut r = Vec::with_capacity(lx.len());
    let mut rows = Vec::new();
    for (&l, &y) in lx.iter().zip(ly) {
        let e = (-mu * l).exp();
        let base = 1.0 + gamma * e;
        if !(base > 0.0) || !e.is_finite() {
            return None;
        }
        r.push(y - base.ln() - nu * l);
        rows.push([e / base, -gamma * l * e / base, l]);
    }
    if let Some(j) = jac {
        *j = rows;
    }
    Some(r)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn levenberg_marquardt(lx: &[f64], ly: &[f64], start: Vector3<f64>) -> (Vector3<f64>, f64, bool) {
    let mut p = start;
    let mut jac = Vec::new();
    let Some(mut r) = residuals(lx, ly, &p, Some(&mut jac)) else {
        return (p, f64::INFINITY, false);
    };
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    for _ in 0..LM_MAX_ITER {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (row, &ri) in jac.iter().zip(&r) {
            let g = Vector3::new(row[0], row[1], row[2]);
            jtj += g * g.transpose();
            jtr += g * ri;
        }
        if jtr.amax() <= 1e-14 * (1.0 + cost) {
            return (p, cost, true);
        }
        let mut stepped = false;
        while lambda < 1e12 {
            let mut a = jtj;
            let scale = jtj.diagonal().amax().max(1e-12);
            for i in 0..3 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-9 * scale);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let mut trial_jac = Vec::new();
            match residuals(lx, ly, &trial, Some(&mut trial_jac)) {
                Some(tr) if sum_sq(&tr) < cost => {
                    let new_cost = sum_sq(&tr);
                    let small_step = step.norm() <= 1e-12 * (1.0 + p.norm());
                    let small_gain = cost - new_cost <= 1e-15 * (1.0 + cost);
                    p = trial;
                    r = tr;
                    jac = trial_jac;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    stepped = true;
                    if small_step || small_gain {
                        return (p, cost, true);
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !stepped {
            // No downhill step at any damping: a local minimum to working precision.
            return (p, cost, true);
        }
    }
    (p, cost, false)
}

// ---------------------------------------------------------------------------
// Loss surfaces

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Empirical,
    Theoretical,
}

impl SurfaceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SurfaceKind::Empirical => "empirical",
            SurfaceKind::Theoretical => "theoretical",
        }
    }
}

/// Conditional loss probability on a `(q, tau0 / <tau>)` grid. `p_star[i][j]`
/// belongs to `q_grid[i]` and `tau0_grid[j]`; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSurface {
    pub q_grid: Vec<f64>,
    pub tau0_grid: Vec<f64>,
    pub p_star: Vec<Vec<Option<f64>>>,
    pub kind: SurfaceKind,
}

impl LossSurface {
    pub fn get(&self, qi: usize, ti: usize) -> Option<f64> {
        self.p_star[qi][ti]
    }

    /// Long format `q,tau0_scaled,p_star,kind,missing`; missing cells have an
    /// empty `p_star`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "q,tau0_scaled,p_star,kind,missing")?;
        for (i, q) in self.q_grid.iter().enumerate() {
            for (j, t) in self.tau0_grid.iter().enumerate() {
                let (p, missing) = match self.p_star[i][j] {
                    Some(v) => (crate::fmt_num(v), false),
                    None => (String::new(), true),
                };
                writeln!(
                    out,
                    "{},{},{p},{},{missing}",
                    crate::fmt_num(*q),
                    crate::fmt_num(*t),
                    self.kind.as_str()
                )?;
            }
        }
        Ok(())
    }
}

/// `tau0 / <tau>` values at the log-bin centres inside the band.
pub fn default_tau0_grid(bins_per_decade: usize) -> Vec<f64> {
    let b = bins_per_decade as i64;
    (-b + 1..=b)
        .map(|k| 10f64.powf(k as f64 / bins_per_decade as f64))
        .filter(|&x| in_band(x))
        .collect()
}

fn check_surface_grids(q_grid: &[f64], tau0_grid: &[f64]) -> Result<()> {
    if q_grid.is_empty() || tau0_grid.is_empty() {
        return Err(Error::InvalidArgument("surface grids must be non-empty".into()));
    }
    if let Some(&q) = q_grid.iter().find(|&&q| !(q <= -TAIL_CUTOFF)) {
        return Err(Error::OutsideTailRegion { q });
    }
    if tau0_grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidArgument("tau0 grid must be positive".into()));
    }
    Ok(())
}

/// `p* = (k / beta) |q|^-beta / g(tau0 / <tau>)`, clamped to `[0, 1]`. Cells
/// outside the band are missing: the model is not extrapolated.
pub fn conditional_loss_surface(
    tail: &TailFit,
    cmf: &ConditionalMeanFit,
    q_grid: &[f64],
    tau0_grid: &[f64],
) -> Result<LossSurface> {
    check_surface_grids(q_grid, tau0_grid)?;
    let p_star = q_grid
        .iter()
        .map(|&q| {
            let p = loss_probability(tail, q)?;
            Ok(tau0_grid
                .iter()
                .map(|&x| {
                    let g = cmf.eval(x);
                    (in_band(x) && g > 0.0).then(|| (p / g).clamp(0.0, 1.0))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(LossSurface {
        q_grid: q_grid.to_vec(),
        tau0_grid: tau0_grid.to_vec(),
        p_star,
        kind: SurfaceKind::Theoretical,
    })
}

/// For each `q`: extract intervals, then `p* = 1 / <tau|tau0>` from the
/// successor pairs whose scaled `tau0` falls in the log bin of each grid value.
/// Rows with too few events and empty bins are missing.
pub fn empirical_loss_surface(
    returns: &NormalizedReturnSeries,
    q_grid: &[f64],
    tau0_grid: &[f64],
    bins_per_decade: usize,
) -> Result<LossSurface> {
    check_surface_grids(q_grid, tau0_grid)?;
    let binning = LogBinning::new(bins_per_decade)?;
    let targets: Vec<i64> = tau0_grid.iter().map(|&x| binning.index(x)).collect();
    let p_star = q_grid
        .par_iter()
        .map(|&q| {
            let row = match extract_intervals(returns, ThresholdSpec::new(q)?) {
                Ok(s) => empirical_row(&s, &targets, binning),
                Err(Error::InsufficientEvents { .. }) => vec![None; targets.len()],
                Err(e) => return Err(e),
            };
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(LossSurface {
        q_grid: q_grid.to_vec(),
        tau0_grid: tau0_grid.to_vec(),
        p_star,
        kind: SurfaceKind::Empirical,
    })
}

fn empirical_row(s: &RecurrenceIntervalSeries, targets: &[i64], binning: LogBinning) -> Vec<Option<f64>> {
    let m = s.mean_interval();
    let mut sums = vec![(0.0f64, 0usize); targets.len()];
    for (a, b) in s.successor_pairs() {
        let k = binning.index(a as f64 / m);
        for (j, &t) in targets.iter().enumerate() {
            if t == k {
                sums[j].0 += b as f64;
                sums[j].1 += 1;
            }
        }
    }
    sums.iter()
        .map(|&(sum, n)| (n > 0).then(|| (n as f64 / sum).min(1.0)))
        .collect()
}
