//! Detrended fluctuation analysis (order 1).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::least_squares;

pub const MIN_WINDOW: usize = 4;
const GRID_POINTS: usize = 20;
const GRID_START: usize = 8;

/// `F(l)` for each window size `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fluctuation {
    pub window_sizes: Vec<usize>,
    pub fluctuations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfaResult {
    pub window_sizes: Vec<usize>,
    pub fluctuations: Vec<f64>,
    pub alpha: f64,
    pub alpha_se: f64,
    pub fit_range: (usize, usize),
}

impl DfaResult {
    /// `l,F` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "l,F")?;
        for (l, f) in self.window_sizes.iter().zip(&self.fluctuations) {
            writeln!(out, "{l},{}", crate::fmt_num(*f))?;
        }
        Ok(())
    }
}

/// 20 log-spaced window sizes from 8 to `n/4` (rounded, duplicates removed).
pub fn default_windows(n: usize) -> Vec<usize> {
    let hi = n / 4;
    if hi < GRID_START {
        return Vec::new();
    }
    let (lo_ln, hi_ln) = ((GRID_START as f64).ln(), (hi as f64).ln());
    let mut w: Vec<usize> = (0..GRID_POINTS)
        .map(|i| {
            let t = i as f64 / (GRID_POINTS - 1) as f64;
            ((lo_ln + t * (hi_ln - lo_ln)).exp().round() as usize).clamp(GRID_START, hi)
        })
        .collect();
    w.dedup();
    w
}

/// `[16, n/8]`.
pub fn default_fit_range(n: usize) -> (usize, usize) {
    (16, n / 8)
}

/// Profile = cumulative sum of the demeaned series. Each window size `l`
/// cuts `floor(n/l)` windows from the front and as many from the back, removes
/// a least-squares line from each, and reports the RMS residual.
pub fn dfa_fluctuation(series: &[f64], window_sizes: &[usize]) -> Result<Fluctuation> {
    let n = series.len();
    if window_sizes.is_empty() {
        return Err(Error::InvalidArgument("no window sizes".into()));
    }
    let mut windows = window_sizes.to_vec();
    windows.sort_unstable();
    windows.dedup();
    if windows[0] < MIN_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "window {} below the minimum of {MIN_WINDOW}",
            windows[0]
        )));
    }
    let largest = *windows.last().unwrap();
    if 4 * largest > n {
        return Err(Error::InsufficientData(format!(
            "window {largest} larger than n/4 for n = {n}"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("series holds non-finite values".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let profile: Vec<f64> = series
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v - mean;
            Some(*acc)
        })
        .collect();
    let fluctuations = windows
        .par_iter()
        .map(|&l| fluctuation_at(&profile, l))
        .collect();
    Ok(Fluctuation {
        window_sizes: windows,
        fluctuations,
    })
}

fn fluctuation_at(profile: &[f64], l: usize) -> f64 {
    let n = profile.len();
    let segments = n / l;
    let tail_start = n - segments * l;
    let mut rss = 0.0;
    for s in 0..segments {
        rss += detrended_rss(&profile[s * l..(s + 1) * l]);
        rss += detrended_rss(&profile[tail_start + s * l..tail_start + (s + 1) * l]);
    }
    (rss / (2 * segments * l) as f64).sqrt()
}

/// Residual sum of squares after removing the least-squares line.
fn detrended_rss(y: &[f64]) -> f64 {
    let l = y.len() as f64;
    let t_mid = (l - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / l;
    let (mut sty, mut stt) = (0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let t = i as f64 - t_mid;
        sty += t * (v - y_mean);
        stt += t * t;
    }
    let slope = sty / stt;
    y.iter()
        .enumerate()
        .map(|(i, &v)| {
            let r = v - y_mean - slope * (i as f64 - t_mid);
            r * r
        })
        .sum()
}

/// Least-squares slope of `ln F` against `ln l` over windows in `fit_range`
/// (inclusive).
pub fn fit_dfa_exponent(fluct: &Fluctuation, fit_range: (usize, usize)) -> Result<DfaResult> {
    let (lo, hi) = fit_range;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&l, &f) in fluct.window_sizes.iter().zip(&fluct.fluctuations) {
        if l < lo || l > hi {
            continue;
        }
        if !(f > 0.0) {
            return Err(Error::DegenerateFluctuation { window: l });
        }
        xs.push((l as f64).ln());
        ys.push(f.ln());
    }
    if xs.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} window sizes inside [{lo}, {hi}]; need 4",
            xs.len()
        )));
    }
    let line = least_squares(&xs, &ys)
        .ok_or_else(|| Error::InsufficientData("window sizes are not distinct".into()))?;
    Ok(DfaResult {
        window_sizes: fluct.window_sizes.clone(),
        fluctuations: fluct.fluctuations.clone(),
        alpha: line.slope,
        alpha_se: line.slope_se,
        fit_range,
    })
}

/// DFA with the default window grid and fit range.
pub fn dfa(series: &[f64]) -> Result<DfaResult> {
    let n = series.len();
    let windows = default_windows(n);
    if windows.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{n} points; DFA needs at least {}",
            4 * GRID_START
        )));
    }
    let fluct = dfa_fluctuation(series, &windows)?;
    fit_dfa_exponent(&fluct, default_fit_range(n))
}
