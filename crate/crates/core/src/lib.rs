//! Recurrence-interval analysis of threshold exceedances in return series.
//!
//! The modules follow the data flow: prices are turned into normalized
//! returns ([`ingest`]), exceedances of a threshold give recurrence intervals
//! ([`events`]), whose scaled densities ([`dist`]), power-law tails ([`fit`])
//! and memory ([`memory`]) are measured, and finally turned into hazard and
//! loss-probability estimates ([`risk`]).

// NaN-rejecting guards are written as `!(x > 0.0)` throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod error;
pub mod events;
pub mod fit;
pub mod ingest;
pub mod memory;
pub mod regression;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
pub use events::{RecurrenceIntervalSeries, ThresholdSpec};
pub use fit::PowerLawFit;
pub use ingest::{NormalizedReturnSeries, PriceSeries, ReturnSeries};

/// Significant digits used for every number written to disk.
pub const OUTPUT_DIGITS: usize = 12;

/// Formats like C's `%.12g`: 12 significant digits, trailing zeros removed,
/// exponent notation outside `[1e-4, 1e12)`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", OUTPUT_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..OUTPUT_DIGITS as i32).contains(&exp) {
        let decimals = (OUTPUT_DIGITS as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

/// `v` rounded to the digits [`fmt_num`] writes.
pub fn round_sig(v: f64) -> f64 {
    if v.is_finite() {
        fmt_num(v).parse().unwrap_or(v)
    } else {
        v
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
