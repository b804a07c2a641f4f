//! Price loading, log returns, normalization and surrogate series.

use std::io::Read;

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::rng;

const MINUTES_PER_DAY: i64 = 1440;

/// Minute prices with a trading-session tag per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    timestamps: Vec<i64>,
    prices: Vec<f64>,
    session_ids: Vec<i64>,
}

impl PriceSeries {
    /// `timestamps` are minutes since the epoch and must be strictly
    /// increasing; `session_ids` must be non-decreasing.
    pub fn new(timestamps: Vec<i64>, prices: Vec<f64>, session_ids: Vec<i64>) -> Result<Self> {
        if timestamps.len() != prices.len() || prices.len() != session_ids.len() {
            return Err(Error::InvalidArgument(
                "timestamps, prices and session ids differ in length".into(),
            ));
        }
        if let Some((index, &price)) = prices
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0))
        {
            return Err(Error::InvalidPrice { index, price });
        }
        if let Some(i) = (1..timestamps.len()).find(|&i| timestamps[i] <= timestamps[i - 1]) {
            return Err(Error::InvalidArgument(format!(
                "timestamps not strictly increasing at observation {i}"
            )));
        }
        if let Some(i) = (1..session_ids.len()).find(|&i| session_ids[i] < session_ids[i - 1]) {
            return Err(Error::InvalidArgument(format!(
                "session ids decrease at observation {i}"
            )));
        }
        Ok(Self {
            timestamps,
            prices,
            session_ids,
        })
    }

    /// Sessions are the calendar day of each timestamp.
    pub fn from_minutes(timestamps: Vec<i64>, prices: Vec<f64>) -> Result<Self> {
        let sessions = timestamps
            .iter()
            .map(|t| t.div_euclid(MINUTES_PER_DAY))
            .collect();
        Self::new(timestamps, prices, sessions)
    }

    /// A single session with consecutive minute stamps starting at zero.
    pub fn single_session(prices: Vec<f64>) -> Result<Self> {
        let n = prices.len();
        Self::new((0..n as i64).collect(), prices, vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn session_ids(&self) -> &[i64] {
        &self.session_ids
    }

    pub fn n_sessions(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        1 + self
            .session_ids
            .windows(2)
            .filter(|w| w[1] != w[0])
            .count()
    }
}

/// Raw log returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub values: Vec<f64>,
    /// Index of the price observation each return ends at.
    pub alignment: Vec<usize>,
    pub session_ids: Vec<i64>,
}

impl ReturnSeries {
    /// Wraps bare values as one session (synthetic data).
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            values,
            alignment: (1..=n).collect(),
            session_ids: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Returns divided by their population standard deviation (not demeaned).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedReturnSeries {
    pub values: Vec<f64>,
    pub sd: f64,
    pub session_ids: Vec<i64>,
}

impl NormalizedReturnSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            sd: self.sd,
            session_ids: self.session_ids.clone(),
        }
    }
}

/// What happens to the return spanning two sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OvernightPolicy {
    #[default]
    Drop,
    Keep,
}

/// Log returns with overnight returns dropped.
pub fn compute_log_returns(prices: &PriceSeries) -> Result<ReturnSeries> {
    compute_log_returns_with(prices, OvernightPolicy::Drop)
}

pub fn compute_log_returns_with(
    prices: &PriceSeries,
    policy: OvernightPolicy,
) -> Result<ReturnSeries> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} price observation(s)",
            prices.len()
        )));
    }
    let p = prices.prices();
    let s = prices.session_ids();
    let mut out = ReturnSeries {
        values: Vec::with_capacity(p.len() - 1),
        alignment: Vec::with_capacity(p.len() - 1),
        session_ids: Vec::with_capacity(p.len() - 1),
    };
    for i in 1..p.len() {
        if s[i] != s[i - 1] && policy == OvernightPolicy::Drop {
            continue;
        }
        out.values.push(p[i].ln() - p[i - 1].ln());
        out.alignment.push(i);
        out.session_ids.push(s[i]);
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(
            "no session holds two observations".into(),
        ));
    }
    Ok(out)
}

/// Divides each return by `sqrt(<R^2> - <R>^2)` using population moments.
pub fn normalize_returns(returns: &ReturnSeries) -> Result<NormalizedReturnSeries> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} return(s)")));
    }
    let nf = n as f64;
    let mean = returns.values.iter().sum::<f64>() / nf;
    let var = returns
        .values
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / nf;
    let mean_sq = returns.values.iter().map(|r| r * r).sum::<f64>() / nf;
    if !(var.is_finite() && var > 1e-28 * mean_sq) {
        return Err(Error::DegenerateSeries("zero variance".into()));
    }
    let sd = var.sqrt();
    Ok(NormalizedReturnSeries {
        values: returns.values.iter().map(|r| r / sd).collect(),
        sd,
        session_ids: returns.session_ids.clone(),
    })
}

/// Uniform random permutation of the values. Session tags stay with positions.
pub fn shuffle_surrogate(
    returns: &NormalizedReturnSeries,
    seed: u64,
) -> Result<NormalizedReturnSeries> {
    if returns.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    let mut values = returns.values.clone();
    values.shuffle(&mut rng::stream(seed));
    Ok(NormalizedReturnSeries {
        values,
        sd: returns.sd,
        session_ids: returns.session_ids.clone(),
    })
}

/// Gaussian series with power spectrum `S(f) ~ f^-(2*alpha - 1)`, built by
/// filtering Gaussian Fourier coefficients (uniform random phases) and
/// inverting. The spectrum is synthesized on twice the requested length and
/// truncated so the output is not periodic. Output has zero mean, unit variance.
pub fn synth_correlated_gaussian(n: usize, alpha_target: f64, seed: u64) -> Result<ReturnSeries> {
    if n < 1 << 10 {
        return Err(Error::InvalidArgument(format!(
            "n = {n}; spectral synthesis needs n >= 1024"
        )));
    }
    if !(0.5..1.0).contains(&alpha_target) {
        return Err(Error::InvalidArgument(format!(
            "alpha_target = {alpha_target} outside [0.5, 1)"
        )));
    }
    let len = (2 * n).next_power_of_two();
    let exponent = 2.0 * alpha_target - 1.0;
    let mut rng = rng::stream(seed);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); len];
    let half = len / 2;
    for k in 1..=half {
        let f = k as f64 / len as f64;
        let amp = f.powf(-exponent / 2.0);
        let re: f64 = rng.sample(StandardNormal);
        if k == half {
            spectrum[k] = Complex64::new(amp * re, 0.0);
        } else {
            let im: f64 = rng.sample(StandardNormal);
            let c = Complex64::new(re, im) * (amp / std::f64::consts::SQRT_2);
            spectrum[k] = c;
            spectrum[len - k] = c.conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut spectrum);
    let mut values: Vec<f64> = spectrum[..n].iter().map(|c| c.re).collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    for v in &mut values {
        *v = (*v - mean) / sd;
    }
    Ok(ReturnSeries::from_values(values))
}

/// I.i.d. Student-t draws with `beta` degrees of freedom, rescaled to unit
/// variance. Tails decay as `|r|^-(beta+1)`.
pub fn synth_student_returns(n: usize, beta: f64, seed: u64) -> Result<NormalizedReturnSeries> {
    if n < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "n = {n}; need n >= 10000"
        )));
    }
    if !(beta > 2.0) {
        return Err(Error::InvalidArgument(format!(
            "beta = {beta}; variance is undefined for beta <= 2"
        )));
    }
    let dist = StudentT::new(beta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let sd = (beta / (beta - 2.0)).sqrt();
    let mut rng = rng::stream(seed);
    let values = (0..n).map(|_| dist.sample(&mut rng) / sd).collect();
    Ok(NormalizedReturnSeries {
        values,
        sd,
        session_ids: vec![0; n],
    })
}

fn parse_timestamp(field: &str) -> Option<i64> {
    if let Ok(m) = field.parse::<i64>() {
        return Some(m);
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS.iter().find_map(|f| {
        NaiveDateTime::parse_from_str(field, f)
            .ok()
            .map(|dt| dt.and_utc().timestamp().div_euclid(60))
    })
}

/// Reads `timestamp,price` rows. The header is optional; timestamps are
/// epoch minutes or naive ISO-8601 date-times. Sessions are calendar days.
pub fn read_price_csv<R: Read>(reader: R) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut timestamps = Vec::new();
    let mut prices = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(row + 1);
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected columns timestamp,price; found {} field(s)", record.len()),
            });
        }
        let (ts, px) = (&record[0], &record[1]);
        if row == 0 && parse_timestamp(ts).is_none() {
            if !(ts.eq_ignore_ascii_case("timestamp") && px.eq_ignore_ascii_case("price")) {
                return Err(Error::Parse {
                    line,
                    message: format!("expected columns timestamp,price; found {ts},{px}"),
                });
            }
            continue;
        }
        let t = parse_timestamp(ts).ok_or_else(|| Error::Parse {
            line,
            message: format!("unreadable timestamp {ts:?}"),
        })?;
        let p: f64 = px.parse().map_err(|_| Error::Parse {
            line,
            message: format!("unreadable price {px:?}"),
        })?;
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("invalid price {px}"),
            });
        }
        if let Some(&last) = timestamps.last() {
            if t <= last {
                return Err(Error::Parse {
                    line,
                    message: "timestamp not after the previous row".into(),
                });
            }
        }
        timestamps.push(t);
        prices.push(p);
    }
    PriceSeries::from_minutes(timestamps, prices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn log_returns_of_e_powers() {
        let e = std::f64::consts::E;
        let p = PriceSeries::single_session(vec![1.0, e, e]).unwrap();
        let r = compute_log_returns(&p).unwrap();
        assert!(close(&r.values, &[1.0, 0.0], 1e-15));
        assert_eq!(r.alignment, vec![1, 2]);
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let p = PriceSeries::single_session(vec![100.0; 3]).unwrap();
        assert_eq!(compute_log_returns(&p).unwrap().values, vec![0.0, 0.0]);
    }

    #[test]
    fn single_return_value() {
        let p = PriceSeries::single_session(vec![100.0, 105.0]).unwrap();
        let r = compute_log_returns(&p).unwrap();
        // ln(1.05)
        assert!((r.values[0] - 0.048_790_164_169_432).abs() < 1e-14);
    }

    #[test]
    fn overnight_return_dropped_or_kept() {
        let p = PriceSeries::new(vec![0, 1, 1440, 1441], vec![100.0, 101.0, 200.0, 202.0], vec![0, 0, 1, 1])
            .unwrap();
        let r = compute_log_returns(&p).unwrap();
        let l = 1.01f64.ln();
        assert!(close(&r.values, &[l, l], 1e-15));
        assert_eq!(r.alignment, vec![1, 3]);
        assert_eq!(r.len(), p.len() - p.n_sessions());

        let kept = compute_log_returns_with(&p, OvernightPolicy::Keep).unwrap();
        assert_eq!(kept.len(), 3);
        assert!((kept.values[1] - (200.0f64 / 101.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn too_little_data() {
        let p = PriceSeries::single_session(vec![100.0]).unwrap();
        assert!(matches!(compute_log_returns(&p), Err(Error::InsufficientData(_))));
        let p = PriceSeries::single_session(vec![]).unwrap();
        assert!(matches!(compute_log_returns(&p), Err(Error::InsufficientData(_))));
        // Two one-observation sessions leave nothing once the gap is dropped.
        let p = PriceSeries::new(vec![0, 1440], vec![1.0, 2.0], vec![0, 1]).unwrap();
        assert!(matches!(compute_log_returns(&p), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn non_positive_price_rejected() {
        let err = PriceSeries::single_session(vec![1.0, 0.0, 2.0]).unwrap_err();
        assert_eq!(err, Error::InvalidPrice { index: 1, price: 0.0 });
        assert!(PriceSeries::single_session(vec![1.0, -3.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let r = normalize_returns(&ReturnSeries::from_values(vec![1.0, -1.0, 1.0, -1.0])).unwrap();
        assert_eq!(r.values, vec![1.0, -1.0, 1.0, -1.0]);
        let r = normalize_returns(&ReturnSeries::from_values(vec![2.0, -2.0])).unwrap();
        assert_eq!(r.values, vec![1.0, -1.0]);
        let r = normalize_returns(&ReturnSeries::from_values(vec![0.0, 1.0, 2.0])).unwrap();
        // sd = sqrt(2/3)
        assert!(close(&r.values, &[0.0, 1.224_744_871_391_589, 2.449_489_742_783_178], 1e-12));
    }

    #[test]
    fn normalize_degenerate() {
        let err = normalize_returns(&ReturnSeries::from_values(vec![0.3; 10])).unwrap_err();
        assert!(matches!(err, Error::DegenerateSeries(_)));
        assert!(normalize_returns(&ReturnSeries::from_values(vec![1.0])).is_err());
    }

    #[test]
    fn shuffle_examples() {
        let one = NormalizedReturnSeries { values: vec![0.7], sd: 1.0, session_ids: vec![0] };
        assert_eq!(shuffle_surrogate(&one, 3).unwrap().values, vec![0.7]);
        let s = synth_student_returns(10_000, 4.0, 5).unwrap();
        let a = shuffle_surrogate(&s, 11).unwrap();
        let b = shuffle_surrogate(&s, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, s.values);
        let empty = NormalizedReturnSeries { values: vec![], sd: 1.0, session_ids: vec![] };
        assert!(shuffle_surrogate(&empty, 0).is_err());
    }

    #[test]
    fn white_noise_limit_is_uncorrelated() {
        let n = 1 << 14;
        let s = synth_correlated_gaussian(n, 0.5, 9).unwrap();
        let v = &s.values;
        let rho1 = v.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / v.iter().map(|x| x * x).sum::<f64>();
        assert!(rho1.abs() < 3.0 / (n as f64).sqrt(), "rho1 = {rho1}");
    }

    #[test]
    fn synth_gaussian_contract() {
        assert!(synth_correlated_gaussian(512, 0.8, 1).is_err());
        assert!(synth_correlated_gaussian(2048, 1.0, 1).is_err());
        assert!(synth_correlated_gaussian(2048, 0.4, 1).is_err());
        let a = synth_correlated_gaussian(2048, 0.8, 42).unwrap();
        let b = synth_correlated_gaussian(2048, 0.8, 42).unwrap();
        assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn student_contract() {
        assert!(synth_student_returns(10_000, 2.0, 1).is_err());
        assert!(synth_student_returns(9_999, 3.0, 1).is_err());
        let a = synth_student_returns(10_000, 3.0, 8).unwrap();
        assert_eq!(a, synth_student_returns(10_000, 3.0, 8).unwrap());
    }

    #[test]
    fn student_variance_is_unit() {
        let s = synth_student_returns(100_000, 5.0, 17).unwrap();
        let n = s.len() as f64;
        let mean = s.values.iter().sum::<f64>() / n;
        let var = s.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.1, "var = {var}");
    }

    #[test]
    fn csv_with_and_without_header() {
        let text = "timestamp,price\n2020-01-02T09:30:00,10.0\n2020-01-02T09:31:00,10.5\n2020-01-03 09:30,11\n";
        let p = read_price_csv(text.as_bytes()).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.n_sessions(), 2);
        let text = "0,10\n1,11\n1440,12\n";
        let p = read_price_csv(text.as_bytes()).unwrap();
        assert_eq!(p.session_ids(), &[0, 0, 1]);
    }

    #[test]
    fn csv_rejects_bad_prices_with_line_numbers() {
        for bad in ["NaN", "-1", "0"] {
            let text = format!("timestamp,price\n0,10\n1,{bad}\n");
            match read_price_csv(text.as_bytes()) {
                Err(Error::Parse { line, message }) => {
                    assert_eq!(line, 3);
                    assert!(message.contains("price"));
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        let err = read_price_csv("time,value\n0,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("timestamp,price"));
        let err = read_price_csv("5,1\n5,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    proptest! {
        #[test]
        fn returns_reconstruct_prices(prices in prop::collection::vec(0.01f64..1e4, 2..60)) {
            let p = PriceSeries::single_session(prices.clone()).unwrap();
            let r = compute_log_returns(&p).unwrap();
            let mut acc = 0.0;
            for (i, v) in r.values.iter().enumerate() {
                acc += v;
                let rebuilt = prices[0] * acc.exp();
                prop_assert!((rebuilt - prices[i + 1]).abs() <= 1e-12 * prices[i + 1].max(prices[0]) * 10.0);
            }
        }

        #[test]
        fn normalize_is_idempotent(values in prop::collection::vec(-5.0f64..5.0, 3..80)) {
            let base = ReturnSeries::from_values(values);
            if let Ok(once) = normalize_returns(&base) {
                let twice = normalize_returns(&ReturnSeries::from_values(once.values.clone())).unwrap();
                for (a, b) in once.values.iter().zip(&twice.values) {
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                }
                let n = once.len() as f64;
                let m = once.values.iter().sum::<f64>() / n;
                let var = once.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                prop_assert!((var - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn shuffle_preserves_multiset(values in prop::collection::vec(-5.0f64..5.0, 1..100), seed in any::<u64>()) {
            let s = NormalizedReturnSeries { session_ids: vec![0; values.len()], values, sd: 1.0 };
            let mut a = shuffle_surrogate(&s, seed).unwrap().values;
            let mut b = s.values.clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }
}
