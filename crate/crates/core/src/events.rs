//! Threshold exceedances and the recurrence intervals between them.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ingest::NormalizedReturnSeries;

/// Threshold in units of the return standard deviation. Positive values
/// select `r > q`, negative values select `r < q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSpec {
    q: f64,
}

impl ThresholdSpec {
    pub fn new(q: f64) -> Result<Self> {
        if !q.is_finite() || q.abs() < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "threshold q = {q}; need |q| >= 1"
            )));
        }
        Ok(Self { q })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Strict exceedance in the direction of the threshold's sign.
    #[inline]
    pub fn is_event(&self, r: f64) -> bool {
        if self.q > 0.0 {
            r > self.q
        } else {
            r < self.q
        }
    }
}

/// Intervals (in return-sampling units) between consecutive events.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceIntervalSeries {
    intervals: Vec<u64>,
    n_returns: usize,
    n_events: usize,
}

impl RecurrenceIntervalSeries {
    pub fn new(intervals: Vec<u64>, n_returns: usize, n_events: usize) -> Result<Self> {
        if n_events == 0 {
            return Err(Error::InsufficientEvents { n_events });
        }
        if intervals.contains(&0) {
            return Err(Error::InvalidArgument("intervals must be >= 1".into()));
        }
        let total: u64 = intervals.iter().sum();
        if total > n_returns as u64 {
            return Err(Error::InvalidArgument(format!(
                "intervals sum to {total}, more than {n_returns} returns"
            )));
        }
        Ok(Self {
            intervals,
            n_returns,
            n_events,
        })
    }

    pub fn intervals(&self) -> &[u64] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn n_returns(&self) -> usize {
        self.n_returns
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    /// `<tau>` = total returns / number of events.
    pub fn mean_interval(&self) -> f64 {
        self.n_returns as f64 / self.n_events as f64
    }

    /// Intervals divided by the mean interval.
    pub fn scaled(&self) -> Vec<f64> {
        let m = self.mean_interval();
        self.intervals.iter().map(|&t| t as f64 / m).collect()
    }

    /// Adjacent `(preceding, following)` interval pairs in time order.
    pub fn successor_pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.intervals.windows(2).map(|w| (w[0], w[1]))
    }

    /// Same intervals in a random order (the count fields are unchanged).
    pub fn shuffled(&self, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut intervals = self.intervals.clone();
        intervals.shuffle(&mut crate::rng::stream(seed));
        Self {
            intervals,
            ..*self
        }
    }

    pub fn write_csv<W: Write>(&self, q: Option<f64>, mut out: W) -> Result<()> {
        match q {
            Some(q) => writeln!(
                out,
                "# q={q} n_returns={} n_events={}",
                self.n_returns, self.n_events
            )?,
            None => writeln!(
                out,
                "# n_returns={} n_events={}",
                self.n_returns, self.n_events
            )?,
        }
        writeln!(out, "interval")?;
        for t in &self.intervals {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    /// Reads what [`write_csv`](Self::write_csv) produced. Returns the series
    /// and the threshold recorded in the metadata line, if any.
    pub fn read_csv<R: Read>(mut input: R) -> Result<(Self, Option<f64>)> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        if headers.len() != 1 || &headers[0] != "interval" {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected columns [interval], found [{}]",
                    headers.iter().collect::<Vec<_>>().join(", ")
                ),
            });
        }
        let meta = text
            .lines()
            .next()
            .filter(|l| l.starts_with('#'))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "missing metadata line '# n_returns=.. n_events=..'".into(),
            })?;
        let mut q = None;
        let (mut n_returns, mut n_events) = (None, None);
        for token in meta.trim_start_matches('#').split_whitespace() {
            let (key, value) = token.split_once('=').unwrap_or((token, ""));
            let bad = || Error::Parse {
                line: 1,
                message: format!("bad metadata entry {token:?}"),
            };
            match key {
                "q" => q = Some(value.parse::<f64>().map_err(|_| bad())?),
                "n_returns" => n_returns = Some(value.parse::<usize>().map_err(|_| bad())?),
                "n_events" => n_events = Some(value.parse::<usize>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let (n_returns, n_events) = match (n_returns, n_events) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "metadata must carry n_returns and n_events".into(),
                })
            }
        };
        let mut intervals = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let t = record[0].parse::<u64>().map_err(|_| Error::Parse {
                line,
                message: format!("interval {:?} is not a positive integer", &record[0]),
            })?;
            intervals.push(t);
        }
        Ok((Self::new(intervals, n_returns, n_events)?, q))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntervalOptions {
    /// Skip intervals whose two events lie in different sessions.
    pub reset_at_sessions: bool,
}

/// Event indices are global over the concatenated series; the stretch before
/// the first event is not an interval.
pub fn extract_intervals(
    returns: &NormalizedReturnSeries,
    spec: ThresholdSpec,
) -> Result<RecurrenceIntervalSeries> {
    extract_intervals_with(returns, spec, IntervalOptions::default())
}

pub fn extract_intervals_with(
    returns: &NormalizedReturnSeries,
    spec: ThresholdSpec,
    options: IntervalOptions,
) -> Result<RecurrenceIntervalSeries> {
    if returns.is_empty() {
        return Err(Error::InsufficientData("empty return series".into()));
    }
    let sessions = options
        .reset_at_sessions
        .then_some(returns.session_ids.as_slice())
        .filter(|s| s.len() == returns.len());
    let mut intervals = Vec::new();
    let mut n_events = 0usize;
    let mut last: Option<usize> = None;
    for (i, &r) in returns.values.iter().enumerate() {
        if !spec.is_event(r) {
            continue;
        }
        n_events += 1;
        if let Some(prev) = last {
            let same_session = sessions.is_none_or(|s| s[prev] == s[i]);
            if same_session {
                intervals.push((i - prev) as u64);
            }
        }
        last = Some(i);
    }
    if n_events < 2 {
        return Err(Error::InsufficientEvents { n_events });
    }
    Ok(RecurrenceIntervalSeries {
        intervals,
        n_returns: returns.len(),
        n_events,
    })
}

/// Sorted-rank split of the intervals into four equal-count bins.
#[derive(Debug, Clone, PartialEq)]
pub struct QuartilePartition {
    /// Largest interval in bins 0, 1 and 2.
    pub boundaries: [u64; 3],
    /// Bin index (0..=3) of each interval, in time order.
    pub bin_of: Vec<u8>,
    pub sizes: [usize; 4],
}

/// Ascending sort, then four contiguous blocks whose sizes differ by at most
/// one; the remainder goes to the earliest bins. Ties are split by sorted
/// position (stable sort, so earlier-in-time intervals come first).
pub fn partition_quartiles(series: &RecurrenceIntervalSeries) -> Result<QuartilePartition> {
    let n = series.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!(
            "{n} intervals; quartile bins need at least 4"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| series.intervals[i]);
    let base = n / 4;
    let rem = n % 4;
    let sizes: [usize; 4] = std::array::from_fn(|b| base + usize::from(b < rem));
    let mut bin_of = vec![0u8; n];
    let mut boundaries = [0u64; 3];
    let mut start = 0;
    for (b, &size) in sizes.iter().enumerate() {
        for &i in &order[start..start + size] {
            bin_of[i] = b as u8;
        }
        if b < 3 {
            boundaries[b] = series.intervals[order[start + size - 1]];
        }
        start += size;
    }
    Ok(QuartilePartition {
        boundaries,
        bin_of,
        sizes,
    })
}

/// Zeroes positive returns in place of dropping them, so positions survive.
pub fn mask_positive_returns(returns: &NormalizedReturnSeries) -> NormalizedReturnSeries {
    NormalizedReturnSeries {
        values: returns
            .values
            .iter()
            .map(|&r| if r > 0.0 { 0.0 } else { r })
            .collect(),
        sd: returns.sd,
        session_ids: returns.session_ids.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: Vec<f64>) -> NormalizedReturnSeries {
        NormalizedReturnSeries {
            session_ids: vec![0; values.len()],
            values,
            sd: 1.0,
        }
    }

    fn q(v: f64) -> ThresholdSpec {
        ThresholdSpec::new(v).unwrap()
    }

    #[test]
    fn hand_counted_intervals() {
        let r = series(vec![-3.0, 1.0, -2.5, 0.0, 0.0, -4.0]);
        let s = extract_intervals(&r, q(-2.0)).unwrap();
        assert_eq!(s.intervals(), &[2, 3]);
        assert_eq!(s.n_events(), 3);
        assert_eq!(s.mean_interval(), 2.0);
        let mirrored = extract_intervals(&r.negated(), q(2.0)).unwrap();
        assert_eq!(mirrored, s);
    }

    #[test]
    fn mean_interval_is_returns_over_events() {
        let mut v = vec![0.0; 100];
        for i in [3, 20, 41, 77, 90] {
            v[i] = 3.0;
        }
        let s = extract_intervals(&series(v), q(2.0)).unwrap();
        assert_eq!(s.mean_interval(), 20.0);
        assert_eq!(s.intervals(), &[17, 21, 36, 13]);
    }

    #[test]
    fn strict_inequality() {
        let r = series(vec![-2.0, -2.0, -2.1, 0.0, -2.1]);
        let s = extract_intervals(&r, q(-2.0)).unwrap();
        assert_eq!(s.intervals(), &[2]);
    }

    #[test]
    fn too_few_events() {
        let r = series(vec![0.0, -3.0, 0.0]);
        assert_eq!(
            extract_intervals(&r, q(-2.0)).unwrap_err(),
            Error::InsufficientEvents { n_events: 1 }
        );
        assert!(ThresholdSpec::new(0.5).is_err());
        assert!(ThresholdSpec::new(f64::NAN).is_err());
    }

    #[test]
    fn session_reset_skips_cross_session_intervals() {
        let r = NormalizedReturnSeries {
            values: vec![-3.0, 0.0, -3.0, 0.0, -3.0, -3.0],
            sd: 1.0,
            session_ids: vec![0, 0, 0, 1, 1, 1],
        };
        let global = extract_intervals(&r, q(-2.0)).unwrap();
        assert_eq!(global.intervals(), &[2, 2, 1]);
        let reset = extract_intervals_with(&r, q(-2.0), IntervalOptions { reset_at_sessions: true }).unwrap();
        assert_eq!(reset.intervals(), &[2, 1]);
        assert_eq!(reset.n_events(), 4);
    }

    fn from_intervals(v: &[u64]) -> RecurrenceIntervalSeries {
        let total: u64 = v.iter().sum();
        RecurrenceIntervalSeries::new(v.to_vec(), total as usize + 1, v.len() + 1).unwrap()
    }

    #[test]
    fn quartiles_exact_split() {
        let s = from_intervals(&[5, 1, 8, 3, 2, 7, 4, 6]);
        let p = partition_quartiles(&s).unwrap();
        assert_eq!(p.sizes, [2, 2, 2, 2]);
        assert_eq!(p.boundaries, [2, 4, 6]);
        let bins: Vec<u8> = p.bin_of.clone();
        assert_eq!(bins, vec![2, 0, 3, 1, 0, 3, 1, 2]);
    }

    #[test]
    fn quartiles_ties_and_remainder() {
        let p = partition_quartiles(&from_intervals(&[5, 5, 5, 5])).unwrap();
        assert_eq!(p.sizes, [1, 1, 1, 1]);
        assert_eq!(p.boundaries, [5, 5, 5]);
        assert_eq!(p.bin_of, vec![0, 1, 2, 3]);
        let p = partition_quartiles(&from_intervals(&[1; 10])).unwrap();
        assert_eq!(p.sizes, [3, 3, 2, 2]);
        assert!(partition_quartiles(&from_intervals(&[1, 2, 3])).is_err());
    }

    #[test]
    fn masking() {
        assert_eq!(mask_positive_returns(&series(vec![-1.0, 2.0, -3.0])).values, vec![-1.0, 0.0, -3.0]);
        assert_eq!(mask_positive_returns(&series(vec![-1.0, -2.0])).values, vec![-1.0, -2.0]);
        assert_eq!(mask_positive_returns(&series(vec![1.0, 2.0])).values, vec![0.0, 0.0]);
    }

    #[test]
    fn csv_round_trip_and_schema_errors() {
        let s = from_intervals(&[3, 1, 4, 1, 5]);
        let mut buf = Vec::new();
        s.write_csv(Some(-2.5), &mut buf).unwrap();
        let (back, q) = RecurrenceIntervalSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert_eq!(q, Some(-2.5));
        let err = RecurrenceIntervalSeries::read_csv("# n_returns=5 n_events=2\nx\n1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("expected columns [interval], found [x]"));
        assert!(RecurrenceIntervalSeries::read_csv("interval\n1\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn sign_symmetry(values in prop::collection::vec(-6.0f64..6.0, 1..300), qv in 1.0f64..4.0) {
            let r = series(values);
            let a = extract_intervals(&r, q(qv));
            let b = extract_intervals(&r.negated(), q(-qv));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn monotone_in_threshold(values in prop::collection::vec(-6.0f64..6.0, 50..300), q1 in 1.0f64..3.0, dq in 0.0f64..2.0) {
            let r = series(values);
            let (inner, outer) = (q(-q1), q(-q1 - dq));
            if let (Ok(a), Ok(b)) = (extract_intervals(&r, inner), extract_intervals(&r, outer)) {
                prop_assert!(b.n_events() <= a.n_events());
                prop_assert!(b.mean_interval() >= a.mean_interval());
            }
        }

        #[test]
        fn interval_invariants(values in prop::collection::vec(-6.0f64..6.0, 2..300)) {
            let r = series(values);
            if let Ok(s) = extract_intervals(&r, q(-1.5)) {
                let freq = r.values.iter().filter(|&&v| v < -1.5).count() as f64 / r.len() as f64;
                prop_assert!((1.0 / s.mean_interval() - freq).abs() <= 4.0 * f64::EPSILON * freq);
                prop_assert!(s.intervals().iter().all(|&t| t >= 1));
                prop_assert!(s.intervals().iter().sum::<u64>() as usize <= s.n_returns());
                prop_assert_eq!(s.len() + 1, s.n_events());
            }
        }
    }
}
