//! Log-binned empirical densities of scaled recurrence intervals.
//!
//! Bins live on a fixed logarithmic grid anchored at 1: bin `k` is centred on
//! `10^(k/b)` and spans `[10^((k-1/2)/b), 10^((k+1/2)/b))` for `b` bins per
//! decade. Because the grid does not depend on the data, densities built from
//! different subsamples share bins and can be mixed bin by bin.

use std::io::Write;

use crate::error::{Error, Result};
use crate::events::{QuartilePartition, RecurrenceIntervalSeries};

pub const DEFAULT_BINS_PER_DECADE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBinning {
    per_decade: usize,
}

impl LogBinning {
    pub fn new(per_decade: usize) -> Result<Self> {
        if per_decade == 0 {
            return Err(Error::InvalidArgument("bins per decade must be >= 1".into()));
        }
        Ok(Self { per_decade })
    }

    pub fn per_decade(&self) -> usize {
        self.per_decade
    }

    pub fn index(&self, x: f64) -> i64 {
        (self.per_decade as f64 * x.log10()).round() as i64
    }

    pub fn center(&self, k: i64) -> f64 {
        10f64.powf(k as f64 / self.per_decade as f64)
    }

    pub fn edges(&self, k: i64) -> (f64, f64) {
        let b = self.per_decade as f64;
        (
            10f64.powf((k as f64 - 0.5) / b),
            10f64.powf((k as f64 + 0.5) / b),
        )
    }

    pub fn width(&self, k: i64) -> f64 {
        let (lo, hi) = self.edges(k);
        hi - lo
    }
}

/// Density estimate; only non-empty bins are listed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPdf {
    pub bin_index: Vec<i64>,
    pub bin_centers: Vec<f64>,
    pub bin_widths: Vec<f64>,
    pub densities: Vec<f64>,
    pub counts: Vec<usize>,
    pub n_samples: usize,
}

impl EmpiricalPdf {
    /// `sum(density * width)`, which is 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.densities
            .iter()
            .zip(&self.bin_widths)
            .map(|(d, w)| d * w)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,density,count")?;
        for i in 0..self.counts.len() {
            writeln!(
                out,
                "{},{},{}",
                crate::fmt_num(self.bin_centers[i]),
                crate::fmt_num(self.densities[i]),
                self.counts[i]
            )?;
        }
        Ok(())
    }
}

/// Histogram density of positive samples on the anchored log grid.
pub fn pdf_from_samples(samples: &[f64], binning: LogBinning) -> Result<EmpiricalPdf> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to bin".into()));
    }
    if let Some(bad) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "log binning needs positive samples, got {bad}"
        )));
    }
    let mut idx: Vec<i64> = samples.iter().map(|&x| binning.index(x)).collect();
    idx.sort_unstable();
    let n = samples.len() as f64;
    let mut pdf = EmpiricalPdf {
        bin_index: Vec::new(),
        bin_centers: Vec::new(),
        bin_widths: Vec::new(),
        densities: Vec::new(),
        counts: Vec::new(),
        n_samples: samples.len(),
    };
    for chunk in idx.chunk_by(|a, b| a == b) {
        let k = chunk[0];
        let width = binning.width(k);
        pdf.bin_index.push(k);
        pdf.bin_centers.push(binning.center(k));
        pdf.bin_widths.push(width);
        pdf.densities.push(chunk.len() as f64 / (n * width));
        pdf.counts.push(chunk.len());
    }
    Ok(pdf)
}

/// Density of `x = tau / <tau>`, i.e. `P_q(tau) <tau>` against `tau / <tau>`.
pub fn scaled_pdf(series: &RecurrenceIntervalSeries, bins_per_decade: usize) -> Result<EmpiricalPdf> {
    if series.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} interval(s); need at least 2",
            series.len()
        )));
    }
    pdf_from_samples(&series.scaled(), LogBinning::new(bins_per_decade)?)
}

/// Scaled density of the intervals that immediately follow an interval in
/// quartile bin `bin_index`.
pub fn conditional_pdf(
    series: &RecurrenceIntervalSeries,
    partition: &QuartilePartition,
    bin_index: usize,
    bins_per_decade: usize,
) -> Result<EmpiricalPdf> {
    if bin_index > 3 {
        return Err(Error::InvalidArgument(format!("quartile bin {bin_index} > 3")));
    }
    if partition.bin_of.len() != series.len() {
        return Err(Error::InvalidArgument(
            "partition was built from a different series".into(),
        ));
    }
    let m = series.mean_interval();
    let samples: Vec<f64> = series
        .intervals()
        .windows(2)
        .zip(&partition.bin_of)
        .filter(|(_, &b)| b as usize == bin_index)
        .map(|(w, _)| w[1] as f64 / m)
        .collect();
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no successor intervals after quartile bin {bin_index}"
        )));
    }
    pdf_from_samples(&samples, LogBinning::new(bins_per_decade)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::partition_quartiles;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn series(v: &[u64], n_returns: usize, n_events: usize) -> RecurrenceIntervalSeries {
        RecurrenceIntervalSeries::new(v.to_vec(), n_returns, n_events).unwrap()
    }

    #[test]
    fn degenerate_spike_at_one() {
        // <tau> = 20 / 4 = 5 and every interval equals it
        let s = series(&[5, 5, 5], 20, 4);
        let pdf = scaled_pdf(&s, 10).unwrap();
        assert_eq!(pdf.bin_centers, vec![1.0]);
        assert_eq!(pdf.counts, vec![3]);
        assert!((pdf.densities[0] - 1.0 / pdf.bin_widths[0]).abs() < 1e-12);
    }

    #[test]
    fn doubling_leaves_scaled_pdf_unchanged() {
        let a = series(&[1, 3, 2, 9, 4, 1, 1, 7], 40, 9);
        let doubled: Vec<u64> = a.intervals().iter().map(|t| 2 * t).collect();
        let b = series(&doubled, 80, 9);
        assert_eq!(scaled_pdf(&a, 10).unwrap(), scaled_pdf(&b, 10).unwrap());
    }

    #[test]
    fn mass_sums_to_one() {
        let s = series(&[1, 2, 3, 5, 8, 13, 21, 34, 55, 89], 400, 11);
        let pdf = scaled_pdf(&s, 7).unwrap();
        assert!((pdf.total_mass() - 1.0).abs() < 1e-12);
        assert!(pdf.bin_centers.windows(2).all(|w| w[0] < w[1]));
        assert!(scaled_pdf(&series(&[4], 10, 2), 10).is_err());
    }

    #[test]
    fn conditional_counts_successor_pairs() {
        let s = series(&[1, 1, 1, 9, 9, 9, 1, 9], 60, 9);
        let p = partition_quartiles(&s).unwrap();
        let mut total = 0;
        for b in 0..4 {
            if let Ok(pdf) = conditional_pdf(&s, &p, b, 10) {
                total += pdf.n_samples;
            }
        }
        assert_eq!(total, 7);
    }

    #[test]
    fn conditional_on_clustered_blocks() {
        // Small intervals follow small ones, large follow large.
        let mut v = Vec::new();
        for _ in 0..20 {
            v.extend_from_slice(&[1, 1, 1, 1, 1]);
            v.extend_from_slice(&[50, 50, 50, 50, 50]);
        }
        let total: u64 = v.iter().sum();
        let s = series(&v, total as usize, v.len() + 1);
        let p = partition_quartiles(&s).unwrap();
        let small = conditional_pdf(&s, &p, 0, 10).unwrap();
        let large = conditional_pdf(&s, &p, 3, 10).unwrap();
        let mean = |pdf: &EmpiricalPdf| {
            pdf.bin_centers.iter().zip(&pdf.counts).map(|(x, &c)| x * c as f64).sum::<f64>() / pdf.n_samples as f64
        };
        // one in five successors crosses into the other block: 10.8 vs 40.2 in raw units
        assert!(mean(&small) < 0.35 * mean(&large));
        assert!(conditional_pdf(&s, &p, 4, 10).is_err());
    }

    proptest! {
        #[test]
        fn conditional_pdfs_mix_to_unconditional(v in prop::collection::vec(1u64..500, 8..200)) {
            let total: u64 = v.iter().sum();
            let s = series(&v, total as usize + 3, v.len() + 1);
            let p = partition_quartiles(&s).unwrap();
            let binning = LogBinning::new(10).unwrap();
            let m = s.mean_interval();
            let successors: Vec<f64> = v[1..].iter().map(|&t| t as f64 / m).collect();
            let all = pdf_from_samples(&successors, binning).unwrap();
            let mut mixed: BTreeMap<i64, f64> = BTreeMap::new();
            let mut counted = 0;
            for b in 0..4 {
                if let Ok(c) = conditional_pdf(&s, &p, b, 10) {
                    counted += c.n_samples;
                    let w = c.n_samples as f64 / successors.len() as f64;
                    for (k, d) in c.bin_index.iter().zip(&c.densities) {
                        *mixed.entry(*k).or_default() += w * d;
                    }
                }
            }
            prop_assert_eq!(counted, successors.len());
            prop_assert_eq!(mixed.len(), all.bin_index.len());
            for (k, d) in all.bin_index.iter().zip(&all.densities) {
                prop_assert!((mixed[k] - d).abs() <= 1e-12 * d);
            }
            prop_assert_eq!(all.counts.iter().sum::<usize>(), successors.len());
        }
    }
}
