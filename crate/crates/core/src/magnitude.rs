//! Size of price changes: log changes, within-group standardization,
//! kurtosis, responsiveness and the kurtosis-to-frequency ratio, with
//! product-cluster bootstrap intervals.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::StatsError;
use crate::filters::{FilterResult, SeriesKind};
use crate::panel::Price;
use crate::rigidity::{expected_duration, implied_duration, ChangeCount};
use crate::substream;

pub const WEEKS_PER_YEAR: f64 = 52.0;

/// One nonzero log price change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSample {
    pub store: String,
    pub product: String,
    pub category: String,
    pub week: u32,
    pub kind: SeriesKind,
    pub dp: f64,
}

/// Log changes over unmasked transitions. Returns `(week, dp)` pairs where
/// `week` is the index of the later week.
pub fn log_changes(series: &[Price], mask: &[bool]) -> Vec<(usize, f64)> {
    series
        .windows(2)
        .enumerate()
        .filter(|&(t, w)| w[0] != w[1] && !mask[t] && !mask[t + 1])
        .map(|(t, w)| (t + 1, (w[1].0 as f64).ln() - (w[0].0 as f64).ln()))
        .collect()
}

/// Every change sample of one product result.
pub fn change_samples(result: &FilterResult, kind: SeriesKind) -> Vec<ChangeSample> {
    log_changes(result.series(kind), &result.mask)
        .into_iter()
        .map(|(t, dp)| ChangeSample {
            store: result.key.store.clone(),
            product: result.key.product.clone(),
            category: result.category.clone(),
            week: result.first_week + t as u32,
            kind,
            dp,
        })
        .collect()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Variance with divisor `n` (`sample = false`) or `n - 1`.
pub fn variance(x: &[f64], sample: bool) -> f64 {
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    ss / (x.len() as f64 - if sample { 1.0 } else { 0.0 })
}

/// Pearson kurtosis `m4 / m2^2` with population moments (not excess).
pub fn kurtosis(x: &[f64]) -> Result<f64, StatsError> {
    if x.len() < 4 {
        return Err(StatsError::TooFew { needed: 4, got: x.len() });
    }
    let m = mean(x);
    let n = x.len() as f64;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(a, b), v| {
        let d2 = (v - m) * (v - m);
        (a + d2, b + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2.is_nan() || m2 <= 0.0 || m2.sqrt() <= 1e-12 * m.abs() {
        return Err(StatsError::ZeroVariance);
    }
    Ok(m4 / (m2 * m2))
}

/// Outcome of standardizing a set of labelled samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardized<K> {
    /// Standardized values with their group, in input order within groups.
    pub values: Vec<(K, f64)>,
    /// Groups dropped for having fewer than 2 samples or zero spread.
    pub excluded: Vec<K>,
}

/// Z-scores within groups, using the sample standard deviation.
pub fn standardize<K: Ord + Clone>(samples: &[(K, f64)], sample_sd: bool) -> Standardized<K> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (k, v) in samples {
        groups.entry(k.clone()).or_default().push(*v);
    }
    let mut out = Standardized { values: Vec::with_capacity(samples.len()), excluded: Vec::new() };
    for (k, vals) in groups {
        if vals.len() < 2 {
            log::debug!("standardization group excluded: fewer than 2 changes");
            out.excluded.push(k);
            continue;
        }
        let m = mean(&vals);
        let sd = variance(&vals, sample_sd).sqrt();
        if sd.is_nan() || sd <= 1e-15 * m.abs().max(1.0) {
            log::debug!("standardization group excluded: zero spread");
            out.excluded.push(k);
            continue;
        }
        out.values.extend(vals.into_iter().map(|v| (k.clone(), (v - m) / sd)));
    }
    out
}

/// Which duration estimator anchors the annual change count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyAnchor {
    /// Mean of per-product implied durations.
    #[default]
    Expected,
    /// Implied duration of the pooled frequency.
    Implied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeOptions {
    pub anchor: FrequencyAnchor,
    /// Divisor `n - 1` for the responsiveness variance (default `n`).
    pub sample_variance: bool,
    /// Divisor `n - 1` for standardization (default true).
    pub sample_sd: bool,
}

impl Default for MagnitudeOptions {
    fn default() -> Self {
        Self { anchor: FrequencyAnchor::Expected, sample_variance: false, sample_sd: true }
    }
}

/// Per-product summary used by the magnitude statistics and resampled as a
/// unit by the bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductChanges {
    pub category: String,
    pub counts: ChangeCount,
    pub dp: Vec<f64>,
}

impl ProductChanges {
    pub fn from_result(result: &FilterResult, kind: SeriesKind) -> Self {
        let series = result.series(kind);
        Self {
            category: result.category.clone(),
            counts: ChangeCount::of(series, &result.mask),
            dp: log_changes(series, &result.mask).into_iter().map(|(_, d)| d).collect(),
        }
    }
}

/// `52 / duration` changes per year.
pub fn annualized_changes(duration_weeks: f64) -> Result<f64, StatsError> {
    if !(duration_weeks.is_finite() && duration_weeks > 0.0) {
        return Err(StatsError::InvalidArgument(format!("duration {duration_weeks} weeks is undefined")));
    }
    Ok(WEEKS_PER_YEAR / duration_weeks)
}

/// Annual change count `N` for a group of products.
pub fn group_annual_changes(products: &[&ProductChanges], anchor: FrequencyAnchor) -> Result<f64, StatsError> {
    let duration = match anchor {
        FrequencyAnchor::Expected => {
            let f: Vec<f64> = products.iter().filter_map(|p| p.counts.frequency()).collect();
            expected_duration(&f)?.weeks
        }
        FrequencyAnchor::Implied => {
            let total: ChangeCount = products.iter().map(|p| p.counts).sum();
            implied_duration(total.frequency().ok_or(StatsError::NoTransitions)?)?
        }
    };
    annualized_changes(duration)
}

/// `N * var(dp)`.
pub fn responsiveness(products: &[&ProductChanges], opts: &MagnitudeOptions) -> Result<f64, StatsError> {
    let dp: Vec<f64> = products.iter().flat_map(|p| p.dp.iter().copied()).collect();
    if dp.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: dp.len() });
    }
    let n = group_annual_changes(products, opts.anchor)?;
    Ok(n * variance(&dp, opts.sample_variance))
}

/// Kurtosis of changes standardized within category, pooled.
pub fn standardized_kurtosis(products: &[&ProductChanges], sample_sd: bool) -> Result<f64, StatsError> {
    let labelled: Vec<(&str, f64)> =
        products.iter().flat_map(|p| p.dp.iter().map(move |&d| (p.category.as_str(), d))).collect();
    let z: Vec<f64> = standardize(&labelled, sample_sd).values.into_iter().map(|(_, v)| v).collect();
    kurtosis(&z)
}

/// `kurtosis / N` using the standardized pooled kurtosis.
pub fn sufficient_statistic(products: &[&ProductChanges], opts: &MagnitudeOptions) -> Result<f64, StatsError> {
    let k = standardized_kurtosis(products, opts.sample_sd)?;
    let n = group_annual_changes(products, opts.anchor)?;
    Ok(k / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    pub failed_resamples: usize,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Percentile 95% bootstrap interval. Products are the resampling unit,
/// drawn with replacement; each replicate uses its own seeded stream, so the
/// result does not depend on thread count or scheduling.
pub fn bootstrap_ci<F>(
    products: &[&ProductChanges],
    statistic: F,
    replicates: usize,
    seed: u64,
) -> Result<ConfidenceInterval, StatsError>
where
    F: Fn(&[&ProductChanges]) -> Result<f64, StatsError> + Sync,
{
    if replicates < 2 {
        return Err(StatsError::InvalidArgument("bootstrap needs at least 2 replicates".into()));
    }
    if products.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let estimate = statistic(products)?;
    let draws: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, &[b as u64]));
            let resample: Vec<&ProductChanges> =
                (0..products.len()).map(|_| products[rng.random_range(0..products.len())]).collect();
            statistic(&resample).ok().filter(|v| v.is_finite())
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    if failed * 10 > replicates {
        return Err(StatsError::BootstrapUndefined { failed, total: replicates });
    }
    let mut ok: Vec<f64> = draws.into_iter().flatten().collect();
    ok.sort_by(f64::total_cmp);
    Ok(ConfidenceInterval {
        estimate,
        low: quantile(&ok, 0.025),
        high: quantile(&ok, 0.975),
        failed_resamples: failed,
    })
}

/// Histogram of standardized changes: bins of `width` on `[lo, hi)`; values
/// outside are clamped into the edge bins.
pub fn z_histogram(z: &[f64], lo: f64, hi: f64, width: f64) -> Vec<(f64, usize)> {
    let n_bins = ((hi - lo) / width).round() as usize;
    let mut counts = vec![0usize; n_bins];
    for &v in z {
        let idx = ((v - lo) / width).floor();
        let idx = idx.clamp(0.0, (n_bins - 1) as f64) as usize;
        counts[idx] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (lo + i as f64 * width, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[i64]) -> Vec<Price> {
        v.iter().map(|&c| Price(c)).collect()
    }

    #[test]
    fn log_change_values() {
        let d = log_changes(&p(&[200, 220]), &[false, false]);
        assert!((d[0].1 - 1.1f64.ln()).abs() < 1e-15);
        assert!((d[0].1 - 0.09531).abs() < 1e-5);
        assert!(log_changes(&p(&[300; 5]), &[false; 5]).is_empty());
        let d = log_changes(&p(&[1000, 800, 1000]), &[false; 3]);
        assert!((d[0].1 + 0.22314).abs() < 1e-5 && (d[1].1 - 0.22314).abs() < 1e-5);
        assert!(log_changes(&p(&[1000, 800, 1000]), &[false, true, false]).is_empty());
    }

    #[test]
    fn annualized() {
        assert!((annualized_changes(10.70).unwrap() - 4.86).abs() < 0.005);
        assert_eq!(annualized_changes(52.0).unwrap(), 1.0);
        assert_eq!(annualized_changes(26.0).unwrap(), 2.0);
        assert!(annualized_changes(f64::INFINITY).is_err());
    }

    #[test]
    fn standardize_pair() {
        let s = standardize(&[(0, 0.1), (0, 0.3)], true);
        assert!((s.values[0].1 + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((s.values[1].1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((variance(&[0.1, 0.3], true).sqrt() - 0.14142).abs() < 1e-5);
        let s = standardize(&[(0, 0.2), (0, 0.2), (1, 0.5)], true);
        assert!(s.values.is_empty());
        assert_eq!(s.excluded, vec![0, 1]);
    }

    #[test]
    fn kurtosis_values() {
        assert_eq!(kurtosis(&[-1.0, -1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(kurtosis(&[-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap(), 1.7);
        assert!(matches!(kurtosis(&[1.0, 2.0, 3.0]), Err(StatsError::TooFew { .. })));
        assert_eq!(kurtosis(&[2.0; 6]), Err(StatsError::ZeroVariance));
    }

    #[test]
    fn kurtosis_of_normal_draws() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!((kurtosis(&x).unwrap() - 3.0).abs() < 0.05);
    }

    fn prod(cat: &str, changes: usize, transitions: usize, dp: &[f64]) -> ProductChanges {
        ProductChanges { category: cat.into(), counts: ChangeCount { changes, transitions }, dp: dp.to_vec() }
    }

    #[test]
    fn responsiveness_and_ratio() {
        // Every product changes half the time: expected duration 1/ln 2.
        let a = prod("c", 26, 52, &[0.1, -0.1]);
        let b = prod("c", 26, 52, &[0.1, -0.1]);
        let opts = MagnitudeOptions::default();
        let n = group_annual_changes(&[&a, &b], FrequencyAnchor::Expected).unwrap();
        assert!((n - 52.0 * 2f64.ln()).abs() < 1e-12);
        assert!((n - 36.04).abs() < 0.01);
        let r = responsiveness(&[&a, &b], &opts).unwrap();
        assert!((r - n * 0.01).abs() < 1e-12);
        assert!((r - 0.3604).abs() < 1e-4);

        let a2 = prod("c", 26, 52, &[0.2, -0.2]);
        let r2 = responsiveness(&[&a2, &a2], &opts).unwrap();
        assert!((r2 / r - 4.0).abs() < 1e-12);

        let none = prod("c", 0, 52, &[]);
        assert!(responsiveness(&[&none], &opts).is_err());
    }

    #[test]
    fn sufficient_statistic_arithmetic() {
        // kurtosis {-1,-1,1,1} = 1 after standardization; N = 52 / 52 = 1.
        let f = 1.0 - (-1.0f64 / 52.0).exp();
        let transitions = 1_000_000usize;
        let changes = (f * transitions as f64).round() as usize;
        let a = prod("c", changes, transitions, &[-1.0, -1.0, 1.0, 1.0]);
        let s = sufficient_statistic(&[&a], &MagnitudeOptions::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bootstrap_identical_products_zero_width() {
        let a = prod("c", 10, 51, &[0.1, -0.2, 0.05, 0.3, -0.1]);
        let ps = vec![&a; 20];
        let opts = MagnitudeOptions::default();
        let ci = bootstrap_ci(&ps, |g| responsiveness(g, &opts), 200, 3).unwrap();
        assert!((ci.high - ci.low).abs() < 1e-12);
        assert!((ci.low - ci.estimate).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let ps: Vec<ProductChanges> = (0..30)
            .map(|i| prod("c", 5 + i % 7, 51, &[0.01 * i as f64, -0.05, 0.02 * (i % 3) as f64 + 0.01]))
            .collect();
        let refs: Vec<&ProductChanges> = ps.iter().collect();
        let opts = MagnitudeOptions::default();
        let a = bootstrap_ci(&refs, |g| responsiveness(g, &opts), 300, 9).unwrap();
        let b = bootstrap_ci(&refs, |g| responsiveness(g, &opts), 300, 9).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(&refs, |g| responsiveness(g, &opts), 300, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bootstrap_reports_undefined_statistic() {
        let a = prod("c", 1, 51, &[0.1]);
        let ps = vec![&a; 5];
        let e = bootstrap_ci(&ps, |_| Ok(1.0), 1, 0);
        assert!(e.is_err());
        let mut calls = std::sync::atomic::AtomicUsize::new(0);
        let r = bootstrap_ci(
            &ps,
            |_| {
                let k = calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if k == 0 { Ok(1.0) } else { Err(StatsError::EmptySample) }
            },
            50,
            0,
        );
        assert!(matches!(r, Err(StatsError::BootstrapUndefined { .. })));
        let _ = calls.get_mut();
    }

    #[test]
    fn histogram_bins() {
        let h = z_histogram(&[-10.0, 0.0, 0.1, 5.99, 7.0], -6.0, 6.0, 0.25);
        assert_eq!(h.len(), 48);
        assert_eq!(h[0].1, 1);
        assert_eq!(h[24], (0.0, 2));
        assert_eq!(h[47].1, 2);
    }
}
