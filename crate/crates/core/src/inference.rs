//! Two-sample tests and the Fisher–Konieczny synchronization index.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionTestResult {
    pub c1: u64,
    pub n1: u64,
    pub c2: u64,
    pub n2: u64,
    pub chi2: f64,
    pub p_value: f64,
    /// Set when a pooled margin is empty and the statistic is forced to 0.
    pub degenerate: bool,
}

/// Upper tail of chi-square with one degree of freedom: the regularized
/// upper incomplete gamma `Q(1/2, x/2)`.
pub fn chi2_sf_df1(x: f64) -> f64 {
    if x <= 0.0 || x.is_nan() {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(0.5, x / 2.0)
}

/// Two-sided normal p-value, `P(chi2_1 > z^2)`.
pub fn normal_two_sided(z: f64) -> f64 {
    chi2_sf_df1(z * z)
}

/// Pearson chi-square for a 2x2 table of successes and failures, without
/// continuity correction.
pub fn chi2_proportions(c1: u64, n1: u64, c2: u64, n2: u64) -> Result<ProportionTestResult, StatsError> {
    if n1 == 0 || n2 == 0 || c1 > n1 || c2 > n2 {
        return Err(StatsError::InvalidArgument(format!("invalid counts ({c1}/{n1}, {c2}/{n2})")));
    }
    let a = c1 as f64;
    let b = (n1 - c1) as f64;
    let c = c2 as f64;
    let d = (n2 - c2) as f64;
    let successes = c1 + c2;
    let failures = (n1 - c1) + (n2 - c2);
    if successes == 0 || failures == 0 {
        log::warn!("chi-square with an empty pooled margin; statistic set to 0");
        return Ok(ProportionTestResult { c1, n1, c2, n2, chi2: 0.0, p_value: 1.0, degenerate: true });
    }
    let n = (n1 + n2) as f64;
    let diff = a * d - b * c;
    let chi2 = n * diff * diff / ((n1 as f64) * (n2 as f64) * successes as f64 * failures as f64);
    Ok(ProportionTestResult { c1, n1, c2, n2, chi2, p_value: chi2_sf_df1(chi2), degenerate: false })
}

/// Midranks (1-based) of the pooled sample, plus the tie term
/// `sum(t^3 - t)` over tie groups.
pub fn midranks(pooled: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    pub w: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Wilcoxon rank-sum test of `x` against `y`: normal approximation with
/// midranks and tie-corrected variance, no continuity correction.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64]) -> Result<RankSumResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n1 = x.len() as f64;
    let n2 = y.len() as f64;
    let n = n1 + n2;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let w: f64 = ranks[..x.len()].iter().sum();
    let expected = n1 * (n + 1.0) / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(RankSumResult { w, z: 0.0, p_value: 1.0 });
    }
    let z = (w - expected) / var.sqrt();
    Ok(RankSumResult { w, z, p_value: normal_two_sided(z) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncIndex {
    pub product: String,
    pub n_stores: usize,
    pub n_weeks: usize,
    pub value: Option<f64>,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Fisher–Konieczny index for a stores x weeks change matrix.
///
/// With `w_t` the share of stores changing in week `t`, the index is
/// `sqrt(sum_t (w_t - mean w)^2 / (T * mean w * (1 - mean w)))`. It is
/// evaluated in exact integer arithmetic up to the final square root, and is
/// `None` when no store ever changes or every store always does.
pub fn fk_index(changes: &[Vec<bool>]) -> Result<Option<f64>, StatsError> {
    let stores = changes.len();
    if stores < 2 {
        return Err(StatsError::TooFew { needed: 2, got: stores });
    }
    let weeks = changes[0].len();
    if weeks < 2 {
        return Err(StatsError::TooFew { needed: 2, got: weeks });
    }
    if changes.iter().any(|row| row.len() != weeks) {
        return Err(StatsError::InvalidArgument("ragged change matrix".into()));
    }
    let per_week: Vec<i128> =
        (0..weeks).map(|t| changes.iter().filter(|row| row[t]).count() as i128).collect();
    let total: i128 = per_week.iter().sum();
    let (s, t) = (stores as i128, weeks as i128);
    if total == 0 || total == s * t {
        return Ok(None);
    }
    let num: i128 = per_week.iter().map(|&c| (t * c - total).pow(2)).sum();
    let den: i128 = t * total * (s * t - total);
    let g = gcd(num as u128, den as u128).max(1) as i128;
    let (num, den) = (num / g, den / g);
    Ok(Some((num as f64).sqrt() / (den as f64).sqrt()))
}

/// Significance stars at the 10/5/1% levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chi2_by_expected_counts(c1: u64, n1: u64, c2: u64, n2: u64) -> f64 {
        let obs = [[c1 as f64, (n1 - c1) as f64], [c2 as f64, (n2 - c2) as f64]];
        let n = (n1 + n2) as f64;
        let row = [n1 as f64, n2 as f64];
        let col = [obs[0][0] + obs[1][0], obs[0][1] + obs[1][1]];
        let mut x = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let e = row[i] * col[j] / n;
                x += (obs[i][j] - e).powi(2) / e;
            }
        }
        x
    }

    #[test]
    fn chi2_values() {
        assert_eq!(chi2_proportions(30, 100, 10, 100).unwrap().chi2, 12.5);
        assert!((chi2_by_expected_counts(30, 100, 10, 100) - 12.5).abs() < 1e-12);
        assert_eq!(chi2_proportions(20, 100, 40, 200).unwrap().chi2, 0.0);
        let r = chi2_proportions(0, 10, 0, 20).unwrap();
        assert!(r.degenerate && r.chi2 == 0.0);
        assert!(chi2_proportions(11, 10, 0, 20).is_err());
    }

    #[test]
    fn table4_event_proportions() {
        // Promoted sale events per store over products x 52 weeks.
        let (e, h, y) = (99 * 52, 99 * 52, 108 * 52);
        assert!((chi2_proportions(12, e, 508, h).unwrap().chi2 - 498.27).abs() < 0.005);
        assert!((chi2_proportions(12, e, 265, y).unwrap().chi2 - 215.55).abs() < 0.005);
        assert!((chi2_proportions(508, h, 265, y).unwrap().chi2 - 106.84).abs() < 0.005);
    }

    #[test]
    fn chi2_p_values() {
        // Upper quantiles of chi-square(1) and the standard normal.
        assert!((chi2_sf_df1(3.841_458_820_694_128_5) - 0.05).abs() < 1e-12);
        assert!((chi2_sf_df1(6.634_896_601_021_217) - 0.01).abs() < 1e-12);
        assert!((chi2_sf_df1(10.827_566_170_662_733) - 0.001).abs() < 1e-12);
        assert!((normal_two_sided(1.959_963_984_540_054_5) - 0.05).abs() < 1e-12);
        assert!((normal_two_sided(-2.575_829_303_548_901) - 0.01).abs() < 1e-12);
        assert_eq!(chi2_sf_df1(0.0), 1.0);
    }

    #[test]
    fn wilcoxon_separated() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.w, 6.0);
        assert!((r.z + 4.5 / 5.25f64.sqrt()).abs() < 1e-12);
        assert!((r.z + 1.9640).abs() < 1e-4);
        let same = wilcoxon_rank_sum(&[1.0, 3.0, 5.0], &[1.0, 3.0, 5.0]).unwrap();
        assert_eq!(same.z, 0.0);
        let flat = wilcoxon_rank_sum(&[2.0, 2.0], &[2.0]).unwrap();
        assert_eq!(flat.z, 0.0);
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
    }

    /// Exact moments of the rank sum over every assignment of pooled midranks.
    fn permutation_z(x: &[f64], y: &[f64]) -> f64 {
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let (ranks, _) = midranks(&pooled);
        let n = pooled.len();
        let k = x.len();
        let observed: f64 = ranks[..k].iter().sum();
        let mut sums = Vec::new();
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == k {
                sums.push((0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum::<f64>());
            }
        }
        let m = sums.iter().sum::<f64>() / sums.len() as f64;
        let v = sums.iter().map(|s| (s - m).powi(2)).sum::<f64>() / sums.len() as f64;
        (observed - m) / v.sqrt()
    }

    #[test]
    fn wilcoxon_ties_match_permutation_moments() {
        let x = [1.0, 1.0, 2.0];
        let y = [1.0, 2.0, 2.0];
        let r = wilcoxon_rank_sum(&x, &y).unwrap();
        assert!((r.z - permutation_z(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn fk_examples() {
        let three_first = vec![vec![true, false, false, false]; 3];
        assert_eq!(fk_index(&three_first).unwrap(), Some(1.0));
        let staggered = vec![
            vec![true, false, false],
            vec![false, true, false],
            vec![false, false, true],
        ];
        assert_eq!(fk_index(&staggered).unwrap(), Some(0.0));
        let m = vec![vec![true, false], vec![true, true], vec![false, false]];
        assert_eq!(fk_index(&m).unwrap(), Some(1.0 / 3.0));
        assert_eq!(fk_index(&[vec![false; 4], vec![false; 4]]).unwrap(), None);
        assert_eq!(fk_index(&[vec![true; 4], vec![true; 4]]).unwrap(), None);
        assert!(fk_index(&[vec![true; 4]]).is_err());
    }

    #[test]
    fn star_levels() {
        assert_eq!(stars(0.005), "***");
        assert_eq!(stars(0.02), "**");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.5), "");
    }
}
