mod common;

use proptest::prelude::*;
use rigidity_core::filters::{filter_sales_a, reference_prices};
use rigidity_core::hazard::{fit_cox, partial_likelihood, CoxOptions, Ties, LIKELIHOOD_SLACK};
use rigidity_core::inference::{chi2_proportions, fk_index, wilcoxon_rank_sum};
use rigidity_core::magnitude::{kurtosis, standardize};
use rigidity_core::rigidity::{expected_duration, implied_duration, ChangeCount};
use rigidity_core::simgen::reference_oracle_series;
use rigidity_core::Price;

fn changes(s: &[Price]) -> usize {
    s.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Piecewise-constant series over a small price alphabet.
fn series() -> impl Strategy<Value = Vec<Price>> {
    prop::collection::vec((0usize..5, 1usize..8), 1..20).prop_filter_map("too short", |runs| {
        let levels = [199, 249, 279, 299, 349];
        let v: Vec<Price> =
            runs.into_iter().flat_map(|(l, n)| std::iter::repeat_n(Price(levels[l]), n)).collect();
        (v.len() >= 13).then_some(v)
    })
}

/// Piecewise-constant series whose runs all outlast half the window.
fn long_runs() -> impl Strategy<Value = Vec<Price>> {
    prop::collection::vec((0usize..5, 7usize..15), 1..8).prop_map(|runs| {
        let levels = [199, 249, 279, 299, 349];
        let mut v: Vec<Price> = Vec::new();
        let mut last = usize::MAX;
        for (l, n) in runs {
            let l = if l == last { (l + 1) % levels.len() } else { l };
            v.extend(std::iter::repeat_n(Price(levels[l]), n));
            last = l;
        }
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn filtered_is_one_sided_idempotent_and_stickier(s in series(), l in 1usize..8) {
        let (f, flags) = filter_sales_a(&s, l).unwrap();
        for t in 0..s.len() {
            prop_assert!(f[t] >= s[t]);
            prop_assert_eq!(flags[t], f[t] != s[t]);
        }
        prop_assert_eq!(&filter_sales_a(&f, l).unwrap().0, &f);
        prop_assert!(changes(&f) <= changes(&s));
    }

    #[test]
    fn reference_is_idempotent_on_long_runs(s in long_runs()) {
        let r = reference_prices(&s, 13, 6).unwrap();
        prop_assert_eq!(&r, &s);
        prop_assert_eq!(&reference_prices(&r, 13, 6).unwrap(), &r);
    }

    #[test]
    fn reference_is_idempotent_on_isolated_events(seed in any::<u64>(), weeks in 30usize..80) {
        let (s, _) = reference_oracle_series(weeks, 13, 6, seed);
        let r = reference_prices(&s, 13, 6).unwrap();
        prop_assert_eq!(&reference_prices(&r, 13, 6).unwrap(), &r);
        prop_assert!(changes(&r) <= changes(&s));
    }

    #[test]
    fn isolated_one_week_deviation(base in 100i64..1000, bump in -50i64..50, before in 6usize..12, after in 6usize..12) {
        prop_assume!(bump != 0);
        let mut s = vec![Price(base); before];
        s.push(Price(base + bump));
        s.extend(std::iter::repeat_n(Price(base), after));
        let r = reference_prices(&s, 13, 6).unwrap();
        prop_assert!(r.iter().all(|&p| p == Price(base)));
        let (f, _) = filter_sales_a(&s, 6).unwrap();
        // An upward spike survives the sales filter; a one-week cut does not.
        prop_assert_eq!(changes(&f), if bump > 0 { 2 } else { 0 });
    }

    #[test]
    fn expected_duration_dominates_implied(freqs in prop::collection::vec(0.001f64..0.86, 1..40)) {
        // Holds while every f stays below 1 - e^-2, where -1/ln(1-f) is convex.
        let e = expected_duration(&freqs).unwrap();
        let pooled = freqs.iter().sum::<f64>() / freqs.len() as f64;
        prop_assert!(e.weeks >= implied_duration(pooled).unwrap() - 1e-12);
    }

    #[test]
    fn adding_a_change_shortens_durations(c in 0usize..50, extra in 1usize..5, n in 50usize..100) {
        let a = ChangeCount { changes: c, transitions: n };
        let b = ChangeCount { changes: (c + extra).min(n), transitions: n };
        let (fa, fb) = (a.frequency().unwrap(), b.frequency().unwrap());
        prop_assert!(fb >= fa);
        prop_assert!(implied_duration(fb).unwrap() <= implied_duration(fa).unwrap());
    }

    #[test]
    fn kurtosis_affine_invariant(x in prop::collection::vec(-10.0f64..10.0, 4..60), a in 0.1f64..20.0, b in -50.0f64..50.0, neg in any::<bool>()) {
        let k = match kurtosis(&x) { Ok(k) => k, Err(_) => return Ok(()) };
        prop_assume!(x.iter().map(|v| (v - x[0]).abs()).fold(0.0, f64::max) > 1e-3);
        let a = if neg { -a } else { a };
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((kurtosis(&y).unwrap() - k).abs() < 1e-10 * k.max(1.0));
        prop_assert!(k >= 1.0 - 1e-12);
    }

    #[test]
    fn standardized_groups_have_unit_moments(groups in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2..30), 1..6)) {
        let samples: Vec<(usize, f64)> =
            groups.iter().enumerate().flat_map(|(g, v)| v.iter().map(move |&x| (g, x))).collect();
        let z = standardize(&samples, true);
        for g in 0..groups.len() {
            let v: Vec<f64> = z.values.iter().filter(|(k, _)| *k == g).map(|(_, x)| *x).collect();
            if v.is_empty() {
                prop_assert!(z.excluded.contains(&g));
                continue;
            }
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
            prop_assert!(m.abs() < 1e-10);
            prop_assert!((sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn chi2_symmetries(n1 in 1u64..500, n2 in 1u64..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let c1 = (a * n1 as f64) as u64;
        let c2 = (b * n2 as f64) as u64;
        let x = chi2_proportions(c1, n1, c2, n2).unwrap().chi2;
        let swapped = chi2_proportions(c2, n2, c1, n1).unwrap().chi2;
        let flipped = chi2_proportions(n1 - c1, n1, n2 - c2, n2).unwrap().chi2;
        prop_assert!((x - swapped).abs() <= 1e-12 * x.max(1.0));
        prop_assert!((x - flipped).abs() <= 1e-12 * x.max(1.0));
    }

    #[test]
    fn wilcoxon_antisymmetric_and_rank_based(
        x in prop::collection::vec(0i32..20, 1..25),
        y in prop::collection::vec(0i32..20, 1..25),
    ) {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let a = wilcoxon_rank_sum(&xf, &yf).unwrap();
        let b = wilcoxon_rank_sum(&yf, &xf).unwrap();
        prop_assert!((a.z + b.z).abs() < 1e-12);
        let g = |v: f64| (0.3 * v).exp() - 7.0;
        let xt: Vec<f64> = xf.iter().map(|&v| g(v)).collect();
        let yt: Vec<f64> = yf.iter().map(|&v| g(v)).collect();
        prop_assert!((wilcoxon_rank_sum(&xt, &yt).unwrap().z - a.z).abs() < 1e-12);
    }

    #[test]
    fn fk_permutation_and_duplication_invariant(
        m in prop::collection::vec(prop::collection::vec(any::<bool>(), 8), 2..5),
        shift in 1usize..8,
    ) {
        let base = fk_index(&m).unwrap();
        let rotated: Vec<Vec<bool>> = m.iter().map(|r| {
            let mut r = r.clone();
            r.rotate_left(shift);
            r.reverse();
            r
        }).collect();
        prop_assert_eq!(fk_index(&rotated).unwrap(), base);
        let doubled: Vec<Vec<bool>> = m.iter().chain(m.iter()).cloned().collect();
        prop_assert_eq!(fk_index(&doubled).unwrap(), base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cox_gradient_matches_finite_differences(seed in any::<u64>(), b0 in -1.0f64..1.0, b1 in -1.0f64..1.0, efron in any::<bool>()) {
        let rows = common::random_spells(seed, 15, 2, false);
        prop_assume!(rows.iter().any(|r| r.event));
        let ties = if efron { Ties::Efron } else { Ties::Breslow };
        let beta = [b0, b1];
        let e = partial_likelihood(&rows, &beta, ties).unwrap();
        if !efron {
            prop_assert!((e.log_likelihood - common::breslow_loglik(&rows, &beta)).abs() < 1e-9);
        }
        let h = 1e-5;
        for k in 0..2 {
            let mut up = beta;
            let mut dn = beta;
            up[k] += h;
            dn[k] -= h;
            let fd = (partial_likelihood(&rows, &up, ties).unwrap().log_likelihood
                - partial_likelihood(&rows, &dn, ties).unwrap().log_likelihood) / (2.0 * h);
            prop_assert!((e.score[k] - fd).abs() <= 1e-6 * e.score[k].abs().max(1.0), "k={} {} vs {}", k, e.score[k], fd);
        }
    }

    #[test]
    fn cox_scaling_and_stratum_duplication(seed in any::<u64>(), a in 0.2f64..5.0) {
        let rows = common::random_spells(seed, 20, 2, false);
        let fit = fit_cox(&common::spell_data(rows.clone(), 2), &CoxOptions::default());
        let Ok(fit) = fit else { return Ok(()) };
        prop_assume!(fit.converged);

        let scaled: Vec<_> = rows.iter().cloned().map(|mut r| { r.x[0] *= a; r }).collect();
        let sf = fit_cox(&common::spell_data(scaled, 2), &CoxOptions::default()).unwrap();
        prop_assert!((sf.coefficients[0] * a - fit.coefficients[0]).abs() < 1e-8 * fit.coefficients[0].abs().max(1.0));
        prop_assert!((sf.coefficients[1] - fit.coefficients[1]).abs() < 1e-8 * fit.coefficients[1].abs().max(1.0));
        prop_assert!((sf.log_likelihood - fit.log_likelihood).abs() < 1e-8 * fit.log_likelihood.abs().max(1.0));

        let n = rows.iter().map(|r| r.spell).max().unwrap() + 1;
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned().map(|mut r| { r.stratum = 1; r.spell += n; r.cluster += n; r }));
        let df = fit_cox(&common::spell_data(doubled, 2), &CoxOptions::default()).unwrap();
        for k in 0..2 {
            prop_assert!((df.coefficients[k] - fit.coefficients[k]).abs() < 1e-8 * fit.coefficients[k].abs().max(1.0));
        }
    }

    #[test]
    fn robust_covariance_matches_spell_score_sandwich(seed in any::<u64>()) {
        let rows = common::random_spells(seed, 20, 2, true);
        let Ok(fit) = fit_cox(&common::spell_data(rows.clone(), 2), &CoxOptions::default()) else { return Ok(()) };
        prop_assume!(fit.converged && fit.dropped.is_empty());
        let oracle = common::robust_from_spell_scores(&rows, &fit.coefficients, &fit.covariance);
        for (got, want) in fit.robust_covariance.iter().flatten().zip(oracle.iter().flatten()) {
            prop_assert!((got - want).abs() < 1e-8 * want.abs().max(1.0));
        }
    }

    #[test]
    fn newton_steps_never_lower_the_likelihood_beyond_rounding(seed in any::<u64>()) {
        let rows = common::random_spells(seed, 20, 2, false);
        let data = common::spell_data(rows, 2);
        let mut last = f64::NEG_INFINITY;
        for iters in 0..8 {
            let opts = CoxOptions { max_iter: iters, ..Default::default() };
            let Ok(fit) = fit_cox(&data, &opts) else { return Ok(()) };
            prop_assert!(fit.log_likelihood >= last - LIKELIHOOD_SLACK * (1.0 + last.abs()));
            last = fit.log_likelihood;
            if fit.converged {
                let e = partial_likelihood(&data.rows, &fit.coefficients, Ties::Breslow).unwrap();
                prop_assert!(e.score.amax() < 1e-8);
            }
        }
    }
}
