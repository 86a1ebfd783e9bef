//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigidity_core::hazard::{RiskRow, SpellData};

/// Unit-week rows for one spell on the gap-time scale.
pub fn spell_rows(spell: usize, cluster: usize, stratum: usize, len: u32, event: bool, x: &[f64]) -> Vec<RiskRow> {
    (0..len)
        .map(|k| RiskRow {
            spell,
            cluster,
            stratum,
            start: k,
            stop: k + 1,
            event: event && k + 1 == len,
            week: k + 2,
            x: x.to_vec(),
        })
        .collect()
}

pub fn spell_data(rows: Vec<RiskRow>, p: usize) -> SpellData {
    let n_spells = rows.iter().map(|r| r.spell).max().map_or(0, |m| m + 1);
    let n_strata = rows.iter().map(|r| r.stratum).max().map_or(0, |m| m + 1);
    let n_clusters = rows.iter().map(|r| r.cluster).max().map_or(0, |m| m + 1);
    SpellData {
        covariates: (0..p).map(|i| format!("x{i}")).collect(),
        strata: (0..n_strata).map(|i| format!("s{i}")).collect(),
        clusters: (0..n_clusters).map(|i| format!("c{i}")).collect(),
        rows,
        n_spells,
    }
}

/// Random spells with normal covariates. With `distinct` every spell has a
/// different length, so no two events share a time.
pub fn random_spells(seed: u64, n_spells: usize, p: usize, distinct: bool) -> Vec<RiskRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lengths: Vec<u32> = if distinct {
        (1..=n_spells as u32).collect()
    } else {
        (0..n_spells).map(|_| rng.random_range(1..=6)).collect()
    };
    if distinct {
        for i in (1..lengths.len()).rev() {
            let j = rng.random_range(0..=i);
            lengths.swap(i, j);
        }
    }
    let mut rows = Vec::new();
    for (s, &len) in lengths.iter().enumerate() {
        let x: Vec<f64> = (0..p).map(|_| {
            let u: f64 = rng.random_range(-1.0..1.0);
            let v: f64 = rng.random_range(-1.0..1.0);
            u + v
        }).collect();
        let event = rng.random_bool(0.8);
        rows.extend(spell_rows(s, s, 0, len, event, &x));
    }
    rows
}

fn eta(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

/// Breslow partial log-likelihood straight from its definition.
pub fn breslow_loglik(rows: &[RiskRow], beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    let mut keys: Vec<(usize, u32)> = rows.iter().filter(|r| r.event).map(|r| (r.stratum, r.stop)).collect();
    keys.sort_unstable();
    keys.dedup();
    for (stratum, tau) in keys {
        let mut denom = 0.0;
        let mut d = 0.0;
        for r in rows.iter().filter(|r| r.stratum == stratum) {
            if r.start < tau && tau <= r.stop {
                denom += eta(&r.x, beta).exp();
            }
            if r.event && r.stop == tau {
                ll += eta(&r.x, beta);
                d += 1.0;
            }
        }
        ll -= d * denom.ln();
    }
    ll
}

/// Grid argmax of `f` over `[-bound, bound]^p`. The grid is swept at `step`
/// inside a window located by progressively finer sweeps, each of which is
/// exhaustive over its own window.
pub fn grid_argmax<F: Fn(&[f64]) -> f64>(f: F, p: usize, bound: f64, step: f64) -> Vec<f64> {
    let mut center = vec![0.0; p];
    let mut half = bound;
    let mut h = (bound / 20.0).max(step);
    loop {
        let n = (2.0 * half / h).round() as i64;
        let mut best = (f64::NEG_INFINITY, center.clone());
        let mut idx = vec![0i64; p];
        loop {
            let b: Vec<f64> = idx.iter().zip(&center).map(|(&k, &c)| c - half + k as f64 * h).collect();
            let v = f(&b);
            if v > best.0 {
                best = (v, b);
            }
            let mut d = 0;
            while d < p {
                idx[d] += 1;
                if idx[d] <= n {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == p {
                break;
            }
        }
        center = best.1;
        if h <= step {
            return center;
        }
        half = 3.0 * h;
        h = (h / 10.0).max(step);
    }
}

/// Lin–Wei robust covariance with one cluster per spell, built from
/// per-spell score residuals and an inverse information supplied by caller.
pub fn robust_from_spell_scores(rows: &[RiskRow], beta: &[f64], inv_info: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = beta.len();
    let n_spells = rows.iter().map(|r| r.spell).max().map_or(0, |m| m + 1);
    let mut u = vec![vec![0.0; p]; n_spells];
    let mut times: Vec<(usize, u32)> = rows.iter().filter(|r| r.event).map(|r| (r.stratum, r.stop)).collect();
    times.sort_unstable();
    times.dedup();
    for (stratum, tau) in times {
        let risk: Vec<&RiskRow> =
            rows.iter().filter(|r| r.stratum == stratum && r.start < tau && tau <= r.stop).collect();
        let s0: f64 = risk.iter().map(|r| eta(&r.x, beta).exp()).sum();
        let mean: Vec<f64> =
            (0..p).map(|k| risk.iter().map(|r| r.x[k] * eta(&r.x, beta).exp()).sum::<f64>() / s0).collect();
        let d = rows.iter().filter(|r| r.stratum == stratum && r.event && r.stop == tau).count() as f64;
        for r in rows.iter().filter(|r| r.stratum == stratum && r.event && r.stop == tau) {
            for k in 0..p {
                u[r.spell][k] += r.x[k] - mean[k];
            }
        }
        for r in &risk {
            let w = eta(&r.x, beta).exp() * d / s0;
            for k in 0..p {
                u[r.spell][k] -= w * (r.x[k] - mean[k]);
            }
        }
    }
    let mut meat = vec![vec![0.0; p]; p];
    for ui in &u {
        for a in 0..p {
            for b in 0..p {
                meat[a][b] += ui[a] * ui[b];
            }
        }
    }
    let mul = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..p).map(|i| (0..p).map(|j| (0..p).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
    };
    mul(&mul(inv_info, &meat), inv_info)
}
