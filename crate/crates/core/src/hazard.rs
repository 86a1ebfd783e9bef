//! Stratified Cox regression for recurrent price-change spells.
//!
//! Spells run on a gap-time scale: the clock restarts at every price change.
//! Each spell is split into unit-week risk rows so that calendar covariates
//! (January, Christmas week) can vary within a spell.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::HazardError;
use crate::filters::{FilterResult, SeriesKind};
use crate::panel::{Aisle, PricePanel, ProductSeries, Shelf, StoreFormat};

/// One `(start, stop]` interval of a spell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub spell: usize,
    pub cluster: usize,
    pub stratum: usize,
    pub start: u32,
    pub stop: u32,
    pub event: bool,
    /// Calendar panel week of the row's end.
    pub week: u32,
    pub x: Vec<f64>,
}

/// Risk rows with the names of their covariate columns, strata and clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpellData {
    pub covariates: Vec<String>,
    pub strata: Vec<String>,
    pub clusters: Vec<String>,
    pub rows: Vec<RiskRow>,
    pub n_spells: usize,
}

impl SpellData {
    pub fn n_events(&self) -> usize {
        self.rows.iter().filter(|r| r.event).count()
    }
}

pub const COVARIATES: [&str; 10] = [
    "edlp",
    "hyb",
    "price_level",
    "private_label",
    "january",
    "christmas",
    "aisle_middle",
    "aisle_front",
    "shelf_eye_level",
    "shelf_top",
];

/// Splits every product's `kind` series into gap-time spells of unit-week
/// risk rows. Masked weeks break spells: the open spell is censored and a
/// new one starts after the gap. Strata are categories and clusters are
/// (store, product) pairs.
pub fn build_spells(panel: &PricePanel, results: &[FilterResult], kind: SeriesKind) -> SpellData {
    let by_key: HashMap<_, _> = panel.products.iter().map(|p| (&p.key, p)).collect();
    let mut strata: BTreeMap<String, usize> = BTreeMap::new();
    for r in results {
        let next = strata.len();
        strata.entry(r.category.clone()).or_insert(next);
    }
    // Stable stratum numbering in name order.
    let names: Vec<String> = strata.keys().cloned().collect();
    let strata: BTreeMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();

    let mut rows = Vec::new();
    let mut clusters = Vec::with_capacity(results.len());
    let mut n_spells = 0usize;
    for (cluster, r) in results.iter().enumerate() {
        clusters.push(r.key.to_string());
        let series = by_key.get(&r.key).copied();
        let fixed = series.map(|s| covariate_block(panel, s)).unwrap_or([0.0; 8]);
        let stratum = strata[&r.category];
        let prices = r.series(kind);
        let mut anchor: Option<usize> = None;
        let mut spell: Option<usize> = None;
        for t in 1..prices.len() {
            if r.mask[t - 1] || r.mask[t] {
                anchor = None;
                spell = None;
                continue;
            }
            let a = *anchor.get_or_insert(t - 1);
            let id = *spell.get_or_insert_with(|| {
                n_spells += 1;
                n_spells - 1
            });
            let week = r.first_week + t as u32;
            let event = prices[t] != prices[t - 1];
            let mut x = Vec::with_capacity(COVARIATES.len());
            x.extend_from_slice(&fixed[..4]);
            x.push(if panel.is_january(week) { 1.0 } else { 0.0 });
            x.push(if panel.is_christmas_week(week) { 1.0 } else { 0.0 });
            x.extend_from_slice(&fixed[4..]);
            rows.push(RiskRow {
                spell: id,
                cluster,
                stratum,
                start: (t - 1 - a) as u32,
                stop: (t - a) as u32,
                event,
                week,
                x,
            });
            if event {
                anchor = Some(t);
                spell = None;
            }
        }
    }
    SpellData {
        covariates: COVARIATES.iter().map(|s| s.to_string()).collect(),
        strata: names,
        clusters,
        rows,
        n_spells,
    }
}

/// Product-level covariates in [`COVARIATES`] order, minus the two calendar
/// dummies.
fn covariate_block(panel: &PricePanel, series: &ProductSeries) -> [f64; 8] {
    let format = panel.store_format(&series.key.store);
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    [
        b(format == Some(StoreFormat::Edlp)),
        b(format == Some(StoreFormat::Hybrid)),
        series.mean_transaction(),
        b(series.private_label),
        b(series.aisle == Aisle::Middle),
        b(series.aisle == Aisle::Front),
        b(series.shelf == Shelf::EyeLevel),
        b(series.shelf == Shelf::Top),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    #[default]
    Breslow,
    Efron,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub ties: Ties,
    /// Convergence threshold on the max-norm of the score.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Any |beta| beyond this declares a monotone likelihood.
    pub divergence_bound: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self { ties: Ties::Breslow, tolerance: 1e-8, max_iter: 50, divergence_bound: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub hazard_ratios: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub robust_covariance: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    pub robust_se: Vec<f64>,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    /// Likelihood-ratio statistic against all coefficients zero.
    pub global_chi2: f64,
    pub global_p: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostic: Option<String>,
    pub dropped: Vec<String>,
    pub n_events: usize,
    pub n_spells: usize,
    pub n_rows: usize,
    pub n_clusters: usize,
}

/// Risk set at one event time within a stratum.
struct EventTime {
    at_risk: Vec<usize>,
    events: Vec<usize>,
}

struct Design {
    x: Vec<Vec<f64>>,
    times: Vec<EventTime>,
    p: usize,
}

/// Log partial likelihood, score and information at `beta`.
pub struct Evaluation {
    pub log_likelihood: f64,
    pub score: DVector<f64>,
    pub information: DMatrix<f64>,
}

impl Design {
    fn new(rows: &[RiskRow], columns: &[usize]) -> Result<Self, HazardError> {
        let mut by_stratum: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            if r.start >= r.stop {
                return Err(HazardError::InvalidRow(format!("row {i}: start {} >= stop {}", r.start, r.stop)));
            }
            by_stratum.entry(r.stratum).or_default().push(i);
        }
        let mut times = Vec::new();
        for idx in by_stratum.values() {
            let mut event_stops: Vec<u32> = idx.iter().filter(|&&i| rows[i].event).map(|&i| rows[i].stop).collect();
            event_stops.sort_unstable();
            event_stops.dedup();
            for tau in event_stops {
                let at_risk: Vec<usize> =
                    idx.iter().copied().filter(|&i| rows[i].start < tau && tau <= rows[i].stop).collect();
                let events: Vec<usize> = idx.iter().copied().filter(|&i| rows[i].event && rows[i].stop == tau).collect();
                times.push(EventTime { at_risk, events });
            }
        }
        let x = rows.iter().map(|r| columns.iter().map(|&c| r.x[c]).collect()).collect();
        Ok(Self { x, times, p: columns.len() })
    }

    fn eta(&self, beta: &[f64]) -> Vec<f64> {
        let eta: Vec<f64> = self.x.iter().map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = if shift.is_finite() { shift } else { 0.0 };
        eta.into_iter().map(|e| e - shift).collect()
    }

    fn evaluate(&self, beta: &[f64], ties: Ties) -> Evaluation {
        let p = self.p;
        let eta = self.eta(beta);
        let w: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let mut ll = 0.0;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for et in &self.times {
            let (mut s0, mut s1, mut s2) = (0.0, DVector::zeros(p), DMatrix::zeros(p, p));
            for &i in &et.at_risk {
                let xi = DVector::from_column_slice(&self.x[i]);
                s0 += w[i];
                s1 += &xi * w[i];
                s2 += &xi * xi.transpose() * w[i];
            }
            let d = et.events.len() as f64;
            for &i in &et.events {
                ll += eta[i];
                score += DVector::from_column_slice(&self.x[i]);
            }
            match ties {
                Ties::Breslow => {
                    let mean = &s1 / s0;
                    ll -= d * s0.ln();
                    score -= &mean * d;
                    info += (&s2 / s0 - &mean * mean.transpose()) * d;
                }
                Ties::Efron => {
                    let (mut e0, mut e1, mut e2) = (0.0, DVector::zeros(p), DMatrix::zeros(p, p));
                    for &i in &et.events {
                        let xi = DVector::from_column_slice(&self.x[i]);
                        e0 += w[i];
                        e1 += &xi * w[i];
                        e2 += &xi * xi.transpose() * w[i];
                    }
                    for l in 0..et.events.len() {
                        let frac = l as f64 / d;
                        let a0 = s0 - frac * e0;
                        let a1 = &s1 - &e1 * frac;
                        let a2 = &s2 - &e2 * frac;
                        let mean = &a1 / a0;
                        ll -= a0.ln();
                        score -= &mean;
                        info += &a2 / a0 - &mean * mean.transpose();
                    }
                }
            }
        }
        Evaluation { log_likelihood: ll, score, information: info }
    }

    /// Per-row score residuals (Breslow form).
    fn score_residuals(&self, beta: &[f64], n_rows: usize) -> Vec<DVector<f64>> {
        let p = self.p;
        let eta = self.eta(beta);
        let w: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let mut resid = vec![DVector::zeros(p); n_rows];
        for et in &self.times {
            let mut s0 = 0.0;
            let mut s1 = DVector::zeros(p);
            for &i in &et.at_risk {
                s0 += w[i];
                s1 += DVector::from_column_slice(&self.x[i]) * w[i];
            }
            let mean = s1 / s0;
            let d = et.events.len() as f64;
            for &i in &et.events {
                resid[i] += DVector::from_column_slice(&self.x[i]) - &mean;
            }
            for &i in &et.at_risk {
                resid[i] -= (DVector::from_column_slice(&self.x[i]) - &mean) * (w[i] * d / s0);
            }
        }
        resid
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Partial log-likelihood, score and information at `beta` for all columns.
pub fn partial_likelihood(rows: &[RiskRow], beta: &[f64], ties: Ties) -> Result<Evaluation, HazardError> {
    let p = rows.first().map(|r| r.x.len()).unwrap_or(0);
    let design = Design::new(rows, &(0..p).collect::<Vec<_>>())?;
    Ok(design.evaluate(beta, ties))
}

/// Relative likelihood change treated as rounding noise by the line search.
pub const LIKELIHOOD_SLACK: f64 = 1e-12;

/// Maximizes the stratified partial likelihood by Newton–Raphson with step
/// halving. Covariates constant across all rows are dropped.
pub fn fit_cox(data: &SpellData, options: &CoxOptions) -> Result<CoxFit, HazardError> {
    let rows = &data.rows;
    let n_events = data.n_events();
    if n_events == 0 {
        return Err(HazardError::NoEvents);
    }
    let total_p = data.covariates.len();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for c in 0..total_p {
        let first = rows[0].x[c];
        if rows.iter().all(|r| r.x[c] == first) {
            log::warn!("covariate `{}` has no variation; dropped", data.covariates[c]);
            dropped.push(data.covariates[c].clone());
        } else {
            keep.push(c);
        }
    }
    if keep.is_empty() {
        return Err(HazardError::NoCovariates);
    }
    let design = Design::new(rows, &keep)?;
    let p = keep.len();

    let mut beta = vec![0.0; p];
    let null = design.evaluate(&beta, options.ties);
    let mut current = design.evaluate(&beta, options.ties);
    let mut converged = false;
    let mut diagnostic = None;
    let mut iterations = 0;
    while iterations < options.max_iter {
        if current.score.amax() < options.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let chol = current.information.clone().cholesky().ok_or(HazardError::Singular)?;
        let step = chol.solve(&current.score);
        let mut scale = 1.0;
        // Near the optimum the gain drops below the rounding of the likelihood.
        let floor = current.log_likelihood - LIKELIHOOD_SLACK * (1.0 + current.log_likelihood.abs());
        let accepted = loop {
            let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let next = design.evaluate(&candidate, options.ties);
            if next.log_likelihood >= floor {
                break Some((candidate, next));
            }
            scale *= 0.5;
            if scale < 1e-10 {
                break None;
            }
        };
        let Some((candidate, next)) = accepted else {
            if current.score.amax() >= options.tolerance {
                diagnostic = Some("line search stalled before the score vanished".to_string());
            }
            break;
        };
        beta = candidate;
        current = next;
        if beta.iter().any(|b| b.abs() > options.divergence_bound) {
            diagnostic = Some(format!(
                "monotone likelihood: coefficient exceeded {} in magnitude",
                options.divergence_bound
            ));
            break;
        }
    }
    if !converged && diagnostic.is_none() {
        if current.score.amax() < options.tolerance {
            converged = true;
        } else {
            diagnostic = Some(format!("no convergence after {} iterations", options.max_iter));
        }
    }

    let cov = current.information.clone().try_inverse().ok_or(HazardError::Singular)?;
    let resid = design.score_residuals(&beta, rows.len());
    let n_clusters = rows.iter().map(|r| r.cluster).max().map_or(0, |m| m + 1);
    let mut per_cluster = vec![DVector::<f64>::zeros(p); n_clusters];
    for (r, u) in rows.iter().zip(&resid) {
        per_cluster[r.cluster] += u;
    }
    let mut meat = DMatrix::zeros(p, p);
    for u in per_cluster.iter().filter(|u| u.amax() > 0.0) {
        meat += u * u.transpose();
    }
    let robust = &cov * meat * &cov;
    let robust = (&robust + robust.transpose()) * 0.5;

    let se: Vec<f64> = (0..p).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    let robust_se: Vec<f64> = (0..p).map(|i| robust[(i, i)].max(0.0).sqrt()).collect();
    let global_chi2 = 2.0 * (current.log_likelihood - null.log_likelihood);
    let global_p = ChiSquared::new(p as f64).map(|d| d.sf(global_chi2.max(0.0))).unwrap_or(f64::NAN);
    let used: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.cluster).collect();
    Ok(CoxFit {
        names: keep.iter().map(|&c| data.covariates[c].clone()).collect(),
        hazard_ratios: beta.iter().map(|b| b.exp()).collect(),
        coefficients: beta,
        covariance: to_rows(&cov),
        robust_covariance: to_rows(&robust),
        se,
        robust_se,
        log_likelihood: current.log_likelihood,
        null_log_likelihood: null.log_likelihood,
        global_chi2,
        global_p,
        iterations,
        converged,
        diagnostic,
        dropped,
        n_events,
        n_spells: data.n_spells,
        n_rows: rows.len(),
        n_clusters: used.len(),
    })
}

impl CoxFit {
    /// Delta-method standard error of a hazard ratio from the robust SE.
    pub fn hazard_ratio_se(&self, i: usize) -> f64 {
        self.hazard_ratios[i] * self.robust_se[i]
    }

    pub fn robust_p(&self, i: usize) -> f64 {
        crate::inference::normal_two_sided(self.coefficients[i] / self.robust_se[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rows for a spell of `len` weeks ending in an event (or censoring).
    pub(crate) fn spell(id: usize, stratum: usize, len: u32, event: bool, x: &[f64]) -> Vec<RiskRow> {
        (0..len)
            .map(|k| RiskRow {
                spell: id,
                cluster: id,
                stratum,
                start: k,
                stop: k + 1,
                event: event && k + 1 == len,
                week: k + 2,
                x: x.to_vec(),
            })
            .collect()
    }

    fn data(rows: Vec<RiskRow>, names: &[&str]) -> SpellData {
        let n_spells = rows.iter().map(|r| r.spell).max().map_or(0, |m| m + 1);
        SpellData {
            covariates: names.iter().map(|s| s.to_string()).collect(),
            strata: vec!["s".into()],
            clusters: (0..n_spells).map(|i| i.to_string()).collect(),
            rows,
            n_spells,
        }
    }

    #[test]
    fn three_spell_closed_form() {
        let mut rows = spell(0, 0, 1, true, &[1.0]);
        rows.extend(spell(1, 0, 2, true, &[0.0]));
        rows.extend(spell(2, 0, 3, true, &[1.0]));
        let fit = fit_cox(&data(rows, &["x"]), &CoxOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] + 0.5 * 2f64.ln()).abs() < 1e-9);
        assert!((fit.hazard_ratios[0] - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn constant_covariate_dropped() {
        let mut rows = spell(0, 0, 1, true, &[1.0, 5.0]);
        rows.extend(spell(1, 0, 2, true, &[0.0, 5.0]));
        rows.extend(spell(2, 0, 3, true, &[1.0, 5.0]));
        let fit = fit_cox(&data(rows, &["x", "c"]), &CoxOptions::default()).unwrap();
        assert_eq!(fit.dropped, vec!["c".to_string()]);
        assert_eq!(fit.names, vec!["x".to_string()]);
        assert!((fit.coefficients[0] + 0.5 * 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn separation_is_flagged() {
        // x = 1 always fails first: the likelihood increases without bound.
        let mut rows = Vec::new();
        for i in 0..4 {
            rows.extend(spell(2 * i, 0, 1, true, &[1.0]));
            rows.extend(spell(2 * i + 1, 0, 3, true, &[0.0]));
        }
        let fit = fit_cox(&data(rows, &["x"]), &CoxOptions::default()).unwrap();
        assert!(!fit.converged);
        assert!(fit.diagnostic.unwrap().contains("monotone"));
    }

    #[test]
    fn no_events_is_an_error() {
        let rows = spell(0, 0, 5, false, &[1.0]);
        assert_eq!(fit_cox(&data(rows, &["x"]), &CoxOptions::default()), Err(HazardError::NoEvents));
    }

    #[test]
    fn collinear_columns_are_singular() {
        let mut rows = spell(0, 0, 1, true, &[1.0, 2.0]);
        rows.extend(spell(1, 0, 2, true, &[0.0, 0.0]));
        rows.extend(spell(2, 0, 3, true, &[1.0, 2.0]));
        assert_eq!(fit_cox(&data(rows, &["a", "b"]), &CoxOptions::default()), Err(HazardError::Singular));
    }

    #[test]
    fn efron_equals_breslow_without_ties() {
        let mut rows = spell(0, 0, 1, true, &[1.0]);
        rows.extend(spell(1, 0, 2, true, &[0.0]));
        rows.extend(spell(2, 0, 3, true, &[1.0]));
        rows.extend(spell(3, 0, 4, false, &[0.0]));
        let d = data(rows, &["x"]);
        let b = fit_cox(&d, &CoxOptions::default()).unwrap();
        let e = fit_cox(&d, &CoxOptions { ties: Ties::Efron, ..Default::default() }).unwrap();
        assert!((b.coefficients[0] - e.coefficients[0]).abs() < 1e-10);
    }

    #[test]
    fn efron_tied_likelihood_by_hand() {
        // Two tied events at t=1 among three at risk, x = (1, 0, 0).
        let mut rows = spell(0, 0, 1, true, &[1.0]);
        rows.extend(spell(1, 0, 1, true, &[0.0]));
        rows.extend(spell(2, 0, 2, false, &[0.0]));
        let b: f64 = 0.3;
        let e = b.exp();
        let by_hand = b - (e + 2.0).ln() - (0.5 * e + 1.5).ln();
        let ev = partial_likelihood(&rows, &[b], Ties::Efron).unwrap();
        assert!((ev.log_likelihood - by_hand).abs() < 1e-12);
        let breslow = b - 2.0 * (e + 2.0).ln();
        let ev = partial_likelihood(&rows, &[b], Ties::Breslow).unwrap();
        assert!((ev.log_likelihood - breslow).abs() < 1e-12);
    }
}
