//! Pipeline orchestration and the report bundle.
//!
//! `run_pipeline` takes a [`Config`], loads or simulates a panel, runs every
//! analysis stage and returns a [`ReportBundle`]. `write_bundle` renders the
//! bundle as aligned text and CSV tables, each stamped with the input digest
//! and seed. Output bytes depend only on the inputs, the config and the seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, PanelError, Result, StatsError};
use crate::filters::{apply_endpoint_policy, filter_product, BaselineKind, EndpointPolicy, FilterParams, FilterResult, SeriesKind};
use crate::hazard::{build_spells, fit_cox, CoxFit, CoxOptions, Ties};
use crate::inference::{chi2_proportions, fk_index, stars, wilcoxon_rank_sum};
use crate::magnitude::{
    bootstrap_ci, responsiveness, standardize, standardized_kurtosis, sufficient_statistic, z_histogram,
    ConfidenceInterval, FrequencyAnchor, MagnitudeOptions, ProductChanges,
};
use crate::panel::{
    load_panel, price_ending_histogram_by_store, write_panel, ColumnMapping, LoadOptions, PricePanel, StoreFormat,
};
use crate::rigidity::{change_indicators, rigidity_table, ChangeCount, Grouping, RigidityRow};
use crate::simgen::{simulate_panel, SimConfig};
use crate::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    pub delimiter: String,
    pub minor_units: bool,
    pub fill_missing: bool,
    pub start_date: Option<NaiveDate>,
    /// Canonical column name to source column name.
    pub columns: BTreeMap<String, String>,
    /// Store id to format, for panels without a `format` column.
    pub formats: BTreeMap<String, StoreFormat>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: None,
            delimiter: ",".into(),
            minor_units: false,
            fill_missing: false,
            start_date: None,
            columns: BTreeMap::new(),
            formats: BTreeMap::new(),
        }
    }
}

impl InputConfig {
    pub fn load_options(&self) -> Result<LoadOptions> {
        let delimiter = match self.delimiter.as_str() {
            "tab" | "\\t" | "\t" => b'\t',
            d if d.len() == 1 => d.as_bytes()[0],
            d => return Err(Error::Config(format!("delimiter must be one byte, got `{d}`"))),
        };
        let mut opts = LoadOptions {
            delimiter,
            minor_units: self.minor_units,
            fill_missing: self.fill_missing,
            columns: ColumnMapping { renames: self.columns.clone() },
            store_formats: self.formats.clone(),
            ..Default::default()
        };
        if let Some(d) = self.start_date {
            opts.start_date = d;
        }
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub preset: String,
    pub n_weeks: Option<usize>,
    pub oracle: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { preset: "canadian".into(), n_weeks: None, oracle: false }
    }
}

impl SimulateConfig {
    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::named(&self.preset)?;
        if let Some(w) = self.n_weeks {
            cfg.n_weeks = w;
        }
        cfg.oracle = self.oracle;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// `none`, `conditional` or `trim`.
    pub policy: String,
    pub margin: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self { policy: "none".into(), margin: 6 }
    }
}

impl EndpointConfig {
    pub fn policy(&self) -> Result<EndpointPolicy> {
        Ok(EndpointPolicy::from_name(&self.policy, self.margin)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagnitudeConfig {
    pub anchor: FrequencyAnchor,
    pub sample_variance: bool,
    pub sample_sd: bool,
    pub bootstrap_replicates: usize,
}

impl Default for MagnitudeConfig {
    fn default() -> Self {
        let m = MagnitudeOptions::default();
        Self { anchor: m.anchor, sample_variance: m.sample_variance, sample_sd: m.sample_sd, bootstrap_replicates: 1000 }
    }
}

impl MagnitudeConfig {
    pub fn options(&self) -> MagnitudeOptions {
        MagnitudeOptions { anchor: self.anchor, sample_variance: self.sample_variance, sample_sd: self.sample_sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazardConfig {
    pub ties: Ties,
    pub kinds: Vec<SeriesKind>,
}

impl Default for HazardConfig {
    fn default() -> Self {
        Self { ties: Ties::Breslow, kinds: vec![SeriesKind::Transaction, SeriesKind::PostedRegular] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Worker threads; 0 or absent uses all cores.
    pub workers: Option<usize>,
}

/// Full run configuration. Every CLI flag mirrors one of these keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub input: InputConfig,
    pub simulate: Option<SimulateConfig>,
    pub filters: FilterParams,
    pub endpoint: EndpointConfig,
    pub magnitude: MagnitudeConfig,
    pub hazard: HazardConfig,
    pub output: OutputConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The configuration as echoed into the bundle: everything that can
    /// affect results, without output location or worker count.
    pub fn echo(&self) -> Config {
        Config { output: OutputConfig::default(), ..self.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads the configured panel, or simulates it, and returns it with the
/// sha256 of its source bytes (the canonical CSV for simulated panels).
pub fn acquire_panel(config: &Config) -> Result<(PricePanel, String)> {
    if let Some(sim) = &config.simulate {
        let (panel, _) = simulate_panel(&sim.sim_config()?, config.seed)?;
        let mut buf = Vec::new();
        write_panel(&panel, &mut buf)?;
        return Ok((panel, sha256_hex(&buf)));
    }
    let path = config
        .input
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("no input path and no simulate block".into()))?;
    let bytes = fs::read(path).map_err(|e| PanelError::Io(format!("{}: {e}", path.display())))?;
    let panel = load_panel(bytes.as_slice(), &config.input.load_options()?)?;
    Ok((panel, sha256_hex(&bytes)))
}

/// Filters every product and applies the endpoint policy.
pub fn filter_panel(panel: &PricePanel, params: &FilterParams, policy: EndpointPolicy) -> Result<Vec<FilterResult>> {
    params.validate()?;
    if panel.is_empty() {
        return Err(PanelError::Empty.into());
    }
    let results: std::result::Result<Vec<_>, _> = panel
        .products
        .par_iter()
        .map(|p| filter_product(p, params).and_then(|r| apply_endpoint_policy(r, policy)))
        .collect();
    Ok(results?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCountRow {
    pub store: String,
    pub baseline: BaselineKind,
    pub n_products: usize,
    pub n_weeks: usize,
    pub n_events: usize,
    pub mean_length: Option<f64>,
    /// Mean log depth of the cut below the baseline.
    pub mean_depth: Option<f64>,
}

/// One cell of a pairwise test matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub label: String,
    pub store_a: String,
    pub store_b: String,
    pub c_a: u64,
    pub n_a: u64,
    pub c_b: u64,
    pub n_b: u64,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTest {
    pub store_a: String,
    pub store_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub w: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxTable {
    pub kind: SeriesKind,
    pub fit: CoxFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeRow {
    pub store: String,
    pub kind: SeriesKind,
    pub statistic: String,
    pub n_products: usize,
    pub n_changes: usize,
    pub interval: Option<ConfidenceInterval>,
    /// Why the statistic is undefined for this group.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncRow {
    pub kind: SeriesKind,
    pub product: String,
    pub n_stores: usize,
    pub n_weeks: usize,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub group: String,
    pub low: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndingShare {
    pub store: String,
    pub digits: u32,
    pub ending: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub config: Config,
    pub input_sha256: String,
    pub seed: u64,
    pub n_observations: usize,
    pub n_products: usize,
    pub stores: BTreeMap<String, Option<StoreFormat>>,
    pub rigidity_store: Vec<RigidityRow>,
    pub rigidity_store_category: Vec<RigidityRow>,
    pub rigidity_panel: Vec<RigidityRow>,
    pub sale_events: Vec<EventCountRow>,
    pub event_tests: Vec<PairTest>,
    pub price_tests: Vec<RankTest>,
    pub frequency_tests: Vec<PairTest>,
    pub cox: Vec<CoxTable>,
    pub magnitude: Vec<MagnitudeRow>,
    pub z_histogram: Vec<HistogramBin>,
    pub sync: Vec<SyncRow>,
    pub sync_histogram: Vec<HistogramBin>,
    pub price_endings: Vec<EndingShare>,
}

fn store_pairs(stores: &[String]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..stores.len() {
        for j in i + 1..stores.len() {
            out.push((i, j));
        }
    }
    out
}

fn sale_event_table(results: &[FilterResult], stores: &[String]) -> Vec<EventCountRow> {
    let mut rows = Vec::new();
    for store in stores {
        let members: Vec<&FilterResult> = results.iter().filter(|r| &r.key.store == store).collect();
        let n_weeks = members.iter().map(|r| r.len()).sum();
        for baseline in BaselineKind::ALL {
            let mut n = 0usize;
            let mut len_sum = 0u64;
            let mut depth_sum = 0.0;
            for r in &members {
                let base = r.baseline(baseline);
                for e in r.sale_events(baseline) {
                    n += 1;
                    len_sum += e.len() as u64;
                    let t = (e.start_week - r.first_week) as usize;
                    depth_sum += (base[t].0 as f64 / r.transaction[t].0 as f64).ln();
                }
            }
            rows.push(EventCountRow {
                store: store.clone(),
                baseline,
                n_products: members.len(),
                n_weeks,
                n_events: n,
                mean_length: (n > 0).then(|| len_sum as f64 / n as f64),
                mean_depth: (n > 0).then(|| depth_sum / n as f64),
            });
        }
    }
    rows
}

fn event_tests(events: &[EventCountRow], stores: &[String]) -> Result<Vec<PairTest>> {
    let mut out = Vec::new();
    for baseline in BaselineKind::ALL {
        let row = |s: &String| events.iter().find(|e| &e.store == s && e.baseline == baseline).expect("row per store");
        for (i, j) in store_pairs(stores) {
            let (a, b) = (row(&stores[i]), row(&stores[j]));
            let t = chi2_proportions(a.n_events as u64, a.n_weeks as u64, b.n_events as u64, b.n_weeks as u64)?;
            out.push(PairTest {
                label: baseline.as_str().into(),
                store_a: a.store.clone(),
                store_b: b.store.clone(),
                c_a: t.c1,
                n_a: t.n1,
                c_b: t.c2,
                n_b: t.n2,
                statistic: t.chi2,
                p_value: t.p_value,
            });
        }
    }
    Ok(out)
}

fn frequency_tests(results: &[FilterResult], stores: &[String]) -> Result<Vec<PairTest>> {
    let mut out = Vec::new();
    for kind in SeriesKind::ALL {
        let totals: Vec<ChangeCount> = stores
            .iter()
            .map(|s| results.iter().filter(|r| &r.key.store == s).map(|r| ChangeCount::of(r.series(kind), &r.mask)).sum())
            .collect();
        for (i, j) in store_pairs(stores) {
            let (a, b) = (totals[i], totals[j]);
            let t = chi2_proportions(a.changes as u64, a.transitions as u64, b.changes as u64, b.transitions as u64)?;
            out.push(PairTest {
                label: kind.as_str().into(),
                store_a: stores[i].clone(),
                store_b: stores[j].clone(),
                c_a: t.c1,
                n_a: t.n1,
                c_b: t.c2,
                n_b: t.n2,
                statistic: t.chi2,
                p_value: t.p_value,
            });
        }
    }
    Ok(out)
}

fn price_tests(panel: &PricePanel, stores: &[String]) -> Result<Vec<RankTest>> {
    let means: Vec<Vec<f64>> =
        stores.iter().map(|s| panel.products_in_store(s).map(|p| p.mean_transaction()).collect()).collect();
    let mut out = Vec::new();
    for (i, j) in store_pairs(stores) {
        let r = wilcoxon_rank_sum(&means[i], &means[j])?;
        out.push(RankTest {
            store_a: stores[i].clone(),
            store_b: stores[j].clone(),
            n_a: means[i].len(),
            n_b: means[j].len(),
            w: r.w,
            z: r.z,
            p_value: r.p_value,
        });
    }
    Ok(out)
}

const MAGNITUDE_STATISTICS: [&str; 3] = ["responsiveness", "standardized_kurtosis", "sufficient_statistic"];

fn magnitude_rows(results: &[FilterResult], stores: &[String], cfg: &MagnitudeConfig, seed: u64) -> Result<Vec<MagnitudeRow>> {
    let opts = cfg.options();
    let mut out = Vec::new();
    for (si, store) in stores.iter().enumerate() {
        for (ki, kind) in SeriesKind::ALL.into_iter().enumerate() {
            let products: Vec<ProductChanges> = results
                .iter()
                .filter(|r| &r.key.store == store)
                .map(|r| ProductChanges::from_result(r, kind))
                .collect();
            let refs: Vec<&ProductChanges> = products.iter().collect();
            let n_changes = products.iter().map(|p| p.dp.len()).sum();
            for (mi, name) in MAGNITUDE_STATISTICS.into_iter().enumerate() {
                let stat = |ps: &[&ProductChanges]| -> std::result::Result<f64, StatsError> {
                    match mi {
                        0 => responsiveness(ps, &opts),
                        1 => standardized_kurtosis(ps, opts.sample_sd),
                        _ => sufficient_statistic(ps, &opts),
                    }
                };
                let stream = substream(seed, &[2, si as u64, ki as u64, mi as u64]);
                let (interval, note) = match bootstrap_ci(&refs, stat, cfg.bootstrap_replicates, stream) {
                    Ok(ci) => (Some(ci), None),
                    Err(e @ StatsError::BootstrapUndefined { .. }) => return Err(e.into()),
                    Err(e) => (None, Some(e.to_string())),
                };
                out.push(MagnitudeRow {
                    store: store.clone(),
                    kind,
                    statistic: name.into(),
                    n_products: products.len(),
                    n_changes,
                    interval,
                    note,
                });
            }
        }
    }
    Ok(out)
}

/// Standardized transaction changes pooled over the panel, binned at 0.25 on
/// [-6, 6).
fn z_bins(results: &[FilterResult], sample_sd: bool) -> Vec<HistogramBin> {
    let mut out = Vec::new();
    for kind in [SeriesKind::Transaction, SeriesKind::PostedRegular] {
        let labelled: Vec<((String, String), f64)> = results
            .iter()
            .flat_map(|r| {
                let key = (r.category.clone(), r.key.store.clone());
                ProductChanges::from_result(r, kind).dp.into_iter().map(move |d| (key.clone(), d))
            })
            .collect();
        let z: Vec<f64> = standardize(&labelled, sample_sd).values.into_iter().map(|(_, v)| v).collect();
        out.extend(z_histogram(&z, -6.0, 6.0, 0.25).into_iter().map(|(low, count)| HistogramBin {
            group: kind.as_str().into(),
            low,
            count,
        }));
    }
    out
}

/// Synchronization across stores for every product carried by at least two
/// stores, on the weeks all of them cover.
fn sync_rows(results: &[FilterResult]) -> Result<Vec<SyncRow>> {
    let mut by_product: BTreeMap<&str, Vec<&FilterResult>> = BTreeMap::new();
    for r in results {
        by_product.entry(r.key.product.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for kind in [SeriesKind::Transaction, SeriesKind::PostedRegular, SeriesKind::Reference] {
        for (product, members) in &by_product {
            if members.len() < 2 {
                continue;
            }
            let first = members.iter().map(|r| r.first_week).max().expect("nonempty");
            let last = members.iter().map(|r| r.first_week as usize + r.len()).min().expect("nonempty");
            if last <= first as usize + 2 {
                continue;
            }
            let rows: Vec<Vec<Option<bool>>> = members
                .iter()
                .map(|r| {
                    let a = (first - r.first_week) as usize;
                    let b = last - r.first_week as usize;
                    change_indicators(&r.series(kind)[a..b], &r.mask[a..b])
                })
                .collect();
            // Keep transitions observed in every store.
            let n_trans = rows[0].len();
            let keep: Vec<usize> = (0..n_trans).filter(|&t| rows.iter().all(|r| r[t].is_some())).collect();
            if keep.len() < 2 {
                continue;
            }
            let matrix: Vec<Vec<bool>> =
                rows.iter().map(|r| keep.iter().map(|&t| r[t].unwrap_or(false)).collect()).collect();
            out.push(SyncRow {
                kind,
                product: product.to_string(),
                n_stores: members.len(),
                n_weeks: keep.len(),
                value: fk_index(&matrix)?,
            });
        }
    }
    Ok(out)
}

fn sync_bins(rows: &[SyncRow]) -> Vec<HistogramBin> {
    let mut out = Vec::new();
    for kind in [SeriesKind::Transaction, SeriesKind::PostedRegular, SeriesKind::Reference] {
        let mut counts = [0usize; 10];
        for v in rows.iter().filter(|r| r.kind == kind).filter_map(|r| r.value) {
            counts[((v * 10.0).floor() as usize).min(9)] += 1;
        }
        out.extend(counts.iter().enumerate().map(|(i, &c)| HistogramBin {
            group: kind.as_str().into(),
            low: i as f64 / 10.0,
            count: c,
        }));
    }
    out
}

/// Runs every stage on an already acquired panel.
pub fn analyze_panel(panel: &PricePanel, input_sha256: String, config: &Config) -> Result<ReportBundle> {
    if panel.is_empty() {
        return Err(PanelError::Empty.into());
    }
    let policy = config.endpoint.policy()?;
    let results = filter_panel(panel, &config.filters, policy)?;
    let stores: Vec<String> = panel.stores.keys().cloned().collect();

    let rigidity_store = rigidity_table(&results, Grouping::Store, &SeriesKind::ALL)?;
    let rigidity_store_category = rigidity_table(&results, Grouping::StoreCategory, &SeriesKind::ALL)?;
    let rigidity_panel = rigidity_table(&results, Grouping::Panel, &SeriesKind::ALL)?;

    let sale_events = sale_event_table(&results, &stores);
    let (event_tests, price_tests, frequency_tests) = if stores.len() >= 2 {
        (event_tests(&sale_events, &stores)?, price_tests(panel, &stores)?, frequency_tests(&results, &stores)?)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };

    let cox_opts = CoxOptions { ties: config.hazard.ties, ..Default::default() };
    let mut cox = Vec::new();
    for &kind in &config.hazard.kinds {
        let data = build_spells(panel, &results, kind);
        cox.push(CoxTable { kind, fit: fit_cox(&data, &cox_opts)? });
    }

    let magnitude = magnitude_rows(&results, &stores, &config.magnitude, config.seed)?;
    let z_histogram = z_bins(&results, config.magnitude.sample_sd);
    let sync = sync_rows(&results)?;
    let sync_histogram = sync_bins(&sync);

    let mut price_endings = Vec::new();
    for digits in [1, 2] {
        for (store, shares) in price_ending_histogram_by_store(panel, digits)? {
            for (ending, share) in shares {
                price_endings.push(EndingShare { store: store.clone(), digits, ending, share });
            }
        }
    }

    Ok(ReportBundle {
        config: config.echo(),
        input_sha256,
        seed: config.seed,
        n_observations: panel.n_observations(),
        n_products: panel.products.len(),
        stores: panel.stores.iter().map(|(s, i)| (s.clone(), i.format)).collect(),
        rigidity_store,
        rigidity_store_category,
        rigidity_panel,
        sale_events,
        event_tests,
        price_tests,
        frequency_tests,
        cox,
        magnitude,
        z_histogram,
        sync,
        sync_histogram,
        price_endings,
    })
}

/// Acquires the panel and runs every stage.
pub fn run_pipeline(config: &Config) -> Result<ReportBundle> {
    let (panel, digest) = acquire_panel(config)?;
    analyze_panel(&panel, digest, config)
}

/// A rendered table: column names and formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, title: &str, header: &[&str]) -> Self {
        Table { name: name.into(), title: title.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self, stamp: &str) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
        format!("# {stamp}\n{body}")
    }

    pub fn to_text(&self, stamp: &str) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = String::new();
        let _ = writeln!(s, "# {stamp}");
        let _ = writeln!(s, "{}", self.title);
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(s, "{}", line(&self.header));
        let _ = writeln!(s, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for r in &self.rows {
            let _ = writeln!(s, "{}", line(r));
        }
        s
    }
}

fn f(v: f64, dp: usize) -> String {
    if v.is_infinite() {
        "inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.dp$}")
    }
}

fn opt(v: Option<f64>, dp: usize) -> String {
    v.map(|v| f(v, dp)).unwrap_or_else(|| "NA".into())
}

fn rigidity_rows(t: &mut Table, rows: &[RigidityRow]) {
    for r in rows {
        t.rows.push(vec![
            r.group.store.clone().unwrap_or_else(|| "all".into()),
            r.group.category.clone().unwrap_or_else(|| "all".into()),
            r.kind.as_str().into(),
            r.n_products.to_string(),
            r.n_transitions.to_string(),
            r.n_changes.to_string(),
            f(100.0 * r.frequency, 2),
            f(r.implied_duration, 2),
            opt(r.expected_duration, 2),
            r.n_dropped_zero_change.to_string(),
        ]);
    }
}

fn pair_rows(t: &mut Table, rows: &[PairTest]) {
    for r in rows {
        t.rows.push(vec![
            r.label.clone(),
            r.store_a.clone(),
            r.store_b.clone(),
            r.c_a.to_string(),
            r.n_a.to_string(),
            r.c_b.to_string(),
            r.n_b.to_string(),
            f(r.statistic, 4),
            f(r.p_value, 6),
            stars(r.p_value).into(),
        ]);
    }
}

impl ReportBundle {
    pub fn stamp(&self) -> String {
        format!("input_sha256={} seed={}", self.input_sha256, self.seed)
    }

    pub fn tables(&self) -> Vec<Table> {
        let rig_header = [
            "store", "category", "series", "products", "transitions", "changes", "freq_pct", "implied_weeks",
            "expected_weeks", "zero_change_products",
        ];
        let mut tables = Vec::new();
        for (name, title, rows) in [
            ("rigidity_store", "Change frequency and duration by store", &self.rigidity_store),
            ("rigidity_store_category", "Change frequency and duration by store and category", &self.rigidity_store_category),
            ("rigidity_panel", "Change frequency and duration, whole panel", &self.rigidity_panel),
        ] {
            let mut t = Table::new(name, title, &rig_header);
            rigidity_rows(&mut t, rows);
            tables.push(t);
        }

        let mut t = Table::new(
            "sale_events",
            "Sale events: runs of transaction price below each baseline",
            &["store", "baseline", "products", "product_weeks", "events", "mean_length", "mean_log_depth"],
        );
        for r in &self.sale_events {
            t.rows.push(vec![
                r.store.clone(),
                r.baseline.as_str().into(),
                r.n_products.to_string(),
                r.n_weeks.to_string(),
                r.n_events.to_string(),
                opt(r.mean_length, 3),
                opt(r.mean_depth, 4),
            ]);
        }
        tables.push(t);

        let pair_header = ["series", "store_a", "store_b", "count_a", "n_a", "count_b", "n_b", "chi2", "p_value", "sig"];
        let mut t = Table::new("event_tests", "Chi-square tests of sale-event proportions", &pair_header);
        pair_rows(&mut t, &self.event_tests);
        tables.push(t);
        let mut t = Table::new("frequency_tests", "Chi-square tests of change frequencies", &pair_header);
        pair_rows(&mut t, &self.frequency_tests);
        tables.push(t);

        let mut t = Table::new(
            "price_tests",
            "Wilcoxon rank-sum tests of mean transaction prices",
            &["store_a", "store_b", "n_a", "n_b", "w", "z", "p_value", "sig"],
        );
        for r in &self.price_tests {
            t.rows.push(vec![
                r.store_a.clone(),
                r.store_b.clone(),
                r.n_a.to_string(),
                r.n_b.to_string(),
                f(r.w, 1),
                f(r.z, 4),
                f(r.p_value, 6),
                stars(r.p_value).into(),
            ]);
        }
        tables.push(t);

        let mut t = Table::new(
            "cox",
            "Stratified Cox model: hazard ratios (robust SE)",
            &["series", "covariate", "coef", "hazard_ratio", "robust_se", "hr_se", "p_value", "sig"],
        );
        for c in &self.cox {
            let fit = &c.fit;
            for i in 0..fit.names.len() {
                let p = fit.robust_p(i);
                t.rows.push(vec![
                    c.kind.as_str().into(),
                    fit.names[i].clone(),
                    f(fit.coefficients[i], 6),
                    f(fit.hazard_ratios[i], 4),
                    f(fit.robust_se[i], 6),
                    format!("({})", f(fit.hazard_ratio_se(i), 4)),
                    f(p, 6),
                    stars(p).into(),
                ]);
            }
        }
        tables.push(t);

        let mut t = Table::new(
            "cox_summary",
            "Stratified Cox model: fit summary",
            &["series", "events", "spells", "rows", "clusters", "loglik", "global_chi2", "df", "p_value", "converged", "dropped"],
        );
        for c in &self.cox {
            let fit = &c.fit;
            t.rows.push(vec![
                c.kind.as_str().into(),
                fit.n_events.to_string(),
                fit.n_spells.to_string(),
                fit.n_rows.to_string(),
                fit.n_clusters.to_string(),
                f(fit.log_likelihood, 4),
                f(fit.global_chi2, 4),
                fit.names.len().to_string(),
                f(fit.global_p, 6),
                fit.converged.to_string(),
                fit.dropped.join(";"),
            ]);
        }
        tables.push(t);

        let mut t = Table::new(
            "magnitude",
            "Magnitude statistics with 95% cluster-bootstrap intervals",
            &["store", "series", "statistic", "products", "changes", "estimate", "ci_low", "ci_high", "failed_resamples", "note"],
        );
        for r in &self.magnitude {
            let ci = r.interval;
            t.rows.push(vec![
                r.store.clone(),
                r.kind.as_str().into(),
                r.statistic.clone(),
                r.n_products.to_string(),
                r.n_changes.to_string(),
                opt(ci.map(|c| c.estimate), 6),
                opt(ci.map(|c| c.low), 6),
                opt(ci.map(|c| c.high), 6),
                ci.map(|c| c.failed_resamples.to_string()).unwrap_or_else(|| "NA".into()),
                r.note.clone().unwrap_or_default(),
            ]);
        }
        tables.push(t);

        for (name, title, bins) in [
            ("z_histogram", "Standardized price changes (bin width 0.25)", &self.z_histogram),
            ("sync_histogram", "Synchronization index across stores (bin width 0.1)", &self.sync_histogram),
        ] {
            let mut t = Table::new(name, title, &["series", "bin_low", "count"]);
            for b in bins {
                t.rows.push(vec![b.group.clone(), f(b.low, 2), b.count.to_string()]);
            }
            tables.push(t);
        }

        let mut t = Table::new("sync", "Synchronization index per product", &["series", "product", "stores", "transitions", "index"]);
        for r in &self.sync {
            t.rows.push(vec![
                r.kind.as_str().into(),
                r.product.clone(),
                r.n_stores.to_string(),
                r.n_weeks.to_string(),
                opt(r.value, 6),
            ]);
        }
        tables.push(t);

        let mut t = Table::new("price_endings", "Price-ending shares", &["store", "digits", "ending", "share"]);
        for r in &self.price_endings {
            t.rows.push(vec![r.store.clone(), r.digits.to_string(), r.ending.clone(), f(r.share, 6)]);
        }
        tables.push(t);
        tables
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad bundle: {e}")))
    }

    /// Every output file name and its bytes, in a fixed order.
    pub fn files(&self) -> Vec<(String, String)> {
        let stamp = self.stamp();
        let mut files = vec![
            ("config.toml".to_string(), format!("# {stamp}\n{}", self.config.to_toml())),
            ("bundle.json".to_string(), self.to_json()),
        ];
        for t in self.tables() {
            files.push((format!("{}.csv", t.name), t.to_csv(&stamp)));
            files.push((format!("{}.txt", t.name), t.to_text(&stamp)));
        }
        files
    }
}

/// Writes the bundle's files under `dir`, creating it if needed.
pub fn write_bundle(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, body) in bundle.files() {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
