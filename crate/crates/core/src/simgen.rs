//! Synthetic multi-store panels with known regular prices and sales.
//!
//! Each product follows a weekly decision process. On a free week a
//! temporary cut starts with probability `sale_hazard`; otherwise the
//! regular price moves with probability `regular_change_hazard`. A cut of
//! length `l` occupies `l` weeks strictly below the regular price and is
//! followed by one week back at exactly the regular price. Whether a cut is
//! promoted (posted regular stays put) or labeled as a regular change
//! (posted regular follows the cut) is the store's labeling policy.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PanelError, SimError};
use crate::panel::{
    default_start_date, Aisle, LoadOptions, Price, PriceObservation, PricePanel, Shelf, StoreFormat,
};
use crate::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformRange {
    pub low: f64,
    pub high: f64,
}

/// Frequencies a policy is calibrated to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub transaction: f64,
    pub posted_regular: f64,
    pub filtered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorePolicy {
    pub format: StoreFormat,
    /// Probability per free week of a regular price change.
    pub regular_change_hazard: f64,
    /// Probability that a regular change is an increase.
    #[serde(default = "half")]
    pub regular_up_prob: f64,
    /// Probability per free week that a temporary cut starts.
    pub sale_hazard: f64,
    /// Probability of each cut length 1, 2, ..., max weeks.
    pub sale_length_weights: Vec<f64>,
    /// Probability a cut is promoted as a sale; otherwise it is posted as a
    /// regular price change.
    pub promoted_share: f64,
    pub nine_ending_prob: f64,
    /// Absolute log size of regular changes.
    pub regular_change_size: LogNormalParams,
    /// Log discount of a cut below the regular price.
    pub sale_depth: UniformRange,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<CalibrationTarget>,
}

fn half() -> f64 {
    0.5
}

impl StorePolicy {
    /// Whether any cut is presented as a promoted sale.
    pub fn promote_sales(&self) -> bool {
        self.promoted_share > 0.0
    }

    /// Whether any cut is posted as a regular price change.
    pub fn label_cuts_as_regular(&self) -> bool {
        self.promoted_share < 1.0
    }

    pub fn max_sale_len(&self) -> usize {
        self.sale_length_weights.len()
    }

    pub fn mean_sale_len(&self) -> f64 {
        let total: f64 = self.sale_length_weights.iter().sum();
        self.sale_length_weights.iter().enumerate().map(|(i, w)| (i + 1) as f64 * w).sum::<f64>() / total
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SimError::InvalidParameter(format!("{name} = {v} is not a probability")))
            }
        };
        prob("regular_change_hazard", self.regular_change_hazard)?;
        prob("regular_up_prob", self.regular_up_prob)?;
        prob("sale_hazard", self.sale_hazard)?;
        prob("promoted_share", self.promoted_share)?;
        prob("nine_ending_prob", self.nine_ending_prob)?;
        if self.sale_length_weights.is_empty()
            || self.sale_length_weights.iter().any(|w| w.is_nan() || *w < 0.0)
            || self.sale_length_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(SimError::InvalidParameter("sale_length_weights must be non-negative with positive sum".into()));
        }
        if self.regular_change_size.sigma.is_nan() || self.regular_change_size.sigma < 0.0 || !self.regular_change_size.mu.is_finite() {
            return Err(SimError::InvalidParameter("regular_change_size needs finite mu and sigma >= 0".into()));
        }
        let d = self.sale_depth;
        if !(d.low > 0.0 && d.high >= d.low && d.high.is_finite()) {
            return Err(SimError::InvalidParameter("sale_depth must satisfy 0 < low <= high".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let p: StorePolicy = toml::from_str(text).map_err(|e| SimError::Preset(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    fn length_probs(&self) -> Vec<f64> {
        let total: f64 = self.sale_length_weights.iter().sum();
        self.sale_length_weights.iter().map(|w| w / total).collect()
    }

    /// Exact expected change counts for a product observed `weeks` weeks,
    /// from the decision-process recursion.
    pub fn expected_counts(&self, weeks: usize) -> ExpectedCounts {
        let probs = self.length_probs();
        let hs = self.sale_hazard;
        let hr = self.regular_change_hazard;
        let mut free = vec![0.0; weeks + probs.len() + 2];
        if weeks > 1 {
            free[1] = 1.0;
        }
        let mut out = ExpectedCounts { transitions: weeks.saturating_sub(1) as f64, ..Default::default() };
        for t in 1..weeks {
            let q = free[t];
            if q == 0.0 {
                continue;
            }
            let mut cut_changes = 1.0;
            for (i, &w) in probs.iter().enumerate() {
                let len = i + 1;
                if t + len < weeks {
                    cut_changes += w;
                }
                free[t + len + 1] += q * hs * w;
            }
            free[t + 1] += q * (1.0 - hs);
            let regular = q * (1.0 - hs) * hr;
            out.regular_changes += regular;
            out.cut_changes += q * hs * cut_changes;
            out.transaction_changes += regular + q * hs * cut_changes;
            out.posted_changes += regular + q * hs * (1.0 - self.promoted_share) * cut_changes;
            out.cuts += q * hs;
            out.promoted_events += q * hs * self.promoted_share;
        }
        out
    }

    /// Hazards and promoted share that reproduce `target` exactly in
    /// expectation for `weeks`-week products, keeping the other parameters.
    pub fn calibrated(&self, target: CalibrationTarget, weeks: usize) -> Result<StorePolicy, SimError> {
        let n = weeks.saturating_sub(1) as f64;
        let cut_target = target.transaction - target.filtered;
        if !(cut_target >= 0.0 && target.filtered >= 0.0 && target.posted_regular >= target.filtered - 1e-12) {
            return Err(SimError::InvalidParameter(format!("inconsistent calibration target {target:?}")));
        }
        let mut p = self.clone();
        let cut_freq = |hs: f64| {
            let mut q = self.clone();
            q.sale_hazard = hs;
            q.expected_counts(weeks).cut_changes / n
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        if cut_freq(hi) < cut_target {
            return Err(SimError::InvalidParameter("cut frequency target unreachable".into()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cut_freq(mid) < cut_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        p.sale_hazard = 0.5 * (lo + hi);
        p.regular_change_hazard = 1.0;
        let at_one = p.expected_counts(weeks).regular_changes / n;
        p.regular_change_hazard = target.filtered / at_one;
        p.promoted_share = if cut_target > 0.0 {
            (1.0 - (target.posted_regular - target.filtered) / cut_target).clamp(0.0, 1.0)
        } else {
            1.0
        };
        p.target = Some(target);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub transitions: f64,
    pub transaction_changes: f64,
    pub posted_changes: f64,
    pub regular_changes: f64,
    pub cut_changes: f64,
    pub cuts: f64,
    pub promoted_events: f64,
}

pub const EDLP_PRESET: &str = include_str!("../presets/edlp.toml");
pub const HILO_PRESET: &str = include_str!("../presets/hilo.toml");
pub const HYB_PRESET: &str = include_str!("../presets/hyb.toml");

pub fn preset_policy(name: &str) -> Result<StorePolicy, SimError> {
    match name.to_ascii_lowercase().as_str() {
        "edlp" => StorePolicy::from_toml(EDLP_PRESET),
        "hilo" | "hi-lo" => StorePolicy::from_toml(HILO_PRESET),
        "hyb" | "hybrid" => StorePolicy::from_toml(HYB_PRESET),
        other => Err(SimError::Preset(format!("unknown store preset `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreSetup {
    pub id: String,
    pub n_products: usize,
    pub policy: StorePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub stores: Vec<StoreSetup>,
    pub n_weeks: usize,
    /// Products `0..shared_products` are carried by every store under the
    /// same id; the rest are store-specific private labels.
    pub shared_products: usize,
    pub categories: Vec<String>,
    /// Enforce cut shapes the sales filter can recover exactly.
    pub oracle: bool,
    /// Filter window the oracle shapes must respect.
    pub oracle_max_sale_len: usize,
}

pub const CATEGORIES: [&str; 11] = [
    "baby",
    "beverages",
    "breakfast",
    "condiments",
    "dairy",
    "frozen",
    "health_beauty",
    "household",
    "juices",
    "tissue_pet",
    "soups_canned",
];

impl SimConfig {
    /// Three stores of 99, 99 and 108 products over 52 weeks, 89 of them
    /// shared national brands.
    pub fn canadian() -> Self {
        let store = |id: &str, preset: &str, n| StoreSetup {
            id: id.into(),
            n_products: n,
            policy: preset_policy(preset).expect("shipped preset"),
        };
        SimConfig {
            stores: vec![store("edlp", "edlp", 99), store("hilo", "hilo", 99), store("hyb", "hyb", 108)],
            n_weeks: 52,
            shared_products: 89,
            categories: CATEGORIES.iter().map(|s| s.to_string()).collect(),
            oracle: false,
            oracle_max_sale_len: 6,
        }
    }

    pub fn single_store(policy: StorePolicy, n_products: usize, n_weeks: usize) -> Self {
        SimConfig {
            stores: vec![StoreSetup { id: "s1".into(), n_products, policy }],
            n_weeks,
            shared_products: n_products,
            categories: CATEGORIES.iter().map(|s| s.to_string()).collect(),
            oracle: false,
            oracle_max_sale_len: 6,
        }
    }

    pub fn named(name: &str) -> Result<Self, SimError> {
        match name.to_ascii_lowercase().as_str() {
            "canadian" => Ok(Self::canadian()),
            other => {
                let policy = preset_policy(other)?;
                Ok(Self::single_store(policy, 99, 52))
            }
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_weeks < 13 {
            return Err(SimError::InvalidParameter(format!("need at least 13 weeks, got {}", self.n_weeks)));
        }
        if self.stores.is_empty() || self.stores.iter().any(|s| s.n_products == 0) {
            return Err(SimError::InvalidParameter("every store needs at least one product".into()));
        }
        if self.categories.is_empty() {
            return Err(SimError::InvalidParameter("no categories".into()));
        }
        for s in &self.stores {
            s.policy.validate()?;
            if self.oracle && s.policy.max_sale_len() > self.oracle_max_sale_len {
                return Err(SimError::InvalidParameter(format!(
                    "store {}: cuts up to {} weeks exceed the oracle window {}",
                    s.id,
                    s.policy.max_sale_len(),
                    self.oracle_max_sale_len
                )));
            }
        }
        Ok(())
    }
}

/// A simulated cut.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueSale {
    pub store: String,
    pub product: String,
    pub start_week: u32,
    /// Inclusive; truncated at the last panel week.
    pub end_week: u32,
    pub promoted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueSeries {
    pub store: String,
    pub product: String,
    pub regular: Vec<Price>,
    pub sale: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Same order as the panel's products.
    pub series: Vec<TrueSeries>,
    pub events: Vec<TrueSale>,
}

/// Snaps a target price to an ending digit: 9 with probability `p9`,
/// otherwise a uniformly drawn digit 0..=8.
fn snap<R: Rng>(target: f64, p9: f64, rng: &mut R) -> i64 {
    let cents = target.round().max(19.0) as i64;
    let digit = if rng.random::<f64>() < p9 { 9 } else { rng.random_range(0..9) };
    let base = cents / 10 * 10;
    let mut out = base + digit;
    if out - cents > 5 {
        out -= 10;
    } else if cents - out > 5 {
        out += 10;
    }
    if out < 9 {
        out += 10;
    }
    out
}

struct ProductDraw {
    transaction: Vec<Price>,
    posted: Vec<Price>,
    regular: Vec<Price>,
    sale: Vec<bool>,
    events: Vec<(usize, usize, bool)>,
    aisle: Aisle,
    shelf: Shelf,
}

fn new_regular<R: Rng>(policy: &StorePolicy, current: i64, recent: &[i64], rng: &mut R) -> i64 {
    let size = LogNormal::new(policy.regular_change_size.mu, policy.regular_change_size.sigma)
        .expect("validated parameters");
    for _ in 0..50 {
        let up = rng.random::<f64>() < policy.regular_up_prob;
        let mut s: f64 = size.sample(rng);
        s = s.min(1.5);
        let mut target = current as f64 * if up { s.exp() } else { (-s).exp() };
        if !(50.0..=3000.0).contains(&target) {
            target = current as f64 * if up { (-s).exp() } else { s.exp() };
        }
        let c = snap(target, policy.nine_ending_prob, rng);
        if c != current && !recent.contains(&c) {
            return c;
        }
    }
    let mut c = current + 10;
    while recent.contains(&c) || c == current {
        c += 10;
    }
    c
}

fn simulate_product<R: Rng>(policy: &StorePolicy, base: i64, weeks: usize, oracle_len: usize, rng: &mut R) -> ProductDraw {
    let probs = policy.length_probs();
    let mut d = ProductDraw {
        transaction: Vec::with_capacity(weeks),
        posted: Vec::with_capacity(weeks),
        regular: Vec::with_capacity(weeks),
        sale: Vec::with_capacity(weeks),
        events: Vec::new(),
        aisle: [Aisle::Back, Aisle::Middle, Aisle::Front][rng.random_range(0..3)],
        shelf: [Shelf::Bottom, Shelf::EyeLevel, Shelf::Top][rng.random_range(0..3)],
    };
    let mut r = base;
    // Regular levels and the week each was left, for the no-quick-return rule.
    let mut history: Vec<(i64, usize)> = Vec::new();
    let push = |d: &mut ProductDraw, t: i64, posted: i64, regular: i64, sale: bool| {
        d.transaction.push(Price(t));
        d.posted.push(Price(posted));
        d.regular.push(Price(regular));
        d.sale.push(sale);
    };
    push(&mut d, r, r, r, false);
    let mut t = 1;
    while t < weeks {
        let u: f64 = rng.random();
        if u < policy.sale_hazard {
            let mut x: f64 = rng.random();
            let mut len = probs.len();
            for (i, &w) in probs.iter().enumerate() {
                if x < w {
                    len = i + 1;
                    break;
                }
                x -= w;
            }
            let depth = rng.random_range(policy.sale_depth.low..=policy.sale_depth.high);
            let mut s = snap(r as f64 * (-depth).exp(), policy.nine_ending_prob, rng);
            while s >= r {
                s -= 10;
            }
            if s <= 0 {
                s = (r - 1).max(1);
            }
            let promoted = rng.random::<f64>() < policy.promoted_share;
            let end = (t + len).min(weeks);
            for _ in t..end {
                push(&mut d, s, if promoted { r } else { s }, r, true);
            }
            d.events.push((t, end - 1, promoted));
            if end < weeks {
                push(&mut d, r, r, r, false);
            }
            t = end + 1;
        } else if rng.random::<f64>() < policy.regular_change_hazard {
            let window = oracle_len + 1;
            let recent: Vec<i64> =
                history.iter().filter(|&&(_, left)| t - left <= window).map(|&(p, _)| p).collect();
            let next = new_regular(policy, r, &recent, rng);
            history.push((r, t));
            r = next;
            push(&mut d, r, r, r, false);
            t += 1;
        } else {
            push(&mut d, r, r, r, false);
            t += 1;
        }
    }
    d
}

/// Simulates a panel and its ground truth. Output is a pure function of
/// `(config, seed)`.
pub fn simulate_panel(config: &SimConfig, seed: u64) -> Result<(PricePanel, GroundTruth), SimError> {
    config.validate()?;
    let weeks = config.n_weeks;
    let mut jobs = Vec::new();
    for (si, store) in config.stores.iter().enumerate() {
        let shared = config.shared_products.min(store.n_products);
        for pi in 0..store.n_products {
            let (id, private, slot) = if pi < shared {
                (format!("NB{pi:03}"), false, pi)
            } else {
                (format!("PL-{}-{:02}", store.id, pi - shared), true, pi - shared)
            };
            let category = config.categories[slot % config.categories.len()].clone();
            jobs.push((si, pi, id, private, category));
        }
    }
    let draws: Vec<ProductDraw> = jobs
        .par_iter()
        .map(|(si, pi, id, private, _)| {
            // Shared products share a base price across stores.
            let base_key = if *private { 1_000_000 + (*si as u64) * 10_000 + *pi as u64 } else { *pi as u64 };
            let mut base_rng = ChaCha8Rng::seed_from_u64(substream(seed, &[0, base_key]));
            let policy = &config.stores[*si].policy;
            let base = snap(100.0 * (base_rng.random_range(0.0f64..2.2)).exp(), policy.nine_ending_prob, &mut base_rng);
            let _ = id;
            let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, &[1, *si as u64, *pi as u64]));
            simulate_product(policy, base, weeks, config.oracle_max_sale_len, &mut rng)
        })
        .collect();

    let mut rows = Vec::with_capacity(jobs.len() * weeks);
    let mut truth = GroundTruth { series: Vec::new(), events: Vec::new() };
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = &config.stores[jobs[a].0].id;
        let sb = &config.stores[jobs[b].0].id;
        (sa, &jobs[a].2).cmp(&(sb, &jobs[b].2))
    });
    for &j in &order {
        let (si, _, id, private, category) = &jobs[j];
        let store = &config.stores[*si];
        let d = &draws[j];
        for t in 0..weeks {
            rows.push(PriceObservation {
                store: store.id.clone(),
                product: id.clone(),
                category: category.clone(),
                week: t as u32 + 1,
                transaction_price: d.transaction[t],
                regular_price: d.posted[t],
                private_label: *private,
                aisle: d.aisle,
                shelf: d.shelf,
                format: Some(store.policy.format),
                line: None,
                imputed: false,
            });
        }
        truth.series.push(TrueSeries {
            store: store.id.clone(),
            product: id.clone(),
            regular: d.regular.clone(),
            sale: d.sale.clone(),
        });
        truth.events.extend(d.events.iter().map(|&(s, e, promoted)| TrueSale {
            store: store.id.clone(),
            product: id.clone(),
            start_week: s as u32 + 1,
            end_week: e as u32 + 1,
            promoted,
        }));
    }
    let opts = LoadOptions { start_date: default_start_date(), ..Default::default() };
    let panel = PricePanel::from_rows(rows, &opts).map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    Ok((panel, truth))
}

/// Writes the ground-truth sidecar: panel keys plus `true_regular` and
/// `true_sale`.
pub fn write_ground_truth<W: Write>(truth: &GroundTruth, sink: W) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| PanelError::Io(e.to_string());
    w.write_record(["store", "product", "week", "true_regular", "true_sale"]).map_err(io)?;
    for s in &truth.series {
        for (t, (r, sale)) in s.regular.iter().zip(&s.sale).enumerate() {
            w.write_record([
                s.store.clone(),
                s.product.clone(),
                (t + 1).to_string(),
                r.to_string(),
                sale.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| PanelError::Io(e.to_string()))
}

/// Kinds of event injected by [`reference_oracle_series`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedKind {
    Spike,
    VSale,
    Permanent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvent {
    pub kind: InjectedKind,
    /// 0-based first week.
    pub start: usize,
    pub len: usize,
}

/// A series with isolated transient events (one-week spikes, V-shaped sales
/// of 1..=`max_sale_len` weeks) and permanent level changes. Transient events
/// sit at least `window` weeks from any other event and `window / 2 + 1`
/// weeks from the series ends; permanent changes are at least
/// `window / 2 + 1` weeks apart.
pub fn reference_oracle_series(
    weeks: usize,
    window: usize,
    max_sale_len: usize,
    seed: u64,
) -> (Vec<Price>, Vec<InjectedEvent>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edge = window / 2 + 1;
    let mut events: Vec<InjectedEvent> = Vec::new();
    let occupied = |events: &[InjectedEvent], s: usize, e: usize, gap: usize| {
        events.iter().any(|ev| s < ev.start + ev.len + gap && ev.start < e + 1 + gap)
    };
    for _ in 0..rng.random_range(0..=2) {
        let c = rng.random_range(edge..weeks - edge + 1);
        if !occupied(&events, c, c, edge) {
            events.push(InjectedEvent { kind: InjectedKind::Permanent, start: c, len: 1 });
        }
    }
    for _ in 0..rng.random_range(1..=3) {
        let (kind, len) = if rng.random_bool(0.5) {
            (InjectedKind::Spike, 1)
        } else {
            (InjectedKind::VSale, rng.random_range(1..=max_sale_len))
        };
        if weeks < 2 * edge + len {
            break;
        }
        let s = rng.random_range(edge..=weeks - edge - len);
        if !occupied(&events, s, s + len - 1, window) {
            events.push(InjectedEvent { kind, start: s, len });
        }
    }
    events.sort_by_key(|e| e.start);

    let mut level = snap(100.0 * rng.random_range(0.5f64..2.0).exp(), 0.8, &mut rng);
    let mut prices = vec![0i64; weeks];
    let mut t = 0;
    for ev in &events {
        while t < ev.start {
            prices[t] = level;
            t += 1;
        }
        match ev.kind {
            InjectedKind::Permanent => {
                let up = rng.random_bool(0.5);
                let f: f64 = rng.random_range(0.05..0.3);
                let target = level as f64 * if up { f.exp() } else { (-f).exp() };
                let mut next = snap(target, 0.8, &mut rng);
                if next == level {
                    next += 10;
                }
                level = next;
            }
            InjectedKind::Spike | InjectedKind::VSale => {
                let up = ev.kind == InjectedKind::Spike && rng.random_bool(0.5);
                let f: f64 = rng.random_range(0.05..0.3);
                let mut v = snap(level as f64 * if up { f.exp() } else { (-f).exp() }, 0.8, &mut rng);
                if v == level {
                    v += if up { 10 } else { -10 };
                }
                if !up && v >= level {
                    v = level - 10;
                }
                for _ in 0..ev.len {
                    prices[t] = v;
                    t += 1;
                }
            }
        }
    }
    while t < weeks {
        prices[t] = level;
        t += 1;
    }
    (prices.into_iter().map(Price).collect(), events)
}

/// Promoted-sale events per store in the ground truth.
pub fn promoted_counts(truth: &GroundTruth) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for e in truth.events.iter().filter(|e| e.promoted) {
        *out.entry(e.store.clone()).or_default() += 1;
    }
    out
}
