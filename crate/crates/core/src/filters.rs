//! Sales filter, rolling-mode reference prices, sale events and endpoint
//! masks.
//!
//! All comparisons are on exact minor-unit prices. A "return to regular"
//! means the transaction price equals the running regular price to the cent.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::FilterError;
use crate::panel::{Price, ProductKey, ProductSeries};

/// The four price series derived for each product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Transaction,
    PostedRegular,
    Filtered,
    Reference,
}

impl SeriesKind {
    pub const ALL: [SeriesKind; 4] = [
        SeriesKind::Transaction,
        SeriesKind::PostedRegular,
        SeriesKind::Filtered,
        SeriesKind::Reference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SeriesKind::Transaction => "transaction",
            SeriesKind::PostedRegular => "posted_regular",
            SeriesKind::Filtered => "filtered",
            SeriesKind::Reference => "reference",
        }
    }
}

impl fmt::Display for SeriesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which series a sale is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Posted,
    Filtered,
    Reference,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Posted, BaselineKind::Filtered, BaselineKind::Reference];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Posted => "posted",
            BaselineKind::Filtered => "filtered",
            BaselineKind::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub max_sale_len: usize,
    pub ref_window: usize,
    pub align_radius: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { max_sale_len: 6, ref_window: 13, align_radius: 6 }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.max_sale_len == 0 {
            return Err(FilterError::InvalidParameter("max_sale_len must be >= 1".into()));
        }
        if self.ref_window < 3 || self.ref_window.is_multiple_of(2) {
            return Err(FilterError::InvalidParameter(format!(
                "reference window must be odd and >= 3, got {}",
                self.ref_window
            )));
        }
        Ok(())
    }
}

/// Sales filter A: lifts temporary V-shaped cuts back to the running regular
/// price. Returns the filtered series and the sale-week flags.
///
/// A cut starting at week `t` is a sale only if the price comes back to
/// exactly the running regular price within `max_sale_len` weeks, staying
/// strictly below it until then. Anything else (no return, an intermediate
/// price above regular, the series ending first) is a regular price change.
pub fn filter_sales_a(prices: &[Price], max_sale_len: usize) -> Result<(Vec<Price>, Vec<bool>), FilterError> {
    if prices.is_empty() {
        return Err(FilterError::InvalidParameter("empty series".into()));
    }
    if max_sale_len == 0 {
        return Err(FilterError::InvalidParameter("max_sale_len must be >= 1".into()));
    }
    let n = prices.len();
    let mut filtered = Vec::with_capacity(n);
    let mut flags = vec![false; n];
    let mut regular = prices[0];
    filtered.push(regular);
    let mut t = 1;
    while t < n {
        let p = prices[t];
        if p >= regular {
            regular = p;
            filtered.push(regular);
            t += 1;
            continue;
        }
        let horizon = (t + max_sale_len).min(n - 1);
        let mut back_at = None;
        for (k, &q) in prices.iter().enumerate().take(horizon + 1).skip(t + 1) {
            if q == regular {
                back_at = Some(k);
                break;
            }
            if q > regular {
                break;
            }
        }
        match back_at {
            Some(k) => {
                for flag in &mut flags[t..k] {
                    *flag = true;
                }
                filtered.extend(std::iter::repeat_n(regular, k - t));
                t = k;
            }
            None => {
                regular = p;
                filtered.push(regular);
                t += 1;
            }
        }
    }
    Ok((filtered, flags))
}

fn window_mode(prices: &[Price], lo: usize, hi: usize, prev: Option<Price>, current: Price) -> Price {
    let mut counts: BTreeMap<Price, usize> = BTreeMap::new();
    for &p in &prices[lo..=hi] {
        *counts.entry(p).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    let tied = |p: Price| counts.get(&p) == Some(&best);
    if let Some(prev) = prev.filter(|&p| tied(p)) {
        return prev;
    }
    if tied(current) {
        return current;
    }
    // BTreeMap iterates ascending, so the first tied key is the smallest.
    counts.iter().find(|(_, &c)| c == best).map(|(&p, _)| p).expect("non-empty window")
}

/// Rolling-mode reference prices with change-point alignment.
///
/// First pass: the mode of a centered window of `window` weeks, truncated at
/// the series ends, with ties broken toward the previous reference value,
/// then the current price, then the smallest price. Second pass: each change
/// point is moved to the earliest week within `align_radius` where the
/// transaction price already equals the new reference value, never at or
/// before the previous aligned change point and never at or past the next.
pub fn reference_prices(prices: &[Price], window: usize, align_radius: usize) -> Result<Vec<Price>, FilterError> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(FilterError::InvalidParameter(format!("window must be odd and >= 3, got {window}")));
    }
    if prices.len() < 2 {
        return Err(FilterError::InvalidParameter("series must have at least 2 weeks".into()));
    }
    let n = prices.len();
    let half = (window - 1) / 2;
    let mut raw: Vec<Price> = Vec::with_capacity(n);
    for t in 0..n {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(n - 1);
        let prev = raw.last().copied();
        raw.push(window_mode(prices, lo, hi, prev, prices[t]));
    }

    let raw_changes: Vec<usize> = (1..n).filter(|&t| raw[t] != raw[t - 1]).collect();
    let mut aligned = Vec::with_capacity(raw_changes.len());
    let mut previous: Option<usize> = None;
    for (i, &t0) in raw_changes.iter().enumerate() {
        let next = raw_changes.get(i + 1).copied().unwrap_or(n);
        let lo = t0.saturating_sub(align_radius).max(previous.map_or(0, |p| p + 1));
        let hi = (t0 + align_radius).min(next - 1);
        let target = raw[t0];
        let moved = (lo..=hi).find(|&t| prices[t] == target).unwrap_or(t0);
        aligned.push(moved);
        previous = Some(moved);
    }

    let mut out = Vec::with_capacity(n);
    let mut value = raw[0];
    let mut cp = aligned.iter().zip(&raw_changes).peekable();
    for t in 0..n {
        while let Some(&(&at, &orig)) = cp.peek() {
            if at == t {
                value = raw[orig];
                cp.next();
            } else {
                break;
            }
        }
        out.push(value);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaleEvent {
    pub key: ProductKey,
    pub baseline: BaselineKind,
    pub start_week: u32,
    /// Inclusive.
    pub end_week: u32,
    /// Largest baseline minus transaction gap over the spell, in minor units.
    pub depth: i64,
}

impl SaleEvent {
    pub fn len(&self) -> u32 {
        self.end_week - self.start_week + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Maximal runs of weeks with `transaction < baseline`.
pub fn extract_sale_events(
    transaction: &[Price],
    baseline: &[Price],
    kind: BaselineKind,
    key: &ProductKey,
    first_week: u32,
) -> Result<Vec<SaleEvent>, FilterError> {
    if transaction.len() != baseline.len() {
        return Err(FilterError::LengthMismatch(transaction.len(), baseline.len()));
    }
    let mut events = Vec::new();
    let mut current: Option<(usize, i64)> = None;
    for (t, (&p, &b)) in transaction.iter().zip(baseline).enumerate() {
        if p < b {
            let gap = b.0 - p.0;
            current = Some(match current {
                Some((s, d)) => (s, d.max(gap)),
                None => (t, gap),
            });
        } else if let Some((s, d)) = current.take() {
            events.push(SaleEvent {
                key: key.clone(),
                baseline: kind,
                start_week: first_week + s as u32,
                end_week: first_week + t as u32 - 1,
                depth: d,
            });
        }
    }
    if let Some((s, d)) = current {
        events.push(SaleEvent {
            key: key.clone(),
            baseline: kind,
            start_week: first_week + s as u32,
            end_week: first_week + transaction.len() as u32 - 1,
            depth: d,
        });
    }
    Ok(events)
}

/// The four aligned series of one product, their sale flags and the
/// exclusion mask set by an [`EndpointPolicy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    pub key: ProductKey,
    pub category: String,
    pub first_week: u32,
    pub transaction: Vec<Price>,
    pub posted_regular: Vec<Price>,
    pub filtered: Vec<Price>,
    pub reference: Vec<Price>,
    pub sale_flags_filtered: Vec<bool>,
    pub sale_flags_posted: Vec<bool>,
    pub sale_flags_reference: Vec<bool>,
    /// `true` marks a week excluded from all downstream statistics.
    pub mask: Vec<bool>,
}

impl FilterResult {
    pub fn len(&self) -> usize {
        self.transaction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transaction.is_empty()
    }

    pub fn series(&self, kind: SeriesKind) -> &[Price] {
        match kind {
            SeriesKind::Transaction => &self.transaction,
            SeriesKind::PostedRegular => &self.posted_regular,
            SeriesKind::Filtered => &self.filtered,
            SeriesKind::Reference => &self.reference,
        }
    }

    pub fn baseline(&self, kind: BaselineKind) -> &[Price] {
        match kind {
            BaselineKind::Posted => &self.posted_regular,
            BaselineKind::Filtered => &self.filtered,
            BaselineKind::Reference => &self.reference,
        }
    }

    pub fn sale_events(&self, kind: BaselineKind) -> Vec<SaleEvent> {
        extract_sale_events(&self.transaction, self.baseline(kind), kind, &self.key, self.first_week)
            .expect("aligned series")
    }
}

/// Runs both filters on one product.
pub fn filter_product(series: &ProductSeries, params: &FilterParams) -> Result<FilterResult, FilterError> {
    params.validate()?;
    let (filtered, sale_flags_filtered) = filter_sales_a(&series.transaction, params.max_sale_len)?;
    let reference = reference_prices(&series.transaction, params.ref_window, params.align_radius)?;
    let t = &series.transaction;
    let sale_flags_posted = t.iter().zip(&series.regular).map(|(p, r)| p < r).collect();
    let sale_flags_reference = t.iter().zip(&reference).map(|(p, r)| p < r).collect();
    Ok(FilterResult {
        key: series.key.clone(),
        category: series.category.clone(),
        first_week: series.first_week,
        transaction: t.clone(),
        posted_regular: series.regular.clone(),
        filtered,
        reference,
        sale_flags_filtered,
        sale_flags_posted,
        sale_flags_reference,
        mask: vec![false; t.len()],
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndpointPolicy {
    #[default]
    None,
    /// Mask a trailing price cut that never bounces back up.
    ConditionalExclude { margin: usize },
    /// Mask `margin` weeks at both ends.
    Trim { margin: usize },
}

impl EndpointPolicy {
    pub fn from_name(name: &str, margin: usize) -> Result<Self, FilterError> {
        match name {
            "none" => Ok(EndpointPolicy::None),
            "trim" => Ok(EndpointPolicy::Trim { margin }),
            "conditional" | "conditional_exclude" => Ok(EndpointPolicy::ConditionalExclude { margin }),
            other => Err(FilterError::InvalidParameter(format!("unknown endpoint policy `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EndpointPolicy::None => "none",
            EndpointPolicy::ConditionalExclude { .. } => "conditional",
            EndpointPolicy::Trim { .. } => "trim",
        }
    }

    pub fn margin(&self) -> usize {
        match *self {
            EndpointPolicy::None => 0,
            EndpointPolicy::ConditionalExclude { margin } | EndpointPolicy::Trim { margin } => margin,
        }
    }
}

impl FromStr for EndpointPolicy {
    type Err = FilterError;
    fn from_str(s: &str) -> Result<Self, FilterError> {
        EndpointPolicy::from_name(s, 6)
    }
}

/// Start index of a trailing cut: the earliest decrease within the last
/// `margin` weeks after which the price never moves up again.
pub fn trailing_cut_start(prices: &[Price], margin: usize) -> Option<usize> {
    let n = prices.len();
    let first = n.saturating_sub(margin).max(1);
    let mut last_up = None;
    for t in 1..n {
        if prices[t] > prices[t - 1] {
            last_up = Some(t);
        }
    }
    (first..n).find(|&t| prices[t] < prices[t - 1] && last_up.is_none_or(|u| u < t))
}

/// Sets the exclusion mask of `result` according to `policy`.
pub fn apply_endpoint_policy(mut result: FilterResult, policy: EndpointPolicy) -> Result<FilterResult, FilterError> {
    let n = result.len();
    let margin = policy.margin();
    if 2 * margin >= n && !matches!(policy, EndpointPolicy::None) {
        return Err(FilterError::MarginTooLarge { margin, len: n });
    }
    let mut mask = vec![false; n];
    match policy {
        EndpointPolicy::None => {}
        EndpointPolicy::Trim { margin } => {
            for m in mask.iter_mut().take(margin) {
                *m = true;
            }
            for m in mask.iter_mut().skip(n - margin) {
                *m = true;
            }
        }
        EndpointPolicy::ConditionalExclude { margin } => {
            if let Some(start) = trailing_cut_start(&result.transaction, margin) {
                for m in &mut mask[start..] {
                    *m = true;
                }
            }
        }
    }
    result.mask = mask;
    Ok(result)
}
