//! Price-change frequencies and the two duration estimators.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::StatsError;
use crate::filters::{FilterResult, SeriesKind};
use crate::panel::Price;

/// Change indicator per transition `t -> t+1`. `None` marks a transition that
/// touches a masked week and is excluded from counts.
pub fn change_indicators(series: &[Price], mask: &[bool]) -> Vec<Option<bool>> {
    debug_assert_eq!(series.len(), mask.len());
    series
        .windows(2)
        .zip(mask.windows(2))
        .map(|(w, m)| if m[0] || m[1] { None } else { Some(w[0] != w[1]) })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCount {
    pub changes: usize,
    pub transitions: usize,
}

impl ChangeCount {
    pub fn of(series: &[Price], mask: &[bool]) -> Self {
        change_indicators(series, mask).into_iter().flatten().fold(Self::default(), |mut acc, c| {
            acc.transitions += 1;
            acc.changes += usize::from(c);
            acc
        })
    }

    pub fn frequency(&self) -> Option<f64> {
        (self.transitions > 0).then(|| self.changes as f64 / self.transitions as f64)
    }
}

impl std::ops::Add for ChangeCount {
    type Output = ChangeCount;
    fn add(self, o: ChangeCount) -> ChangeCount {
        ChangeCount { changes: self.changes + o.changes, transitions: self.transitions + o.transitions }
    }
}

impl std::iter::Sum for ChangeCount {
    fn sum<I: Iterator<Item = ChangeCount>>(iter: I) -> Self {
        iter.fold(ChangeCount::default(), |a, b| a + b)
    }
}

/// Pooled frequency: total changes over total transitions.
pub fn frequency<I: IntoIterator<Item = ChangeCount>>(group: I) -> Result<f64, StatsError> {
    let total: ChangeCount = group.into_iter().sum();
    total.frequency().ok_or(StatsError::NoTransitions)
}

/// `-1 / ln(1 - f)` weeks. `f = 0` gives `+inf`; `f = 1` gives 0 with a
/// logged warning.
pub fn implied_duration(f: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&f) || f.is_nan() {
        return Err(StatsError::FrequencyOutOfRange(f));
    }
    if f == 0.0 {
        return Ok(f64::INFINITY);
    }
    if f == 1.0 {
        log::warn!("price changes every week; implied duration taken as 0");
        return Ok(0.0);
    }
    Ok(-1.0 / (-f).ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedDuration {
    pub weeks: f64,
    pub n_retained: usize,
    pub n_dropped: usize,
}

/// Mean of per-product implied durations over products with at least one
/// change.
pub fn expected_duration(freqs: &[f64]) -> Result<ExpectedDuration, StatsError> {
    let mut sum = 0.0;
    let mut kept = 0usize;
    for &f in freqs {
        if f > 0.0 {
            sum += implied_duration(f)?;
            kept += 1;
        } else if f < 0.0 || f.is_nan() {
            return Err(StatsError::FrequencyOutOfRange(f));
        }
    }
    if kept == 0 {
        return Err(StatsError::AllConstant);
    }
    Ok(ExpectedDuration { weeks: sum / kept as f64, n_retained: kept, n_dropped: freqs.len() - kept })
}

/// How products are pooled into table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Panel,
    Store,
    Category,
    StoreCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub store: Option<String>,
    pub category: Option<String>,
}

impl GroupKey {
    pub fn of(grouping: Grouping, store: &str, category: &str) -> Self {
        let (s, c) = match grouping {
            Grouping::Panel => (None, None),
            Grouping::Store => (Some(store), None),
            Grouping::Category => (None, Some(category)),
            Grouping::StoreCategory => (Some(store), Some(category)),
        };
        GroupKey { store: s.map(str::to_string), category: c.map(str::to_string) }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}",
            self.store.as_deref().unwrap_or("*"),
            self.category.as_deref().unwrap_or("*")
        )
    }
}

/// One row of a frequency/duration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityRow {
    pub group: GroupKey,
    pub kind: SeriesKind,
    pub n_products: usize,
    pub n_transitions: usize,
    pub n_changes: usize,
    pub frequency: f64,
    pub implied_duration: f64,
    pub expected_duration: Option<f64>,
    pub n_dropped_zero_change: usize,
}

/// Frequency table for every group and series kind, ordered by group then
/// kind.
pub fn rigidity_table(
    results: &[FilterResult],
    grouping: Grouping,
    kinds: &[SeriesKind],
) -> Result<Vec<RigidityRow>, StatsError> {
    let mut groups: BTreeMap<GroupKey, Vec<&FilterResult>> = BTreeMap::new();
    for r in results {
        groups.entry(GroupKey::of(grouping, &r.key.store, &r.category)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (key, members) in groups {
        for &kind in kinds {
            let counts: Vec<ChangeCount> =
                members.iter().map(|r| ChangeCount::of(r.series(kind), &r.mask)).collect();
            let total: ChangeCount = counts.iter().copied().sum();
            let f = total.frequency().ok_or(StatsError::NoTransitions)?;
            let per_product: Vec<f64> = counts.iter().filter_map(ChangeCount::frequency).collect();
            let (expected, dropped) = match expected_duration(&per_product) {
                Ok(e) => (Some(e.weeks), e.n_dropped),
                Err(StatsError::AllConstant) => (None, per_product.len()),
                Err(e) => return Err(e),
            };
            rows.push(RigidityRow {
                group: key.clone(),
                kind,
                n_products: members.len(),
                n_transitions: total.transitions,
                n_changes: total.changes,
                frequency: f,
                implied_duration: implied_duration(f)?,
                expected_duration: expected,
                n_dropped_zero_change: dropped,
            });
        }
    }
    Ok(rows)
}
