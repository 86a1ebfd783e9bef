//! Weekly price panels: ingestion, validation and price-ending shares.
//!
//! Prices are held as exact minor-unit integers ([`Price`]) from the moment a
//! row is parsed. Nothing in this module touches floating point except the
//! histogram shares.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::PanelError;

/// A currency amount in minor units (cents).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Price(pub i64);

impl Price {
    pub fn cents(self) -> i64 {
        self.0
    }

    /// Major-unit value, only for log/ratio math.
    pub fn as_major(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Parses a decimal string with at most two fraction digits.
    pub fn parse_decimal(s: &str) -> Option<Price> {
        let s = s.trim();
        if s.is_empty() || s.starts_with('-') || s.starts_with('+') {
            return None;
        }
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if frac.len() > 2 || (whole.is_empty() && frac.is_empty()) {
            return None;
        }
        if !whole.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let whole: i64 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
        let frac_cents: i64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<i64>().ok()? * 10,
            _ => frac.parse().ok()?,
        };
        whole.checked_mul(100)?.checked_add(frac_cents).map(Price)
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aisle {
    Back,
    Middle,
    Front,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shelf {
    Bottom,
    EyeLevel,
    Top,
}

impl FromStr for Aisle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "back" => Ok(Aisle::Back),
            "middle" => Ok(Aisle::Middle),
            "front" => Ok(Aisle::Front),
            other => Err(format!("unknown aisle `{other}`")),
        }
    }
}

impl FromStr for Shelf {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "bottom" => Ok(Shelf::Bottom),
            "eye_level" | "eye" | "middle" => Ok(Shelf::EyeLevel),
            "top" => Ok(Shelf::Top),
            other => Err(format!("unknown shelf `{other}`")),
        }
    }
}

impl fmt::Display for Aisle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aisle::Back => "back",
            Aisle::Middle => "middle",
            Aisle::Front => "front",
        })
    }
}

impl fmt::Display for Shelf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shelf::Bottom => "bottom",
            Shelf::EyeLevel => "eye_level",
            Shelf::Top => "top",
        })
    }
}

/// Store pricing format. Metadata only: it is reported and used as a
/// regression covariate, never to switch algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StoreFormat {
    #[serde(rename = "EDLP")]
    Edlp,
    #[serde(rename = "HiLo")]
    HiLo,
    #[serde(rename = "HYB")]
    Hybrid,
}

impl FromStr for StoreFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "edlp" => Ok(StoreFormat::Edlp),
            "hilo" => Ok(StoreFormat::HiLo),
            "hyb" | "hybrid" => Ok(StoreFormat::Hybrid),
            other => Err(format!("unknown store format `{other}`")),
        }
    }
}

impl fmt::Display for StoreFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StoreFormat::Edlp => "EDLP",
            StoreFormat::HiLo => "HiLo",
            StoreFormat::Hybrid => "HYB",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProductKey {
    pub store: String,
    pub product: String,
}

impl ProductKey {
    pub fn new(store: impl Into<String>, product: impl Into<String>) -> Self {
        Self { store: store.into(), product: product.into() }
    }
}

impl fmt::Display for ProductKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.store, self.product)
    }
}

/// One parsed input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceObservation {
    pub store: String,
    pub product: String,
    pub category: String,
    pub week: u32,
    pub transaction_price: Price,
    pub regular_price: Price,
    pub private_label: bool,
    pub aisle: Aisle,
    pub shelf: Shelf,
    pub format: Option<StoreFormat>,
    /// 1-based line in the source (header is line 1); `None` for synthesized rows.
    pub line: Option<usize>,
    pub imputed: bool,
}

/// A weekly series for one (store, product) with its static attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSeries {
    pub key: ProductKey,
    pub category: String,
    pub private_label: bool,
    pub aisle: Aisle,
    pub shelf: Shelf,
    pub first_week: u32,
    pub transaction: Vec<Price>,
    pub regular: Vec<Price>,
    pub imputed: Vec<bool>,
}

impl ProductSeries {
    pub fn len(&self) -> usize {
        self.transaction.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transaction.is_empty()
    }

    pub fn week(&self, index: usize) -> u32 {
        self.first_week + index as u32
    }

    /// Average transaction price in major units.
    pub fn mean_transaction(&self) -> f64 {
        let sum: i64 = self.transaction.iter().map(|p| p.0).sum();
        sum as f64 / self.transaction.len() as f64 / 100.0
    }

    pub fn mean_regular(&self) -> f64 {
        let sum: i64 = self.regular.iter().map(|p| p.0).sum();
        sum as f64 / self.regular.len() as f64 / 100.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreInfo {
    pub format: Option<StoreFormat>,
    pub rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    TransactionAboveRegular,
    ImputedWeek,
}

/// A row-level warning with a reconstructible address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowWarning {
    pub store: String,
    pub product: String,
    pub week: u32,
    pub line: Option<usize>,
    pub kind: WarningKind,
}

/// Validated panel. Immutable after construction; products sorted by key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePanel {
    pub stores: BTreeMap<String, StoreInfo>,
    pub products: Vec<ProductSeries>,
    /// Calendar date of week 1.
    pub start_date: NaiveDate,
    pub warnings: Vec<RowWarning>,
}

/// Default calendar anchor: the first week of the Canadian-shaped sample.
pub fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2003, 7, 30).expect("valid date")
}

impl PricePanel {
    pub fn empty() -> Self {
        Self {
            stores: BTreeMap::new(),
            products: Vec::new(),
            start_date: default_start_date(),
            warnings: Vec::new(),
        }
    }

    pub fn n_observations(&self) -> usize {
        self.products.iter().map(ProductSeries::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn store_row_counts(&self) -> BTreeMap<String, usize> {
        self.stores.iter().map(|(s, i)| (s.clone(), i.rows)).collect()
    }

    pub fn store_format(&self, store: &str) -> Option<StoreFormat> {
        self.stores.get(store).and_then(|i| i.format)
    }

    pub fn products_in_store<'a>(&'a self, store: &'a str) -> impl Iterator<Item = &'a ProductSeries> + 'a {
        self.products.iter().filter(move |p| p.key.store == store)
    }

    /// Calendar date of the first day of a panel week.
    pub fn week_date(&self, week: u32) -> NaiveDate {
        self.start_date + Duration::days(7 * (i64::from(week) - 1))
    }

    /// Whether the panel week falls in January (by its first day).
    pub fn is_january(&self, week: u32) -> bool {
        use chrono::Datelike;
        self.week_date(week).month() == 1
    }

    /// Whether the seven days of the panel week contain December 25.
    pub fn is_christmas_week(&self, week: u32) -> bool {
        use chrono::Datelike;
        let d0 = self.week_date(week);
        (0..7).any(|k| {
            let d = d0 + Duration::days(k);
            d.month() == 12 && d.day() == 25
        })
    }

    /// Flattens back into observations, sorted by (store, product, week).
    pub fn to_rows(&self) -> Vec<PriceObservation> {
        let mut out = Vec::with_capacity(self.n_observations());
        for p in &self.products {
            let format = self.store_format(&p.key.store);
            for i in 0..p.len() {
                out.push(PriceObservation {
                    store: p.key.store.clone(),
                    product: p.key.product.clone(),
                    category: p.category.clone(),
                    week: p.week(i),
                    transaction_price: p.transaction[i],
                    regular_price: p.regular[i],
                    private_label: p.private_label,
                    aisle: p.aisle,
                    shelf: p.shelf,
                    format,
                    line: None,
                    imputed: p.imputed[i],
                });
            }
        }
        out
    }

    /// Builds a panel from parsed rows, enforcing the structural rules.
    pub fn from_rows(mut rows: Vec<PriceObservation>, opts: &LoadOptions) -> Result<Self, PanelError> {
        rows.sort_by(|a, b| {
            (&a.store, &a.product, a.week).cmp(&(&b.store, &b.product, b.week))
        });
        for w in rows.windows(2) {
            if w[0].store == w[1].store && w[0].product == w[1].product && w[0].week == w[1].week {
                return Err(PanelError::Duplicate {
                    line: w[1].line.unwrap_or(0),
                    store: w[1].store.clone(),
                    product: w[1].product.clone(),
                    week: w[1].week,
                });
            }
        }

        let mut stores: BTreeMap<String, StoreInfo> = BTreeMap::new();
        let mut products = Vec::new();
        let mut warnings = Vec::new();
        let mut store_ranges: BTreeMap<String, (u32, u32)> = BTreeMap::new();

        let mut start = 0;
        while start < rows.len() {
            let mut end = start + 1;
            while end < rows.len()
                && rows[end].store == rows[start].store
                && rows[end].product == rows[start].product
            {
                end += 1;
            }
            let group = &rows[start..end];
            let head = &group[0];
            let info = stores.entry(head.store.clone()).or_default();
            for r in group {
                if let Some(f) = r.format {
                    match info.format {
                        None => info.format = Some(f),
                        Some(g) if g != f => {
                            return Err(PanelError::Malformed {
                                line: r.line.unwrap_or(0),
                                message: format!("store `{}` labeled both {g} and {f}", r.store),
                            })
                        }
                        _ => {}
                    }
                }
            }

            let first_week = head.week;
            let last_week = group[group.len() - 1].week;
            let mut series = ProductSeries {
                key: ProductKey::new(head.store.clone(), head.product.clone()),
                category: head.category.clone(),
                private_label: head.private_label,
                aisle: head.aisle,
                shelf: head.shelf,
                first_week,
                transaction: Vec::with_capacity(group.len()),
                regular: Vec::with_capacity(group.len()),
                imputed: Vec::with_capacity(group.len()),
            };
            let mut expected = first_week;
            for r in group {
                while expected < r.week {
                    if !opts.fill_missing {
                        return Err(PanelError::WeekGap {
                            store: r.store.clone(),
                            product: r.product.clone(),
                            week: expected,
                        });
                    }
                    let last_t = *series.transaction.last().expect("first row present");
                    let last_r = *series.regular.last().expect("first row present");
                    series.transaction.push(last_t);
                    series.regular.push(last_r);
                    series.imputed.push(true);
                    warnings.push(RowWarning {
                        store: r.store.clone(),
                        product: r.product.clone(),
                        week: expected,
                        line: None,
                        kind: WarningKind::ImputedWeek,
                    });
                    expected += 1;
                }
                if r.transaction_price > r.regular_price {
                    warnings.push(RowWarning {
                        store: r.store.clone(),
                        product: r.product.clone(),
                        week: r.week,
                        line: r.line,
                        kind: WarningKind::TransactionAboveRegular,
                    });
                }
                series.transaction.push(r.transaction_price);
                series.regular.push(r.regular_price);
                series.imputed.push(r.imputed);
                expected += 1;
            }

            match store_ranges.get(&head.store) {
                None => {
                    store_ranges.insert(head.store.clone(), (first_week, last_week));
                }
                Some(&(a, b)) if (a, b) != (first_week, last_week) => {
                    return Err(PanelError::InconsistentWeeks {
                        store: head.store.clone(),
                        product: head.product.clone(),
                        expected: (a, b),
                        found: (first_week, last_week),
                    });
                }
                _ => {}
            }
            info.rows += series.len();
            products.push(series);
            start = end;
        }

        for (store, f) in &opts.store_formats {
            if let Some(info) = stores.get_mut(store) {
                info.format = Some(*f);
            }
        }

        Ok(Self {
            stores,
            products,
            start_date: opts.start_date,
            warnings,
        })
    }
}

/// Maps canonical column names to the names used in a particular file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub renames: BTreeMap<String, String>,
}

pub const CANONICAL_COLUMNS: [&str; 9] = [
    "store",
    "product",
    "category",
    "week",
    "price",
    "regular_price",
    "private_label",
    "aisle",
    "shelf",
];

impl ColumnMapping {
    pub fn source_name<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.renames.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub minor_units: bool,
    /// Carry the last price forward over missing weeks instead of failing.
    pub fill_missing: bool,
    pub columns: ColumnMapping,
    pub start_date: NaiveDate,
    pub store_formats: BTreeMap<String, StoreFormat>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            minor_units: false,
            fill_missing: false,
            columns: ColumnMapping::default(),
            start_date: default_start_date(),
            store_formats: BTreeMap::new(),
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "t" => Some(true),
        "0" | "false" | "no" | "n" | "f" | "" => Some(false),
        _ => None,
    }
}

/// Parses delimited text into observations. Row-content errors abort with the
/// offending line; structural issues (duplicates, gaps) are left to
/// [`PricePanel::from_rows`] or [`validate_rows`].
pub fn read_rows<R: Read>(source: R, opts: &LoadOptions) -> Result<Vec<PriceObservation>, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| PanelError::Malformed { line: 1, message: e.to_string() })?
        .clone();
    let index_of = |canonical: &str| -> Option<usize> {
        let name = opts.columns.source_name(canonical);
        headers.iter().position(|h| h == name)
    };
    let mut cols = [0usize; 9];
    for (slot, canonical) in cols.iter_mut().zip(CANONICAL_COLUMNS) {
        *slot = index_of(canonical)
            .ok_or_else(|| PanelError::MissingColumn(opts.columns.source_name(canonical).to_string()))?;
    }
    let format_col = index_of("format");

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| PanelError::Malformed { line, message: e.to_string() })?;
        let field = |idx: usize| -> Result<&str, PanelError> {
            record.get(idx).ok_or_else(|| PanelError::Malformed {
                line,
                message: format!("missing field {}", idx + 1),
            })
        };
        let malformed = |message: String| PanelError::Malformed { line, message };

        let week: u32 = field(cols[3])?
            .parse()
            .map_err(|_| malformed(format!("bad week `{}`", record.get(cols[3]).unwrap_or(""))))?;
        if week == 0 {
            return Err(malformed("week index must be >= 1".into()));
        }
        let parse_price = |raw: &str| -> Result<Price, PanelError> {
            let price = if opts.minor_units {
                raw.trim().parse::<i64>().ok().map(Price)
            } else {
                Price::parse_decimal(raw)
            };
            match price {
                Some(p) if p.0 > 0 => Ok(p),
                Some(_) => Err(PanelError::NonPositivePrice { line, value: raw.to_string() }),
                None if raw.trim().starts_with('-') => {
                    Err(PanelError::NonPositivePrice { line, value: raw.to_string() })
                }
                None => Err(PanelError::BadPrice { line, value: raw.to_string() }),
            }
        };
        let transaction_price = parse_price(field(cols[4])?)?;
        let regular_price = parse_price(field(cols[5])?)?;
        let private_label = parse_bool(field(cols[6])?)
            .ok_or_else(|| malformed(format!("bad private_label `{}`", record.get(cols[6]).unwrap_or(""))))?;
        let aisle = field(cols[7])?.parse().map_err(malformed)?;
        let shelf = field(cols[8])?.parse().map_err(malformed)?;
        let format = match format_col.and_then(|c| record.get(c)) {
            Some(s) if !s.trim().is_empty() => Some(s.parse().map_err(malformed)?),
            _ => None,
        };
        rows.push(PriceObservation {
            store: field(cols[0])?.to_string(),
            product: field(cols[1])?.to_string(),
            category: field(cols[2])?.to_string(),
            week,
            transaction_price,
            regular_price,
            private_label,
            aisle,
            shelf,
            format,
            line: Some(line),
            imputed: false,
        });
    }
    Ok(rows)
}

/// Reads and validates a panel.
pub fn load_panel<R: Read>(source: R, opts: &LoadOptions) -> Result<PricePanel, PanelError> {
    let rows = read_rows(source, opts)?;
    PricePanel::from_rows(rows, opts)
}

/// Writes the canonical form: canonical headers, comma separated, sorted,
/// decimal prices. A `format` column is appended when any store has one.
pub fn write_panel<W: Write>(panel: &PricePanel, sink: W) -> Result<(), PanelError> {
    let with_format = panel.stores.values().any(|s| s.format.is_some());
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    let io = |e: csv::Error| PanelError::Io(e.to_string());
    let mut header: Vec<&str> = CANONICAL_COLUMNS.to_vec();
    if with_format {
        header.push("format");
    }
    w.write_record(&header).map_err(io)?;
    for r in panel.to_rows() {
        let mut rec = vec![
            r.store,
            r.product,
            r.category,
            r.week.to_string(),
            r.transaction_price.to_string(),
            r.regular_price.to_string(),
            r.private_label.to_string(),
            r.aisle.to_string(),
            r.shelf.to_string(),
        ];
        if with_format {
            rec.push(r.format.map(|f| f.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| PanelError::Io(e.to_string()))?;
    Ok(())
}

/// Per-check counts plus the addressed warnings behind them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_rows: usize,
    pub n_stores: usize,
    pub n_products: usize,
    pub rows_per_store: BTreeMap<String, usize>,
    pub week_gaps: usize,
    pub duplicates: usize,
    pub transaction_above_regular: usize,
    /// Products whose transaction price never changes.
    pub zero_price_change_products: usize,
    /// Products where neither transaction nor regular price ever varies.
    pub zero_variance_products: usize,
    pub inconsistent_week_ranges: usize,
    pub warnings: Vec<RowWarning>,
    pub zero_price_change: Vec<ProductKey>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.week_gaps == 0
            && self.duplicates == 0
            && self.transaction_above_regular == 0
            && self.zero_price_change_products == 0
            && self.zero_variance_products == 0
            && self.inconsistent_week_ranges == 0
    }
}

/// Lenient structural scan: counts every issue instead of failing on the first.
pub fn validate_rows(rows: &[PriceObservation]) -> ValidationReport {
    let mut sorted: Vec<&PriceObservation> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.store, &a.product, a.week).cmp(&(&b.store, &b.product, b.week)));

    let mut report = ValidationReport { n_rows: rows.len(), ..Default::default() };
    let mut store_ranges: BTreeMap<&str, BTreeSet<(u32, u32)>> = BTreeMap::new();
    for r in rows {
        *report.rows_per_store.entry(r.store.clone()).or_default() += 1;
    }
    report.n_stores = report.rows_per_store.len();

    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len()
            && sorted[end].store == sorted[start].store
            && sorted[end].product == sorted[start].product
        {
            end += 1;
        }
        let group = &sorted[start..end];
        report.n_products += 1;
        let mut distinct_weeks: Vec<u32> = Vec::with_capacity(group.len());
        for (i, r) in group.iter().enumerate() {
            if i > 0 && group[i - 1].week == r.week {
                report.duplicates += 1;
                continue;
            }
            if let Some(&prev) = distinct_weeks.last() {
                report.week_gaps += (r.week - prev - 1) as usize;
            }
            distinct_weeks.push(r.week);
            if r.imputed {
                report.week_gaps += 1;
                report.warnings.push(RowWarning {
                    store: r.store.clone(),
                    product: r.product.clone(),
                    week: r.week,
                    line: r.line,
                    kind: WarningKind::ImputedWeek,
                });
            }
            if r.transaction_price > r.regular_price {
                report.transaction_above_regular += 1;
                report.warnings.push(RowWarning {
                    store: r.store.clone(),
                    product: r.product.clone(),
                    week: r.week,
                    line: r.line,
                    kind: WarningKind::TransactionAboveRegular,
                });
            }
        }
        let t0 = group[0].transaction_price;
        let r0 = group[0].regular_price;
        let no_change = group.iter().all(|r| r.transaction_price == t0);
        if no_change {
            report.zero_price_change_products += 1;
            report.zero_price_change.push(ProductKey::new(group[0].store.clone(), group[0].product.clone()));
            if group.iter().all(|r| r.regular_price == r0) {
                report.zero_variance_products += 1;
            }
        }
        store_ranges
            .entry(group[0].store.as_str())
            .or_default()
            .insert((group[0].week, group[group.len() - 1].week));
        start = end;
    }
    report.inconsistent_week_ranges = store_ranges.values().map(|s| s.len() - 1).sum();
    report
}

/// Validation report for an already loaded panel. Duplicates are impossible
/// here; imputed weeks count as gaps.
pub fn validate_panel(panel: &PricePanel) -> ValidationReport {
    validate_rows(&panel.to_rows())
}

fn ending(price: Price, n_digits: u32) -> String {
    let m = 10i64.pow(n_digits);
    format!("{:0width$}", price.0.rem_euclid(m), width = n_digits as usize)
}

fn shares<'a>(prices: impl Iterator<Item = &'a Price>, n_digits: u32) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for &p in prices {
        *counts.entry(ending(p, n_digits)).or_default() += 1;
        total += 1;
    }
    counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect()
}

/// Share of transaction prices by their last `n_digits` minor-unit digits.
pub fn price_ending_histogram(panel: &PricePanel, n_digits: u32) -> Result<BTreeMap<String, f64>, PanelError> {
    if !(1..=2).contains(&n_digits) {
        return Err(PanelError::InvalidArgument(format!("n_digits must be 1 or 2, got {n_digits}")));
    }
    if panel.n_observations() == 0 {
        return Err(PanelError::Empty);
    }
    Ok(shares(panel.products.iter().flat_map(|p| p.transaction.iter()), n_digits))
}

/// [`price_ending_histogram`] computed separately for each store.
pub fn price_ending_histogram_by_store(
    panel: &PricePanel,
    n_digits: u32,
) -> Result<BTreeMap<String, BTreeMap<String, f64>>, PanelError> {
    price_ending_histogram(panel, n_digits)?;
    Ok(panel
        .stores
        .keys()
        .map(|s| {
            let h = shares(panel.products_in_store(s).flat_map(|p| p.transaction.iter()), n_digits);
            (s.clone(), h)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "store,product,category,week,price,regular_price,private_label,aisle,shelf\n";

    fn csv_for(prices: &[(&str, &str, u32, &str, &str)]) -> String {
        let mut s = HEADER.to_string();
        for (store, product, week, p, r) in prices {
            s.push_str(&format!("{store},{product},dairy,{week},{p},{r},0,back,top\n"));
        }
        s
    }

    #[test]
    fn decimal_prices_parse_exactly() {
        assert_eq!(Price::parse_decimal("2.49"), Some(Price(249)));
        assert_eq!(Price::parse_decimal("2.5"), Some(Price(250)));
        assert_eq!(Price::parse_decimal("3"), Some(Price(300)));
        assert_eq!(Price::parse_decimal(".99"), Some(Price(99)));
        assert_eq!(Price::parse_decimal("2.499"), None);
        assert_eq!(Price::parse_decimal("abc"), None);
        assert_eq!(Price(1205).to_string(), "12.05");
    }

    #[test]
    fn header_only_gives_empty_panel() {
        let panel = load_panel(HEADER.as_bytes(), &LoadOptions::default()).unwrap();
        assert!(panel.stores.is_empty());
        assert_eq!(panel.n_observations(), 0);
    }

    #[test]
    fn transaction_above_regular_is_a_warning() {
        let src = csv_for(&[("s1", "a", 1, "1.99", "1.99"), ("s1", "a", 2, "2.49", "1.99")]);
        let panel = load_panel(src.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(panel.warnings.len(), 1);
        let w = &panel.warnings[0];
        assert_eq!((w.store.as_str(), w.product.as_str(), w.week, w.line), ("s1", "a", 2, Some(3)));
        assert_eq!(w.kind, WarningKind::TransactionAboveRegular);
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let src = csv_for(&[("s1", "a", 1, "1.99", "1.99"), ("s1", "a", 2, "1.999", "1.99")]);
        match load_panel(src.as_bytes(), &LoadOptions::default()) {
            Err(PanelError::BadPrice { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let src = csv_for(&[("s1", "a", 1, "0.00", "1.99")]);
        assert!(matches!(
            load_panel(src.as_bytes(), &LoadOptions::default()),
            Err(PanelError::NonPositivePrice { line: 2, .. })
        ));
        let src = csv_for(&[("s1", "a", 1, "1.00", "1.99"), ("s1", "a", 1, "1.00", "1.99")]);
        assert!(matches!(
            load_panel(src.as_bytes(), &LoadOptions::default()),
            Err(PanelError::Duplicate { week: 1, .. })
        ));
        let src = HEADER.replace("shelf", "level");
        assert!(matches!(
            load_panel(src.as_bytes(), &LoadOptions::default()),
            Err(PanelError::MissingColumn(c)) if c == "shelf"
        ));
    }

    #[test]
    fn gaps_fail_unless_filled() {
        let src = csv_for(&[("s1", "a", 1, "1.00", "1.00"), ("s1", "a", 3, "1.20", "1.20")]);
        assert!(matches!(
            load_panel(src.as_bytes(), &LoadOptions::default()),
            Err(PanelError::WeekGap { week: 2, .. })
        ));
        let opts = LoadOptions { fill_missing: true, ..Default::default() };
        let panel = load_panel(src.as_bytes(), &opts).unwrap();
        let p = &panel.products[0];
        assert_eq!(p.transaction, vec![Price(100), Price(100), Price(120)]);
        assert_eq!(p.imputed, vec![false, true, false]);
        assert_eq!(validate_panel(&panel).week_gaps, 1);
    }

    #[test]
    fn renamed_columns_tabs_and_minor_units() {
        let src = "shop\tproduct\tcategory\tweek\tprice\tregular_price\tprivate_label\taisle\tshelf\n\
                   s1\ta\tjuice\t1\t199\t249\ttrue\tfront\teye_level\n";
        let mut opts = LoadOptions { delimiter: b'\t', minor_units: true, ..Default::default() };
        opts.columns.renames.insert("store".into(), "shop".into());
        let panel = load_panel(src.as_bytes(), &opts).unwrap();
        let p = &panel.products[0];
        assert_eq!(p.transaction[0], Price(199));
        assert_eq!(p.regular[0], Price(249));
        assert!(p.private_label);
        assert_eq!(p.shelf, Shelf::EyeLevel);
    }

    #[test]
    fn validation_counts() {
        let mut rows = Vec::new();
        for w in 1..=52u32 {
            rows.push(("s1", "flat", w, "2.00", "2.00"));
            let p = if w > 10 { "2.20" } else { "2.00" };
            rows.push(("s1", "moves", w, p, p));
        }
        let src = csv_for(&rows);
        let parsed = read_rows(src.as_bytes(), &LoadOptions::default()).unwrap();
        let report = validate_rows(&parsed);
        assert_eq!(report.zero_price_change_products, 1);
        assert_eq!(report.zero_price_change[0], ProductKey::new("s1", "flat"));
        assert_eq!(report.duplicates, 0);

        let mut dup = parsed.clone();
        dup.push(parsed[5].clone());
        assert_eq!(validate_rows(&dup).duplicates, 1);
    }

    #[test]
    fn clean_panel_reports_zero() {
        let src = csv_for(&[("s1", "a", 1, "1.00", "1.00"), ("s1", "a", 2, "1.20", "1.20")]);
        let panel = load_panel(src.as_bytes(), &LoadOptions::default()).unwrap();
        assert!(validate_panel(&panel).is_clean());
    }

    #[test]
    fn ending_histograms() {
        let src = csv_for(&[
            ("s1", "a", 1, "1.99", "1.99"),
            ("s1", "b", 1, "2.99", "2.99"),
            ("s1", "c", 1, "3.47", "3.47"),
        ]);
        let panel = load_panel(src.as_bytes(), &LoadOptions::default()).unwrap();
        let h = price_ending_histogram(&panel, 1).unwrap();
        assert_eq!(h.len(), 2);
        assert!((h["9"] - 2.0 / 3.0).abs() < 1e-15);
        assert!((h["7"] - 1.0 / 3.0).abs() < 1e-15);

        let src = csv_for(&[("s1", "a", 1, "1.99", "1.99"), ("s1", "b", 1, "2.99", "2.99")]);
        let panel = load_panel(src.as_bytes(), &LoadOptions::default()).unwrap();
        let h = price_ending_histogram(&panel, 2).unwrap();
        assert_eq!(h.get("99"), Some(&1.0));
        assert!(matches!(price_ending_histogram(&PricePanel::empty(), 1), Err(PanelError::Empty)));
    }

    #[test]
    fn calendar_dummies() {
        let panel = PricePanel::empty();
        // 2003-07-30 + 21 weeks = 2003-12-24, a week containing Dec 25.
        assert!(panel.is_christmas_week(22));
        assert!(!panel.is_christmas_week(21));
        assert!(!panel.is_january(22));
        // Week 23 starts 2003-12-31; weeks 24..=27 start in January 2004.
        assert!(!panel.is_january(23));
        assert!((24..=27).all(|w| panel.is_january(w)));
        assert!(!panel.is_january(28));
    }
}
