//! Bottom-level feature matrix: identifiers, price-derived, event/SNAP and
//! calendar features. Nothing here reads sales values.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{is_weekend, PanelDataset, SNAP_STATES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    /// Raw categorical labels; an empty label means "absent".
    Labels(Vec<Arc<str>>),
    /// Encoded categorical codes.
    Codes(Vec<u32>),
}

impl ColumnData {
    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            _ => ColumnKind::Categorical,
        }
    }

    fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Labels(v) => v.len(),
            ColumnData::Codes(v) => v.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Labels(v) => ColumnData::Labels(rows.iter().map(|&r| v[r].clone()).collect()),
            ColumnData::Codes(v) => ColumnData::Codes(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumn {
    pub name: String,
    pub data: ColumnData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub series: usize,
    pub day: u32,
}

/// Column-oriented feature table, one row per (bottom series, day).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<RowKey>,
    columns: Vec<FeatureColumn>,
}

pub const CATEGORICAL_FEATURES: [&str; 7] = [
    "item_id",
    "dept_id",
    "cat_id",
    "event_name_1",
    "event_type_1",
    "event_name_2",
    "event_type_2",
];

/// Feature names in column order.
pub const FEATURE_NAMES: [&str; 29] = [
    "item_id",
    "dept_id",
    "cat_id",
    "sell_price",
    "event_name_1",
    "event_type_1",
    "event_name_2",
    "event_type_2",
    "snap_CA",
    "snap_TX",
    "snap_WI",
    "release",
    "price_max",
    "price_min",
    "price_std",
    "price_mean",
    "price_norm",
    "price_nunique",
    "item_nunique",
    "price_diff_w",
    "price_diff_m",
    "price_diff_y",
    "tm_d",
    "tm_w",
    "tm_m",
    "tm_y",
    "tm_wm",
    "tm_dw",
    "tm_w_end",
];

const N_NUMERIC: usize = FEATURE_NAMES.len() - CATEGORICAL_FEATURES.len();

impl FeatureMatrix {
    pub fn new(rows: Vec<RowKey>, columns: Vec<FeatureColumn>) -> Result<Self> {
        if let Some(c) = columns.iter().find(|c| c.data.len() != rows.len()) {
            return Err(Error::Dimension(format!(
                "column `{}` has {} values for {} rows",
                c.name,
                c.data.len(),
                rows.len()
            )));
        }
        Ok(Self { rows, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn rows(&self) -> &[RowKey] {
        &self.rows
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_kinds(&self) -> Vec<ColumnKind> {
        self.columns.iter().map(|c| c.data.kind()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.data)
    }

    pub fn numeric(&self, name: &str) -> Option<&[f64]> {
        match self.column(name)? {
            ColumnData::Numeric(v) => Some(v),
            _ => None,
        }
    }

    /// True once every categorical column carries codes.
    pub fn is_encoded(&self) -> bool {
        self.columns.iter().all(|c| !matches!(c.data, ColumnData::Labels(_)))
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| FeatureColumn {
                    name: c.name.clone(),
                    data: c.data.select(indices),
                })
                .collect(),
        }
    }

    /// Sales targets aligned with the rows; every row day must be a training day.
    pub fn targets(&self, ds: &PanelDataset) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                if r.day == 0 || r.day as usize > ds.sales.n_times() {
                    Err(Error::Data(format!("day {} has no observed sales", r.day)))
                } else {
                    Ok(ds.sales.get(r.series, r.day as usize - 1))
                }
            })
            .collect()
    }

    /// Writes the matrix as CSV plus a JSON schema sidecar.
    pub fn export(&self, csv_path: &Path, schema_path: &Path, books: Option<&CodeBooks>) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        let mut header = vec!["series".to_string(), "day".to_string()];
        header.extend(self.column_names());
        w.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.series.to_string(), r.day.to_string()];
            for c in &self.columns {
                rec.push(match &c.data {
                    ColumnData::Numeric(v) => format!("{}", v[i]),
                    ColumnData::Labels(v) => v[i].to_string(),
                    ColumnData::Codes(v) => v[i].to_string(),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        let schema = FeatureSchema {
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSchema {
                    name: c.name.clone(),
                    kind: c.data.kind(),
                })
                .collect(),
            code_books: books.cloned(),
        };
        let mut f = std::fs::File::create(schema_path)?;
        f.write_all(serde_json::to_string_pretty(&schema)?.as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ColumnSchema {
    name: String,
    kind: ColumnKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureSchema {
    columns: Vec<ColumnSchema>,
    code_books: Option<CodeBooks>,
}

#[derive(Default)]
struct PriceStats {
    max: f64,
    min: f64,
    std: f64,
    mean: f64,
    nunique: f64,
}

fn price_stats(prices: &[f64]) -> PriceStats {
    if prices.is_empty() {
        return PriceStats::default();
    }
    let n = prices.len() as f64;
    let mean = prices.iter().sum::<f64>() / n;
    let std = if prices.len() > 1 {
        (prices.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let distinct: BTreeSet<u64> = prices.iter().map(|p| p.to_bits()).collect();
    PriceStats {
        max: prices.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: prices.iter().copied().fold(f64::INFINITY, f64::min),
        std,
        mean,
        nunique: distinct.len() as f64,
    }
}

/// Builds features for every bottom series over the 1-based day `window`.
pub fn build_features(ds: &PanelDataset, window: RangeInclusive<u32>) -> Result<FeatureMatrix> {
    let all: Vec<usize> = (0..ds.num_series()).collect();
    build_features_for(ds, window, &all)
}

/// Builds features for a subset of bottom series, in the given order.
///
/// Price max/min/std/mean/nunique come from training-span weeks only (all
/// observed weeks if the series has none there). Rows without a sell price,
/// which covers every day before release, are left out.
pub fn build_features_for(ds: &PanelDataset, window: RangeInclusive<u32>, series: &[usize]) -> Result<FeatureMatrix> {
    let (start, end) = (*window.start(), *window.end());
    if start == 0 || start > end || end as usize > ds.calendar.len() {
        return Err(Error::InvalidArgument(format!(
            "feature window {start}..={end} outside calendar 1..={}",
            ds.calendar.len()
        )));
    }
    let train_weeks: BTreeSet<u32> = ds.calendar[..ds.train_end].iter().map(|c| c.wm_yr_wk).collect();
    let mut week_position: HashMap<u32, usize> = HashMap::new();
    for c in &ds.calendar {
        let next = week_position.len();
        week_position.entry(c.wm_yr_wk).or_insert(next);
    }
    let first_year = ds.calendar[0].year;

    // Distinct items per (store, price) over the whole price table.
    let mut items_at_price: HashMap<(&str, u64), BTreeSet<&str>> = HashMap::new();
    for (store, item, _, price) in ds.prices.iter() {
        items_at_price.entry((store, price.to_bits())).or_default().insert(item);
    }

    let interned: HashMap<&str, Arc<str>> = ds
        .calendar
        .iter()
        .flat_map(|c| [&c.event_name_1, &c.event_type_1, &c.event_name_2, &c.event_type_2])
        .chain(ds.bottom.iter().flat_map(|b| [&b.item, &b.dept, &b.category]))
        .map(|s| (s.as_str(), Arc::from(s.as_str())))
        .collect();

    let per_series: Vec<Option<(Vec<RowKey>, Vec<[Arc<str>; 7]>, Vec<[f64; N_NUMERIC]>)>> = series
        .par_iter()
        .map(|&s| {
            let b = &ds.bottom[s];
            let weekly = match ds.prices.weekly(&b.store, &b.item) {
                Some(w) if !w.is_empty() => w,
                _ => return None,
            };
            let release_week = *weekly.keys().next().expect("non-empty");
            let release = week_position.get(&release_week).copied().unwrap_or(0) as f64;
            let train_prices: Vec<f64> = weekly
                .iter()
                .filter(|(w, _)| train_weeks.contains(w))
                .map(|(_, &p)| p)
                .collect();
            let stats = if train_prices.is_empty() {
                price_stats(&weekly.values().copied().collect::<Vec<_>>())
            } else {
                price_stats(&train_prices)
            };
            let mut diff_w: HashMap<u32, f64> = HashMap::new();
            let mut prev: Option<f64> = None;
            for (&w, &p) in weekly {
                diff_w.insert(w, prev.map_or(0.0, |q| p - q));
                prev = Some(p);
            }
            let mut month_acc: HashMap<(i32, u32), (f64, usize)> = HashMap::new();
            let mut year_acc: HashMap<i32, (f64, usize)> = HashMap::new();
            for c in &ds.calendar {
                if let Some(&p) = weekly.get(&c.wm_yr_wk) {
                    let m = month_acc.entry((c.year, c.month)).or_insert((0.0, 0));
                    m.0 += p;
                    m.1 += 1;
                    let y = year_acc.entry(c.year).or_insert((0.0, 0));
                    y.0 += p;
                    y.1 += 1;
                }
            }
            let mut keys = Vec::new();
            let mut cats = Vec::new();
            let mut nums = Vec::new();
            for d in start..=end {
                let c = &ds.calendar[d as usize - 1];
                let Some(&price) = weekly.get(&c.wm_yr_wk) else {
                    continue;
                };
                let (msum, mcount) = month_acc[&(c.year, c.month)];
                let (ysum, ycount) = year_acc[&c.year];
                let item_nunique = items_at_price
                    .get(&(b.store.as_str(), price.to_bits()))
                    .map_or(1, |s| s.len()) as f64;
                let snap = |st: &str| f64::from(u8::from(c.snap_for_state(st)));
                keys.push(RowKey { series: s, day: d });
                cats.push([
                    interned[b.item.as_str()].clone(),
                    interned[b.dept.as_str()].clone(),
                    interned[b.category.as_str()].clone(),
                    interned[c.event_name_1.as_str()].clone(),
                    interned[c.event_type_1.as_str()].clone(),
                    interned[c.event_name_2.as_str()].clone(),
                    interned[c.event_type_2.as_str()].clone(),
                ]);
                let dom = chrono::Datelike::day(&c.date);
                nums.push([
                    price,
                    snap(SNAP_STATES[0]),
                    snap(SNAP_STATES[1]),
                    snap(SNAP_STATES[2]),
                    release,
                    stats.max,
                    stats.min,
                    stats.std,
                    stats.mean,
                    price / stats.max,
                    stats.nunique,
                    item_nunique,
                    diff_w[&c.wm_yr_wk],
                    price - msum / mcount as f64,
                    price - ysum / ycount as f64,
                    dom as f64,
                    c.week_of_year() as f64,
                    c.month as f64,
                    (c.year - first_year) as f64,
                    dom.div_ceil(7) as f64,
                    c.day_of_week() as f64,
                    f64::from(u8::from(is_weekend(c))),
                ]);
            }
            if keys.is_empty() {
                None
            } else {
                Some((keys, cats, nums))
            }
        })
        .collect();

    let mut rows = Vec::new();
    let mut cat_cols: Vec<Vec<Arc<str>>> = vec![Vec::new(); CATEGORICAL_FEATURES.len()];
    let mut num_cols: Vec<Vec<f64>> = vec![Vec::new(); N_NUMERIC];
    for (&s, part) in series.iter().zip(per_series) {
        let Some((keys, cats, nums)) = part else {
            log::warn!(
                "series {} has no sell price in days {start}..={end}; excluded from features",
                ds.bottom[s].id
            );
            continue;
        };
        rows.extend(keys);
        for r in cats {
            for (col, v) in cat_cols.iter_mut().zip(r) {
                col.push(v);
            }
        }
        for r in nums {
            for (col, v) in num_cols.iter_mut().zip(r) {
                col.push(v);
            }
        }
    }
    let mut cat_iter = cat_cols.into_iter();
    let mut num_iter = num_cols.into_iter();
    let columns = FEATURE_NAMES
        .iter()
        .map(|&name| {
            let data = if CATEGORICAL_FEATURES.contains(&name) {
                ColumnData::Labels(cat_iter.next().expect("categorical column"))
            } else {
                ColumnData::Numeric(num_iter.next().expect("numeric column"))
            };
            FeatureColumn {
                name: name.to_string(),
                data,
            }
        })
        .collect();
    FeatureMatrix::new(rows, columns)
}

/// Lexicographic label → code tables for each categorical column.
///
/// Labels absent from a book map to the reserved unknown code, which equals
/// the book's length.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeBooks {
    pub books: BTreeMap<String, Vec<String>>,
}

impl CodeBooks {
    pub fn fit(fm: &FeatureMatrix) -> Self {
        let books = fm
            .columns
            .iter()
            .filter_map(|c| match &c.data {
                ColumnData::Labels(v) => {
                    let set: BTreeSet<&str> = v.iter().map(|s| &**s).collect();
                    Some((c.name.clone(), set.into_iter().map(str::to_string).collect()))
                }
                _ => None,
            })
            .collect();
        Self { books }
    }

    pub fn code(&self, column: &str, label: &str) -> Option<u32> {
        let book = self.books.get(column)?;
        Some(match book.binary_search_by(|b| b.as_str().cmp(label)) {
            Ok(i) => i as u32,
            Err(_) => book.len() as u32,
        })
    }

    pub fn unknown_code(&self, column: &str) -> Option<u32> {
        self.books.get(column).map(|b| b.len() as u32)
    }

    /// Hex SHA-256 of the serialized books; models store it to detect mismatches.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("code books serialize");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces label columns with codes from these books.
    pub fn apply(&self, fm: &FeatureMatrix) -> Result<FeatureMatrix> {
        let columns = fm
            .columns
            .iter()
            .map(|c| {
                let data = match &c.data {
                    ColumnData::Labels(v) => {
                        let book = self
                            .books
                            .get(&c.name)
                            .ok_or_else(|| Error::SchemaMismatch(vec![c.name.clone()]))?;
                        let lookup: HashMap<&str, u32> =
                            book.iter().enumerate().map(|(i, s)| (s.as_str(), i as u32)).collect();
                        let unknown = book.len() as u32;
                        ColumnData::Codes(v.iter().map(|s| lookup.get(&**s).copied().unwrap_or(unknown)).collect())
                    }
                    other => other.clone(),
                };
                Ok(FeatureColumn {
                    name: c.name.clone(),
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureMatrix::new(fm.rows.clone(), columns)
    }
}

/// Fits code books on `fm` and encodes it.
pub fn encode_categoricals(fm: &FeatureMatrix) -> Result<(FeatureMatrix, CodeBooks)> {
    let books = CodeBooks::fit(fm);
    let encoded = books.apply(fm)?;
    Ok((encoded, books))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::generate_synthetic;

    fn value(fm: &FeatureMatrix, name: &str, row: usize) -> f64 {
        fm.numeric(name).unwrap()[row]
    }

    #[test]
    fn weekend_and_weekday_indicators() {
        let ds = generate_synthetic(1, 3, 1, 100, 0.5).unwrap();
        let fm = build_features(&ds, 1..=14).unwrap();
        for (i, r) in fm.rows().iter().enumerate() {
            let c = ds.day(r.day).unwrap();
            let expected = match c.weekday.as_str() {
                "Saturday" | "Sunday" => 1.0,
                _ => 0.0,
            };
            assert_eq!(value(&fm, "tm_w_end", i), expected);
            if c.weekday == "Wednesday" {
                assert_eq!(value(&fm, "tm_dw", i), 2.0);
                assert_eq!(value(&fm, "tm_w_end", i), 0.0);
            }
        }
    }

    #[test]
    fn price_norm_is_price_over_max() {
        let mut ds = generate_synthetic(2, 1, 1, 70, 0.5).unwrap();
        let b = ds.bottom[0].clone();
        let weeks: Vec<u32> = ds.calendar.iter().map(|c| c.wm_yr_wk).collect();
        let mut prices = crate::dataio::PriceTable::default();
        for (i, w) in weeks.iter().enumerate() {
            prices.insert(&b.store, &b.item, *w, if i < 7 { 5.0 } else { 4.0 });
        }
        ds.prices = prices;
        let fm = build_features(&ds, 8..=8).unwrap();
        assert_eq!(value(&fm, "sell_price", 0), 4.0);
        assert_eq!(value(&fm, "price_max", 0), 5.0);
        assert!((value(&fm, "price_norm", 0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn price_step_fixture() {
        // Weeks 1-10 at 3.0, weeks 11-20 at 3.5.
        let mut ds = generate_synthetic(3, 1, 1, 140, 0.5).unwrap();
        let b = ds.bottom[0].clone();
        let mut weeks: Vec<u32> = ds.calendar.iter().map(|c| c.wm_yr_wk).collect();
        weeks.dedup();
        let mut prices = crate::dataio::PriceTable::default();
        for (i, w) in weeks.iter().enumerate().take(20) {
            prices.insert(&b.store, &b.item, *w, if i < 10 { 3.0 } else { 3.5 });
        }
        ds.prices = prices;
        let fm = build_features(&ds, 1..=140).unwrap();
        assert_eq!(fm.n_rows(), 140);
        assert_eq!(value(&fm, "price_nunique", 0), 2.0);
        let week11_first_day = 70;
        assert!((value(&fm, "price_diff_w", week11_first_day) - 0.5).abs() < 1e-12);
        assert_eq!(value(&fm, "price_diff_w", week11_first_day + 1), 0.5);
        assert_eq!(value(&fm, "price_diff_w", 0), 0.0);
        assert_eq!(value(&fm, "price_diff_w", 7), 0.0);
    }

    #[test]
    fn rows_before_release_are_excluded() {
        let ds = generate_synthetic(5, 12, 2, 120, 0.4).unwrap();
        let fm = build_features(&ds, 1..=120).unwrap();
        for r in fm.rows() {
            let b = &ds.bottom[r.series];
            let first = *ds.prices.weekly(&b.store, &b.item).unwrap().keys().next().unwrap();
            assert!(ds.day(r.day).unwrap().wm_yr_wk >= first);
        }
        assert!(fm.n_rows() < 12 * 2 * 120, "some items are released late");
    }

    #[test]
    fn series_without_prices_is_dropped() {
        let mut ds = generate_synthetic(6, 2, 1, 70, 0.4).unwrap();
        let keep = ds.bottom[1].clone();
        let mut prices = crate::dataio::PriceTable::default();
        for (s, i, w, p) in ds.prices.iter() {
            if i == keep.item {
                prices.insert(s, i, w, p);
            }
        }
        ds.prices = prices;
        let fm = build_features(&ds, 1..=70).unwrap();
        assert!(fm.rows().iter().all(|r| r.series == 1));
    }

    #[test]
    fn window_beyond_calendar_is_an_error() {
        let ds = generate_synthetic(1, 2, 1, 70, 0.4).unwrap();
        assert!(build_features(&ds, 1..=(ds.calendar.len() as u32 + 1)).is_err());
        assert!(build_features(&ds, 0..=3).is_err());
    }

    #[test]
    fn categorical_codes_are_lexicographic_with_unknown() {
        let ds = generate_synthetic(1, 6, 1, 70, 0.4).unwrap();
        let fm = build_features(&ds, 1..=70).unwrap();
        let (enc, books) = encode_categoricals(&fm).unwrap();
        assert_eq!(books.books["cat_id"], vec!["FOODS", "HOBBIES", "HOUSEHOLD"]);
        assert_eq!(books.code("cat_id", "HOBBIES"), Some(1));
        assert_eq!(books.code("event_name_1", "NotAnEvent"), books.unknown_code("event_name_1"));
        assert!(enc.is_encoded());
        let (again, books2) = encode_categoricals(&fm).unwrap();
        assert_eq!(enc, again);
        assert_eq!(books.fingerprint(), books2.fingerprint());
    }

    #[test]
    fn export_writes_csv_and_schema() {
        let ds = generate_synthetic(1, 2, 1, 70, 0.4).unwrap();
        let fm = build_features(&ds, 60..=62).unwrap();
        let (enc, books) = encode_categoricals(&fm).unwrap();
        let dir = tempfile::tempdir().unwrap();
        enc.export(&dir.path().join("f.csv"), &dir.path().join("f.json"), Some(&books)).unwrap();
        let text = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
        assert!(text.starts_with("series,day,item_id,dept_id,cat_id,sell_price"));
        let schema: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("f.json")).unwrap()).unwrap();
        assert_eq!(schema["columns"][0]["kind"], "categorical");
        assert_eq!(schema["columns"][3]["kind"], "numeric");
    }
}
