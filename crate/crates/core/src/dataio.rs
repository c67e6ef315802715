//! Panel ingestion in the public retail-competition CSV layout, synthetic
//! desk-scale panels, and the validation/evaluation frame split.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{build_m5_hierarchy, CatalogEntry, HierarchySpec, SeriesMatrix};

/// Days held out per frame.
pub const HORIZON: usize = 28;

pub const SALES_ID_COLUMNS: [&str; 6] = ["id", "item_id", "dept_id", "cat_id", "store_id", "state_id"];
pub const CALENDAR_COLUMNS: [&str; 14] = [
    "date",
    "wm_yr_wk",
    "weekday",
    "wday",
    "month",
    "year",
    "d",
    "event_name_1",
    "event_type_1",
    "event_name_2",
    "event_type_2",
    "snap_CA",
    "snap_TX",
    "snap_WI",
];
pub const PRICE_COLUMNS: [&str; 4] = ["store_id", "item_id", "wm_yr_wk", "sell_price"];

/// States carrying a SNAP flag column in the calendar.
pub const SNAP_STATES: [&str; 3] = ["CA", "TX", "WI"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottomInfo {
    pub id: String,
    pub item: String,
    pub dept: String,
    pub category: String,
    pub store: String,
    pub state: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarDay {
    pub date: NaiveDate,
    pub wm_yr_wk: u32,
    pub weekday: String,
    /// 1 = Saturday … 7 = Friday, as in the source calendar.
    pub wday: u8,
    pub month: u32,
    pub year: i32,
    /// 1-based day number (`d_<n>`).
    pub d: u32,
    pub event_name_1: String,
    pub event_type_1: String,
    pub event_name_2: String,
    pub event_type_2: String,
    /// SNAP flags for CA, TX, WI.
    pub snap: [bool; 3],
}

impl CalendarDay {
    pub fn week_of_year(&self) -> u32 {
        self.date.iso_week().week()
    }

    /// 0 = Monday … 6 = Sunday.
    pub fn day_of_week(&self) -> u32 {
        self.date.weekday().num_days_from_monday()
    }

    pub fn snap_for_state(&self, state: &str) -> bool {
        SNAP_STATES
            .iter()
            .position(|s| *s == state)
            .map(|i| self.snap[i])
            .unwrap_or(false)
    }
}

/// Sparse weekly sell prices keyed by (store, item).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    table: BTreeMap<(String, String), BTreeMap<u32, f64>>,
}

impl PriceTable {
    pub fn insert(&mut self, store: &str, item: &str, week: u32, price: f64) {
        self.table
            .entry((store.to_string(), item.to_string()))
            .or_default()
            .insert(week, price);
    }

    pub fn get(&self, store: &str, item: &str, week: u32) -> Option<f64> {
        self.weekly(store, item).and_then(|w| w.get(&week).copied())
    }

    /// Weekly prices of one item in one store, in week order.
    pub fn weekly(&self, store: &str, item: &str) -> Option<&BTreeMap<u32, f64>> {
        self.table.get(&(store.to_string(), item.to_string()))
    }

    pub fn len(&self) -> usize {
        self.table.values().map(|w| w.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32, f64)> + '_ {
        self.table
            .iter()
            .flat_map(|((s, i), w)| w.iter().map(move |(&wk, &p)| (s.as_str(), i.as_str(), wk, p)))
    }
}

/// Daily bottom-level sales with calendar, prices and hierarchy.
///
/// `sales` covers days `1..=train_end`; the calendar covers at least
/// `train_end + horizon` days.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub bottom: Vec<BottomInfo>,
    pub sales: SeriesMatrix<f64>,
    pub calendar: Vec<CalendarDay>,
    pub prices: PriceTable,
    pub hierarchy: HierarchySpec,
    pub train_end: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Validation,
    Evaluation,
}

impl std::str::FromStr for Frame {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" => Ok(Frame::Validation),
            "evaluation" => Ok(Frame::Evaluation),
            other => Err(Error::Config(format!("frame must be validation or evaluation, got `{other}`"))),
        }
    }
}

impl PanelDataset {
    pub fn num_series(&self) -> usize {
        self.bottom.len()
    }

    /// Calendar record for 1-based day `d`.
    pub fn day(&self, d: u32) -> Option<&CalendarDay> {
        (d as usize).checked_sub(1).and_then(|i| self.calendar.get(i))
    }

    pub fn price_on(&self, series: usize, d: u32) -> Option<f64> {
        let b = &self.bottom[series];
        let day = self.day(d)?;
        self.prices.get(&b.store, &b.item, day.wm_yr_wk)
    }

    /// Distinct stores in first-seen bottom order.
    pub fn stores(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for b in &self.bottom {
            if !out.contains(&b.store) {
                out.push(b.store.clone());
            }
        }
        out
    }

    pub fn series_of_store(&self, store: &str) -> Vec<usize> {
        (0..self.bottom.len()).filter(|&i| self.bottom[i].store == store).collect()
    }

    /// Horizon days `train_end+1 ..= train_end+horizon`.
    pub fn horizon_days(&self) -> Vec<u32> {
        (self.train_end + 1..=self.train_end + self.horizon).map(|d| d as u32).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.sales.n_series() != self.bottom.len() || self.hierarchy.num_bottom() != self.bottom.len() {
            return Err(Error::Data("sales rows, bottom records and hierarchy disagree".into()));
        }
        if self.sales.n_times() != self.train_end {
            return Err(Error::Data(format!(
                "sales cover {} days, train_end is {}",
                self.sales.n_times(),
                self.train_end
            )));
        }
        if self.calendar.len() < self.train_end + self.horizon {
            return Err(Error::Data(format!(
                "calendar covers {} days, need {} (train {} + horizon {})",
                self.calendar.len(),
                self.train_end + self.horizon,
                self.train_end,
                self.horizon
            )));
        }
        Ok(())
    }
}

fn header_index(headers: &csv::StringRecord, file: &str, cols: &[&str]) -> Result<Vec<usize>> {
    cols.iter()
        .map(|c| {
            headers.iter().position(|h| h == *c).ok_or_else(|| Error::MissingColumn {
                file: file.to_string(),
                column: (*c).to_string(),
            })
        })
        .collect()
}

fn parse_err(file: &str, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

/// Loads the wide sales table, calendar and price table.
///
/// All sales days are training days; the calendar must extend `HORIZON`
/// days beyond them.
pub fn load_m5(sales_csv: &Path, calendar_csv: &Path, prices_csv: &Path) -> Result<PanelDataset> {
    let calendar = read_calendar(open(calendar_csv)?, &calendar_csv.display().to_string())?;
    let prices = read_prices(open(prices_csv)?, &prices_csv.display().to_string())?;
    let (bottom, days, rows) = read_sales(open(sales_csv)?, &sales_csv.display().to_string())?;
    assemble(bottom, days, rows, calendar, prices)
}

fn assemble(
    bottom: Vec<BottomInfo>,
    days: usize,
    rows: Vec<Vec<f64>>,
    calendar: Vec<CalendarDay>,
    prices: PriceTable,
) -> Result<PanelDataset> {
    if calendar.len() < days + HORIZON {
        return Err(Error::Data(format!(
            "calendar truncated: {} days, sales need {} + {HORIZON}",
            calendar.len(),
            days
        )));
    }
    let catalog: Vec<CatalogEntry> = bottom
        .iter()
        .map(|b| CatalogEntry {
            item: b.item.clone(),
            dept: b.dept.clone(),
            category: b.category.clone(),
            store: b.store.clone(),
            state: b.state.clone(),
        })
        .collect();
    let hierarchy = build_m5_hierarchy(&catalog)?;
    let position: HashMap<(&str, &str), usize> = bottom
        .iter()
        .enumerate()
        .map(|(i, b)| ((b.item.as_str(), b.store.as_str()), i))
        .collect();
    let order: Vec<usize> = hierarchy
        .bottom_keys()
        .iter()
        .map(|k| position[&(k.item.as_str(), k.store.as_str())])
        .collect();
    let bottom: Vec<BottomInfo> = order.iter().map(|&i| bottom[i].clone()).collect();
    let ids = bottom.iter().map(|b| b.id.clone()).collect();
    let values = order.iter().flat_map(|&i| rows[i].iter().copied()).collect();
    let sales = SeriesMatrix::new(values, (1..=days as u32).collect(), ids)?;
    let ds = PanelDataset {
        bottom,
        sales,
        calendar,
        prices,
        hierarchy,
        train_end: days,
        horizon: HORIZON,
    };
    ds.validate()?;
    Ok(ds)
}

fn read_sales<R: Read>(reader: R, file: &str) -> Result<(Vec<BottomInfo>, usize, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx = header_index(&headers, file, &SALES_ID_COLUMNS)?;
    let mut day_cols = Vec::new();
    for d in 1.. {
        match headers.iter().position(|h| h == format!("d_{d}")) {
            Some(p) => day_cols.push(p),
            None => break,
        }
    }
    if day_cols.is_empty() {
        return Err(Error::MissingColumn {
            file: file.to_string(),
            column: "d_1".into(),
        });
    }
    let mut bottom = Vec::new();
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("").to_string();
        bottom.push(BottomInfo {
            id: field(0),
            item: field(1),
            dept: field(2),
            category: field(3),
            store: field(4),
            state: field(5),
        });
        let mut row = Vec::with_capacity(day_cols.len());
        for (d, &c) in day_cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            let v: u64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(file, r + 1, &format!("d_{}", d + 1), format!("`{cell}` is not a non-negative integer")))?;
            row.push(v as f64);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{file}: no sales rows")));
    }
    Ok((bottom, day_cols.len(), rows))
}

fn read_calendar<R: Read>(reader: R, file: &str) -> Result<Vec<CalendarDay>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx = header_index(&headers, file, &CALENDAR_COLUMNS)?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(idx[i]).unwrap_or("");
        fn num<T: std::str::FromStr>(file: &str, row: usize, col: &str, s: &str) -> Result<T> {
            s.trim()
                .parse()
                .map_err(|_| parse_err(file, row, col, format!("cannot parse `{s}`")))
        }
        let row = r + 1;
        let date = NaiveDate::parse_from_str(get(0), "%Y-%m-%d")
            .map_err(|e| parse_err(file, row, "date", e.to_string()))?;
        let d_field = get(6);
        let d: u32 = d_field
            .strip_prefix("d_")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(file, row, "d", format!("expected d_<n>, got `{d_field}`")))?;
        if d as usize != out.len() + 1 {
            return Err(parse_err(file, row, "d", format!("expected d_{}, got `{d_field}`", out.len() + 1)));
        }
        let flag = |i: usize, col: &str| -> Result<bool> {
            match get(i).trim() {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(parse_err(file, row, col, format!("expected 0/1, got `{other}`"))),
            }
        };
        out.push(CalendarDay {
            date,
            wm_yr_wk: num(file, row, "wm_yr_wk", get(1))?,
            weekday: get(2).to_string(),
            wday: num(file, row, "wday", get(3))?,
            month: num(file, row, "month", get(4))?,
            year: num(file, row, "year", get(5))?,
            d,
            event_name_1: get(7).to_string(),
            event_type_1: get(8).to_string(),
            event_name_2: get(9).to_string(),
            event_type_2: get(10).to_string(),
            snap: [flag(11, "snap_CA")?, flag(12, "snap_TX")?, flag(13, "snap_WI")?],
        });
    }
    Ok(out)
}

fn read_prices<R: Read>(reader: R, file: &str) -> Result<PriceTable> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let idx = header_index(&headers, file, &PRICE_COLUMNS)?;
    let mut table = PriceTable::default();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(idx[i]).unwrap_or("");
        let week: u32 = get(2)
            .trim()
            .parse()
            .map_err(|_| parse_err(file, r + 1, "wm_yr_wk", format!("cannot parse `{}`", get(2))))?;
        let price: f64 = get(3)
            .trim()
            .parse()
            .map_err(|_| parse_err(file, r + 1, "sell_price", format!("cannot parse `{}`", get(3))))?;
        table.insert(get(0), get(1), week, price);
    }
    Ok(table)
}

/// Writes the dataset back out in the three-file CSV layout.
pub fn write_m5(ds: &PanelDataset, sales_csv: &Path, calendar_csv: &Path, prices_csv: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(sales_csv)?));
    let mut header: Vec<String> = SALES_ID_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=ds.sales.n_times()).map(|d| format!("d_{d}")));
    w.write_record(&header)?;
    for (b, row) in ds.bottom.iter().zip(ds.sales.rows()) {
        let mut rec = vec![
            b.id.clone(),
            b.item.clone(),
            b.dept.clone(),
            b.category.clone(),
            b.store.clone(),
            b.state.clone(),
        ];
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(calendar_csv)?));
    w.write_record(CALENDAR_COLUMNS)?;
    for c in &ds.calendar {
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        w.write_record([
            c.date.format("%Y-%m-%d").to_string(),
            c.wm_yr_wk.to_string(),
            c.weekday.clone(),
            c.wday.to_string(),
            c.month.to_string(),
            c.year.to_string(),
            format!("d_{}", c.d),
            c.event_name_1.clone(),
            c.event_type_1.clone(),
            c.event_name_2.clone(),
            c.event_type_2.clone(),
            flag(c.snap[0]),
            flag(c.snap[1]),
            flag(c.snap[2]),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(prices_csv)?));
    w.write_record(PRICE_COLUMNS)?;
    for (store, item, week, price) in ds.prices.iter() {
        w.write_record([store.to_string(), item.to_string(), week.to_string(), format!("{price}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the three files under `dir` with their conventional names.
pub fn write_m5_dir(ds: &PanelDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_m5(
        ds,
        &dir.join("sales_train.csv"),
        &dir.join("calendar.csv"),
        &dir.join("sell_prices.csv"),
    )
}

/// Splits off the trailing horizon window(s).
///
/// Evaluation holds out the final `horizon` days; validation holds out the
/// `horizon` days before those and drops the evaluation days entirely.
pub fn split_frames(ds: &PanelDataset, frame: Frame) -> Result<(PanelDataset, SeriesMatrix<f64>)> {
    let h = ds.horizon;
    let t = ds.sales.n_times();
    if t <= 2 * h {
        return Err(Error::Data(format!(
            "{t} sale days cannot hold two {h}-day windows and a non-empty training span"
        )));
    }
    let train_end = match frame {
        Frame::Evaluation => t - h,
        Frame::Validation => t - 2 * h,
    };
    let actuals = ds.sales.slice_time(train_end, train_end + h)?;
    let mut train = ds.clone();
    train.sales = ds.sales.slice_time(0, train_end)?;
    train.train_end = train_end;
    Ok((train, actuals))
}

const CATEGORIES: [(&str, usize); 3] = [("FOODS", 3), ("HOBBIES", 2), ("HOUSEHOLD", 2)];
const WEEKDAY_NAMES: [&str; 7] = ["Saturday", "Sunday", "Monday", "Tuesday", "Wednesday", "Thursday", "Friday"];
/// Day-of-month SNAP patterns, ten days each.
const SNAP_DAYS: [[u32; 10]; 3] = [
    [1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
    [1, 3, 5, 6, 7, 9, 11, 12, 13, 15],
    [2, 3, 5, 6, 8, 9, 11, 12, 14, 15],
];

fn synthetic_calendar(days: usize) -> Vec<CalendarDay> {
    let start = NaiveDate::from_ymd_opt(2011, 1, 29).expect("valid start date");
    (0..days)
        .map(|i| {
            let date = start + Duration::days(i as i64);
            let week = (i / 7) as u32;
            let wm_yr_wk = 100 * (111 + week / 52) + week % 52 + 1;
            // Saturday-first numbering.
            let wday = ((date.weekday().num_days_from_monday() + 2) % 7 + 1) as u8;
            let (name1, type1) = match (date.month(), date.day()) {
                (2, 7) => ("SuperBowl", "Sporting"),
                (12, 25) => ("Christmas", "National"),
                _ => ("", ""),
            };
            let dom = date.day();
            CalendarDay {
                date,
                wm_yr_wk,
                weekday: WEEKDAY_NAMES[wday as usize - 1].to_string(),
                wday,
                month: date.month(),
                year: date.year(),
                d: i as u32 + 1,
                event_name_1: name1.to_string(),
                event_type_1: type1.to_string(),
                event_name_2: String::new(),
                event_type_2: String::new(),
                snap: [
                    SNAP_DAYS[0].contains(&dom),
                    SNAP_DAYS[1].contains(&dom),
                    SNAP_DAYS[2].contains(&dom),
                ],
            }
        })
        .collect()
}

/// Deterministic zero-inflated retail panel for tests and desk-scale runs.
///
/// Each day is zero with probability `intermittency`; otherwise the sale is
/// `1 + Poisson(rate)` where the rate carries item level, store factor,
/// weekday seasonality, SNAP and event lifts and a price response. Stores
/// cycle through CA, TX, WI. Some items are released a few weeks late and
/// have no price (and no sales) before release.
pub fn generate_synthetic(seed: u64, n_items: usize, n_stores: usize, days: usize, intermittency: f64) -> Result<PanelDataset> {
    if days <= 2 * HORIZON {
        return Err(Error::InvalidArgument(format!("synthetic panel needs more than {} days", 2 * HORIZON)));
    }
    if !(0.0..=1.0).contains(&intermittency) {
        return Err(Error::InvalidArgument(format!("intermittency {intermittency} outside [0, 1]")));
    }
    if n_items == 0 || n_stores == 0 {
        return Err(Error::InvalidArgument("need at least one item and one store".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calendar = synthetic_calendar(days + HORIZON);

    let mut dept_counters: HashMap<String, usize> = HashMap::new();
    let items: Vec<(String, String, String)> = (0..n_items)
        .map(|i| {
            let (cat, n_depts) = CATEGORIES[i % CATEGORIES.len()];
            let dept = format!("{cat}_{}", (i / CATEGORIES.len()) % n_depts + 1);
            let k = dept_counters.entry(dept.clone()).or_insert(0);
            *k += 1;
            (format!("{dept}_{:03}", *k), dept, cat.to_string())
        })
        .collect();
    let stores: Vec<(String, String)> = (0..n_stores)
        .map(|s| {
            let state = SNAP_STATES[s % SNAP_STATES.len()];
            (format!("{state}_{}", s / SNAP_STATES.len() + 1), state.to_string())
        })
        .collect();

    let weekday_factor = [1.35, 1.3, 0.95, 0.85, 0.85, 0.9, 1.05];
    let item_level: Vec<f64> = (0..n_items).map(|_| (rng.random::<f64>() * 2.5 - 0.5).exp()).collect();
    let item_price: Vec<f64> = (0..n_items).map(|_| (rng.random_range(100..2000) as f64) / 100.0).collect();
    let store_factor: Vec<f64> = (0..n_stores).map(|_| rng.random_range(0.6..1.4)).collect();
    let n_weeks = calendar.len().div_ceil(7);
    let weeks: Vec<u32> = (0..n_weeks).map(|w| calendar[w * 7].wm_yr_wk).collect();

    let mut bottom = Vec::new();
    let mut rows = Vec::new();
    let mut prices = PriceTable::default();
    for (s, (store, state)) in stores.iter().enumerate() {
        for (i, (item, dept, cat)) in items.iter().enumerate() {
            let release_week = if rng.random::<f64>() < 0.25 { rng.random_range(1..=4) } else { 0 };
            // Occasional permanent price steps and short promotions.
            let mut price = item_price[i] * rng.random_range(0.9..1.1);
            price = (price * 100.0).round() / 100.0;
            let mut weekly = Vec::with_capacity(n_weeks);
            for w in 0..n_weeks {
                if w > 0 && rng.random::<f64>() < 0.04 {
                    price = ((price * rng.random_range(0.85..1.2)) * 100.0).round() / 100.0;
                    price = price.max(0.1);
                }
                let promo = rng.random::<f64>() < 0.05;
                let p = if promo { ((price * 0.8) * 100.0).round() / 100.0 } else { price };
                weekly.push(p);
                if w >= release_week {
                    prices.insert(store, item, weeks[w], p);
                }
            }
            let mut row = Vec::with_capacity(days);
            for (d, day) in calendar.iter().take(days).enumerate() {
                let w = d / 7;
                let zero: bool = rng.random::<f64>() < intermittency;
                if w < release_week {
                    row.push(0.0);
                    continue;
                }
                let mut rate = item_level[i] * store_factor[s] * weekday_factor[day.wday as usize - 1];
                if day.snap_for_state(state) {
                    rate *= 1.3;
                }
                if !day.event_name_1.is_empty() {
                    rate *= 1.6;
                }
                rate *= (item_price[i] / weekly[w]).powf(1.5);
                let draw = if zero {
                    0.0
                } else {
                    let extra = if rate > 0.0 {
                        Poisson::new(rate).map(|p| p.sample(&mut rng)).unwrap_or(0.0)
                    } else {
                        0.0
                    };
                    1.0 + extra
                };
                row.push(draw);
            }
            bottom.push(BottomInfo {
                id: format!("{item}_{store}_evaluation"),
                item: item.clone(),
                dept: dept.clone(),
                category: cat.clone(),
                store: store.clone(),
                state: state.clone(),
            });
            rows.push(row);
        }
    }
    assemble(bottom, days, rows, calendar, prices)
}

/// Weekday helper for features: Saturday and Sunday.
pub fn is_weekend(day: &CalendarDay) -> bool {
    matches!(day.date.weekday(), Weekday::Sat | Weekday::Sun)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let sales = "id,item_id,dept_id,cat_id,store_id,state_id,d_1,d_2,d_3\n\
                     B_1_001_CA_1_evaluation,B_1_001,B_1,B,CA_1,CA,0,1,2\n\
                     A_1_001_CA_1_evaluation,A_1_001,A_1,A,CA_1,CA,3,0,0\n";
        std::fs::write(dir.path().join("sales.csv"), sales).unwrap();
        let cal = synthetic_calendar(3 + HORIZON);
        let ds = PanelDataset {
            bottom: vec![],
            sales: SeriesMatrix::new(vec![], vec![], vec![]).unwrap(),
            calendar: cal,
            prices: PriceTable::default(),
            hierarchy: build_m5_hierarchy(&[CatalogEntry {
                item: "x".into(),
                dept: "d".into(),
                category: "c".into(),
                store: "s".into(),
                state: "t".into(),
            }])
            .unwrap(),
            train_end: 0,
            horizon: HORIZON,
        };
        let tmp_sales = dir.path().join("unused.csv");
        write_m5(&ds, &tmp_sales, &dir.path().join("calendar.csv"), &dir.path().join("prices.csv")).unwrap();
        std::fs::write(
            dir.path().join("prices.csv"),
            "store_id,item_id,wm_yr_wk,sell_price\nCA_1,A_1_001,11101,2.5\nCA_1,B_1_001,11101,1.25\n",
        )
        .unwrap();
        dir
    }

    #[test]
    fn loads_two_item_fixture_in_key_order() {
        let dir = fixture_dir();
        let p = dir.path();
        let ds = load_m5(&p.join("sales.csv"), &p.join("calendar.csv"), &p.join("prices.csv")).unwrap();
        assert_eq!(ds.num_series(), 2);
        assert_eq!(ds.sales.n_times(), 3);
        assert_eq!(ds.bottom[0].item, "A_1_001");
        assert_eq!(ds.sales.row(0), &[3.0, 0.0, 0.0]);
        assert_eq!(ds.sales.row(1), &[0.0, 1.0, 2.0]);
        assert_eq!(ds.price_on(0, 1), Some(2.5));
    }

    #[test]
    fn truncated_calendar_is_rejected() {
        let dir = fixture_dir();
        let p = dir.path();
        let text = std::fs::read_to_string(p.join("calendar.csv")).unwrap();
        let short: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        std::fs::write(p.join("calendar.csv"), short).unwrap();
        let err = load_m5(&p.join("sales.csv"), &p.join("calendar.csv"), &p.join("prices.csv")).unwrap_err();
        assert!(err.to_string().contains("calendar truncated"), "{err}");
    }

    #[test]
    fn missing_column_and_bad_cell_are_reported() {
        let dir = fixture_dir();
        let p = dir.path();
        std::fs::write(p.join("s2.csv"), "id,item_id,dept_id,cat_id,store_id,d_1\nx,a,b,c,d,1\n").unwrap();
        match load_m5(&p.join("s2.csv"), &p.join("calendar.csv"), &p.join("prices.csv")) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "state_id"),
            other => panic!("{other:?}"),
        }
        std::fs::write(
            p.join("s3.csv"),
            "id,item_id,dept_id,cat_id,store_id,state_id,d_1,d_2\nx,a,b,c,d,e,1,2.5\n",
        )
        .unwrap();
        match load_m5(&p.join("s3.csv"), &p.join("calendar.csv"), &p.join("prices.csv")) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (1, "d_2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synthetic_boundaries_and_determinism() {
        let all_zero = generate_synthetic(3, 4, 2, 80, 1.0).unwrap();
        assert!(all_zero.sales.values().iter().all(|&v| v == 0.0));
        let a = generate_synthetic(11, 5, 3, 90, 0.5).unwrap();
        let b = generate_synthetic(11, 5, 3, 90, 0.5).unwrap();
        assert_eq!(a, b);
        assert!(generate_synthetic(11, 5, 3, 56, 0.5).is_err());
        assert!(generate_synthetic(11, 5, 3, 90, 1.5).is_err());
        assert_eq!(a.calendar.len(), 90 + HORIZON);
        assert_eq!(a.stores(), vec!["CA_1", "TX_1", "WI_1"]);
    }

    #[test]
    fn split_frame_arithmetic() {
        let ds = generate_synthetic(1, 2, 1, 200, 0.3).unwrap();
        let (train, act) = split_frames(&ds, Frame::Evaluation).unwrap();
        assert_eq!(train.train_end, 172);
        assert_eq!(act.time_index().first(), Some(&173));
        assert_eq!(act.time_index().last(), Some(&200));
        let (train, act) = split_frames(&ds, Frame::Validation).unwrap();
        assert_eq!(train.train_end, 144);
        assert_eq!(act.time_index(), (145..=172).collect::<Vec<u32>>().as_slice());
        assert_eq!(act.row(1), &ds.sales.row(1)[144..172]);

        let small = generate_synthetic(1, 2, 1, 57, 0.3).unwrap();
        let mut tiny = small.clone();
        tiny.sales = small.sales.slice_time(0, 56).unwrap();
        tiny.train_end = 56;
        assert!(split_frames(&tiny, Frame::Validation).is_err());
    }

    #[test]
    fn weekday_numbering_matches_source_convention() {
        let cal = synthetic_calendar(7);
        assert_eq!(cal[0].weekday, "Saturday");
        assert_eq!(cal[0].wday, 1);
        assert_eq!(cal[6].weekday, "Friday");
        assert!(is_weekend(&cal[0]) && is_weekend(&cal[1]) && !is_weekend(&cal[2]));
    }
}
