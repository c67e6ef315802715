//! Aggregation hierarchy and the series matrices that flow through it.
//!
//! A [`HierarchySpec`] partitions the bottom series once per level. Upper
//! levels are formed by summing member rows; the last level is the bottom
//! level itself, one node per bottom series, in bottom order.

use std::collections::{BTreeMap, HashMap};
use std::ops::AddAssign;

use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of one bottom-level series.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BottomKey {
    pub item: String,
    pub store: String,
}

impl BottomKey {
    pub fn new(item: impl Into<String>, store: impl Into<String>) -> Self {
        Self {
            item: item.into(),
            store: store.into(),
        }
    }
}

/// One row of the product/store catalog used to build the retail hierarchy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub item: String,
    pub dept: String,
    pub category: String,
    pub store: String,
    pub state: String,
}

/// Level descriptor: 1-based id, label and the attribute names that group it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub level: usize,
    pub label: String,
    pub keys: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub key: Vec<String>,
    /// Ascending bottom indices.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level {
    pub spec: LevelSpec,
    pub nodes: Vec<Node>,
}

/// (level, node id) pair naming one series anywhere in the hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesRef {
    pub level: usize,
    pub id: String,
}

impl std::fmt::Display for SeriesRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}:{}", self.level, self.id)
    }
}

/// Multi-level aggregation structure over a fixed set of bottom series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchySpec {
    levels: Vec<Level>,
    bottom_keys: Vec<BottomKey>,
}

/// Level layout of the retail hierarchy, top to bottom.
pub const M5_LEVELS: [(&str, &[&str]); 12] = [
    ("Total", &[]),
    ("State", &["state_id"]),
    ("Store", &["store_id"]),
    ("Category", &["cat_id"]),
    ("Department", &["dept_id"]),
    ("State x Category", &["state_id", "cat_id"]),
    ("State x Department", &["state_id", "dept_id"]),
    ("Store x Category", &["store_id", "cat_id"]),
    ("Store x Department", &["store_id", "dept_id"]),
    ("Item", &["item_id"]),
    ("Item x State", &["item_id", "state_id"]),
    ("Item x Store", &["item_id", "store_id"]),
];

const M5_ATTRIBUTES: [&str; 5] = ["item_id", "dept_id", "cat_id", "store_id", "state_id"];

impl HierarchySpec {
    /// Builds a hierarchy by grouping bottom series on named attributes.
    ///
    /// `attributes[i][a]` is the value of `attribute_names[a]` for bottom series
    /// `i`. Every level except the last groups by its key tuple with nodes in
    /// lexicographic key order. The last level must identify single bottom
    /// series; its nodes follow bottom order.
    pub fn from_groupings(
        bottom_keys: Vec<BottomKey>,
        attribute_names: &[&str],
        attributes: &[Vec<String>],
        levels: &[(&str, &[&str])],
    ) -> Result<Self> {
        if bottom_keys.is_empty() {
            return Err(Error::InvalidArgument("hierarchy needs at least one bottom series".into()));
        }
        if attributes.len() != bottom_keys.len() {
            return Err(Error::Dimension(format!(
                "{} attribute rows for {} bottom series",
                attributes.len(),
                bottom_keys.len()
            )));
        }
        if levels.len() < 2 {
            return Err(Error::InvalidArgument("hierarchy needs a total and a bottom level".into()));
        }
        if !levels[0].1.is_empty() {
            return Err(Error::InvalidArgument("level 1 must group on no keys (the total)".into()));
        }
        let mut seen = HashMap::new();
        for (i, k) in bottom_keys.iter().enumerate() {
            if seen.insert(k, i).is_some() {
                return Err(Error::DuplicateKey {
                    item: k.item.clone(),
                    store: k.store.clone(),
                });
            }
        }
        let column = |name: &str| -> Result<usize> {
            attribute_names
                .iter()
                .position(|a| *a == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown grouping attribute `{name}`")))
        };

        let last = levels.len() - 1;
        let mut out = Vec::with_capacity(levels.len());
        for (li, (label, keys)) in levels.iter().enumerate() {
            let cols = keys.iter().map(|k| column(k)).collect::<Result<Vec<_>>>()?;
            let spec = LevelSpec {
                level: li + 1,
                label: (*label).to_string(),
                keys: keys.iter().map(|k| (*k).to_string()).collect(),
            };
            let key_of = |i: usize| -> Vec<String> { cols.iter().map(|&c| attributes[i][c].clone()).collect() };
            let nodes = if li == last {
                let nodes: Vec<Node> = (0..bottom_keys.len())
                    .map(|i| {
                        let key = key_of(i);
                        Node {
                            id: node_id(&key),
                            key,
                            members: vec![i],
                        }
                    })
                    .collect();
                let distinct: std::collections::HashSet<&Vec<String>> = nodes.iter().map(|n| &n.key).collect();
                if distinct.len() != nodes.len() {
                    return Err(Error::InvalidArgument(
                        "bottom level keys must identify each bottom series".into(),
                    ));
                }
                nodes
            } else {
                let mut groups: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
                for i in 0..bottom_keys.len() {
                    groups.entry(key_of(i)).or_default().push(i);
                }
                groups
                    .into_iter()
                    .map(|(key, members)| Node {
                        id: node_id(&key),
                        key,
                        members,
                    })
                    .collect()
            };
            out.push(Level { spec, nodes });
        }
        Ok(Self {
            levels: out,
            bottom_keys,
        })
    }

    /// Assembles and validates a spec from explicit levels (used by JSON import).
    pub fn from_parts(levels: Vec<Level>, bottom_keys: Vec<BottomKey>) -> Result<Self> {
        let spec = Self { levels, bottom_keys };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let n = self.bottom_keys.len();
        if n == 0 || self.levels.len() < 2 {
            return Err(Error::InvalidArgument("hierarchy needs bottom series and at least two levels".into()));
        }
        for (li, level) in self.levels.iter().enumerate() {
            if level.spec.level != li + 1 {
                return Err(Error::InvalidArgument(format!(
                    "level ids must run 1..L in order, found {} at position {}",
                    level.spec.level,
                    li + 1
                )));
            }
            let mut covered = vec![false; n];
            for node in &level.nodes {
                if node.members.is_empty() || node.members.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidArgument(format!(
                        "node `{}` at level {} must list strictly ascending members",
                        node.id, level.spec.level
                    )));
                }
                for &m in &node.members {
                    if m >= n || covered[m] {
                        return Err(Error::InvalidArgument(format!(
                            "bottom index {m} missing or repeated at level {}",
                            level.spec.level
                        )));
                    }
                    covered[m] = true;
                }
            }
            if covered.iter().any(|c| !c) {
                return Err(Error::InvalidArgument(format!(
                    "level {} does not cover every bottom series",
                    level.spec.level
                )));
            }
        }
        if self.levels[0].nodes.len() != 1 {
            return Err(Error::InvalidArgument("level 1 must have exactly one node".into()));
        }
        let bottom = self.levels.last().expect("validated non-empty");
        if bottom.nodes.len() != n || bottom.nodes.iter().enumerate().any(|(i, nd)| nd.members != [i]) {
            return Err(Error::InvalidArgument("last level must list bottom series in order".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn bottom_level(&self) -> usize {
        self.levels.len()
    }

    pub fn bottom_keys(&self) -> &[BottomKey] {
        &self.bottom_keys
    }

    pub fn num_bottom(&self) -> usize {
        self.bottom_keys.len()
    }

    pub fn level(&self, level: usize) -> Result<&Level> {
        level
            .checked_sub(1)
            .and_then(|i| self.levels.get(i))
            .ok_or(Error::UnknownLevel(level))
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.nodes.len()).collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.levels.iter().map(|l| l.nodes.len()).sum()
    }

    /// Every series in stacking order: level 1..L, node order within each level.
    pub fn series_refs(&self) -> Vec<SeriesRef> {
        self.levels
            .iter()
            .flat_map(|l| {
                l.nodes.iter().map(move |n| SeriesRef {
                    level: l.spec.level,
                    id: n.id.clone(),
                })
            })
            .collect()
    }

    /// Dense 0/1 summing matrix, rows in stacking order, row-major.
    pub fn summing_matrix(&self) -> (usize, usize, Vec<f64>) {
        let rows = self.total_nodes();
        let cols = self.num_bottom();
        let mut dense = vec![0.0; rows * cols];
        let mut r = 0;
        for level in &self.levels {
            for node in &level.nodes {
                for &m in &node.members {
                    dense[r * cols + m] = 1.0;
                }
                r += 1;
            }
        }
        (rows, cols, dense)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&HierarchyDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: HierarchyDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}

fn node_id(key: &[String]) -> String {
    if key.is_empty() {
        "Total".to_string()
    } else {
        key.join("_")
    }
}

/// Builds the 12-level retail hierarchy from a product/store catalog.
///
/// Bottom series are ordered by (item, store).
pub fn build_m5_hierarchy(catalog: &[CatalogEntry]) -> Result<HierarchySpec> {
    if catalog.is_empty() {
        return Err(Error::InvalidArgument("empty catalog".into()));
    }
    let mut item_attrs: HashMap<&str, (&str, &str)> = HashMap::new();
    let mut store_state: HashMap<&str, &str> = HashMap::new();
    for e in catalog {
        let prev = *item_attrs
            .entry(e.item.as_str())
            .or_insert((e.dept.as_str(), e.category.as_str()));
        if prev != (e.dept.as_str(), e.category.as_str()) {
            return Err(Error::InconsistentCatalog(format!(
                "item `{}` listed under ({}, {}) and ({}, {})",
                e.item, prev.0, prev.1, e.dept, e.category
            )));
        }
        let prev = *store_state.entry(e.store.as_str()).or_insert(e.state.as_str());
        if prev != e.state {
            return Err(Error::InconsistentCatalog(format!(
                "store `{}` listed in states `{prev}` and `{}`",
                e.store, e.state
            )));
        }
    }
    let mut sorted: Vec<&CatalogEntry> = catalog.iter().collect();
    sorted.sort_by(|a, b| (&a.item, &a.store).cmp(&(&b.item, &b.store)));
    if let Some(w) = sorted.windows(2).find(|w| w[0].item == w[1].item && w[0].store == w[1].store) {
        return Err(Error::DuplicateKey {
            item: w[0].item.clone(),
            store: w[0].store.clone(),
        });
    }
    let bottom_keys = sorted.iter().map(|e| BottomKey::new(&e.item, &e.store)).collect();
    let attributes: Vec<Vec<String>> = sorted
        .iter()
        .map(|e| {
            vec![
                e.item.clone(),
                e.dept.clone(),
                e.category.clone(),
                e.store.clone(),
                e.state.clone(),
            ]
        })
        .collect();
    HierarchySpec::from_groupings(bottom_keys, &M5_ATTRIBUTES, &attributes, &M5_LEVELS)
}

/// Values over consecutive days, one row per series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMatrix<T> {
    values: Vec<T>,
    n_series: usize,
    time_index: Vec<u32>,
    series_ids: Vec<String>,
}

impl<T: Copy> SeriesMatrix<T> {
    /// `values` is row-major `[series × time]`; `time_index` must be consecutive days.
    pub fn new(values: Vec<T>, time_index: Vec<u32>, series_ids: Vec<String>) -> Result<Self> {
        let n_series = series_ids.len();
        if values.len() != n_series * time_index.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} series x {} days",
                values.len(),
                n_series,
                time_index.len()
            )));
        }
        if time_index.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::InvalidArgument("time index must be consecutive days".into()));
        }
        Ok(Self {
            values,
            n_series,
            time_index,
            series_ids,
        })
    }

    pub fn from_rows(rows: Vec<Vec<T>>, time_index: Vec<u32>, series_ids: Vec<String>) -> Result<Self> {
        if rows.len() != series_ids.len() {
            return Err(Error::Dimension(format!("{} rows for {} ids", rows.len(), series_ids.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != time_index.len()) {
            return Err(Error::Dimension(format!(
                "row of length {} against {} days",
                r.len(),
                time_index.len()
            )));
        }
        Self::new(rows.into_iter().flatten().collect(), time_index, series_ids)
    }

    pub fn n_series(&self) -> usize {
        self.n_series
    }

    pub fn n_times(&self) -> usize {
        self.time_index.len()
    }

    pub fn time_index(&self) -> &[u32] {
        &self.time_index
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[T] {
        let t = self.n_times();
        &self.values[i * t..(i + 1) * t]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let t = self.n_times();
        &mut self.values[i * t..(i + 1) * t]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.n_series).map(move |i| self.row(i))
    }

    pub fn get(&self, series: usize, t: usize) -> T {
        self.values[series * self.n_times() + t]
    }

    /// Columns `[start, end)` by position.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.n_times() {
            return Err(Error::Dimension(format!(
                "time slice {start}..{end} outside 0..{}",
                self.n_times()
            )));
        }
        let values = self.rows().flat_map(|r| r[start..end].iter().copied()).collect();
        Self::new(values, self.time_index[start..end].to_vec(), self.series_ids.clone())
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> SeriesMatrix<U> {
        SeriesMatrix {
            values: self.values.iter().map(|&v| f(v)).collect(),
            n_series: self.n_series,
            time_index: self.time_index.clone(),
            series_ids: self.series_ids.clone(),
        }
    }

    /// Selects and reorders rows.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let values = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self {
            values,
            n_series: indices.len(),
            time_index: self.time_index.clone(),
            series_ids: indices.iter().map(|&i| self.series_ids[i].clone()).collect(),
        }
    }

    /// Stacks matrices with identical time indices on top of each other.
    pub fn vstack(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to stack".into()))?;
        let mut values = Vec::new();
        let mut ids = Vec::new();
        for p in parts {
            if p.time_index != first.time_index {
                return Err(Error::Dimension("stacked matrices must share the time index".into()));
            }
            values.extend_from_slice(&p.values);
            ids.extend(p.series_ids.iter().cloned());
        }
        Self::new(values, first.time_index.clone(), ids)
    }
}

/// Sums bottom rows into every node of `target_level`.
///
/// Rows of `bottom` must follow `spec.bottom_keys()`. The bottom level returns
/// the input unchanged. Each node sums its members in ascending index order.
pub fn aggregate<T>(spec: &HierarchySpec, bottom: &SeriesMatrix<T>, target_level: usize) -> Result<SeriesMatrix<T>>
where
    T: Copy + Zero + AddAssign + Send + Sync,
{
    let level = spec.level(target_level)?;
    if bottom.n_series() != spec.num_bottom() {
        return Err(Error::Dimension(format!(
            "bottom matrix has {} rows, hierarchy has {} bottom series",
            bottom.n_series(),
            spec.num_bottom()
        )));
    }
    if target_level == spec.bottom_level() {
        return Ok(bottom.clone());
    }
    let t = bottom.n_times();
    let rows: Vec<Vec<T>> = level
        .nodes
        .par_iter()
        .map(|node| {
            let mut acc = vec![T::zero(); t];
            for &m in &node.members {
                for (a, &v) in acc.iter_mut().zip(bottom.row(m)) {
                    *a += v;
                }
            }
            acc
        })
        .collect();
    SeriesMatrix::from_rows(
        rows,
        bottom.time_index().to_vec(),
        level.nodes.iter().map(|n| n.id.clone()).collect(),
    )
}

/// Averages member rows instead of summing them.
pub fn aggregate_mean<T>(spec: &HierarchySpec, bottom: &SeriesMatrix<T>, target_level: usize) -> Result<SeriesMatrix<T>>
where
    T: crate::Scalar,
{
    let summed = aggregate(spec, bottom, target_level)?;
    let level = spec.level(target_level)?;
    let mut out = summed;
    for (i, node) in level.nodes.iter().enumerate() {
        let n = T::of(node.members.len() as f64);
        for v in out.row_mut(i) {
            *v /= n;
        }
    }
    Ok(out)
}

/// Stacks every level's aggregate, level 1 first.
pub fn enumerate_all_series<T>(spec: &HierarchySpec, bottom: &SeriesMatrix<T>) -> Result<SeriesMatrix<T>>
where
    T: Copy + Zero + AddAssign + Send + Sync,
{
    let parts = (1..=spec.num_levels())
        .map(|l| aggregate(spec, bottom, l))
        .collect::<Result<Vec<_>>>()?;
    SeriesMatrix::vstack(&parts)
}

#[derive(Serialize, Deserialize)]
struct HierarchyDocument {
    version: u32,
    levels: Vec<LevelSpec>,
    bottom_keys: Vec<BottomKey>,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    level: usize,
    id: String,
    key: Vec<String>,
    member_indices: Vec<usize>,
}

impl From<&HierarchySpec> for HierarchyDocument {
    fn from(spec: &HierarchySpec) -> Self {
        Self {
            version: 1,
            levels: spec.levels.iter().map(|l| l.spec.clone()).collect(),
            bottom_keys: spec.bottom_keys.clone(),
            nodes: spec
                .levels
                .iter()
                .flat_map(|l| {
                    l.nodes.iter().map(move |n| NodeRecord {
                        level: l.spec.level,
                        id: n.id.clone(),
                        key: n.key.clone(),
                        member_indices: n.members.clone(),
                    })
                })
                .collect(),
        }
    }
}

impl TryFrom<HierarchyDocument> for HierarchySpec {
    type Error = Error;

    fn try_from(doc: HierarchyDocument) -> Result<Self> {
        if doc.version != 1 {
            return Err(Error::Data(format!("unsupported hierarchy document version {}", doc.version)));
        }
        let mut levels: Vec<Level> = doc
            .levels
            .into_iter()
            .map(|spec| Level { spec, nodes: Vec::new() })
            .collect();
        for rec in doc.nodes {
            let level = rec
                .level
                .checked_sub(1)
                .and_then(|i| levels.get_mut(i))
                .ok_or(Error::UnknownLevel(rec.level))?;
            level.nodes.push(Node {
                id: rec.id,
                key: rec.key,
                members: rec.member_indices,
            });
        }
        HierarchySpec::from_parts(levels, doc.bottom_keys)
    }
}
