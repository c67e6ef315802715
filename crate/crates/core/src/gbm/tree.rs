//! Regression trees grown leaf-wise from gradient/Hessian histograms.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{BinnedData, FeatureBins};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Rows with `value <= threshold` go left.
    Threshold(f64),
    /// Rows whose code is in the (sorted) set go left; everything else right.
    Categories(Vec<u32>),
}

impl SplitRule {
    fn goes_left(&self, value: f64) -> bool {
        match self {
            SplitRule::Threshold(t) => value <= *t,
            SplitRule::Categories(set) => {
                value >= 0.0 && value.fract() == 0.0 && set.binary_search(&(value as u32)).is_ok()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

/// Binary tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn single_leaf(value: f64, count: usize) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { value, count }],
        }
    }

    /// Leaf value reached by a row; `feature(j)` returns the row's value of feature `j`.
    pub fn predict(&self, feature: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature: f,
                    rule,
                    left,
                    right,
                    ..
                } => at = if rule.goes_left(feature(*f)) { *left } else { *right },
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value, count } => Some((*value, *count)),
            _ => None,
        })
    }
}

/// Knobs used while growing one tree.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_leaves: usize,
    pub max_depth: Option<usize>,
    pub min_data_in_leaf: usize,
    pub min_sum_hessian: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub min_gain_to_split: f64,
    pub colsample_bynode: f64,
}

fn soft_threshold(g: f64, l1: f64) -> f64 {
    if g > l1 {
        g - l1
    } else if g < -l1 {
        g + l1
    } else {
        0.0
    }
}

impl GrowParams {
    fn score(&self, g: f64, h: f64) -> f64 {
        let t = soft_threshold(g, self.lambda_l1);
        t * t / (h + self.lambda_l2)
    }

    pub(crate) fn leaf_value(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.lambda_l2;
        if denom <= 0.0 {
            return 0.0;
        }
        -soft_threshold(g, self.lambda_l1) / denom
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Bin {
    g: f64,
    h: f64,
    n: usize,
}

#[derive(Debug, Clone)]
struct Candidate {
    feature: usize,
    gain: f64,
    rule: SplitRule,
    /// Bin-level membership for partitioning: numeric split bin, or category set.
    left_bins: LeftBins,
}

#[derive(Debug, Clone)]
enum LeftBins {
    UpTo(u32),
    Set(Vec<u32>),
}

impl LeftBins {
    fn contains(&self, bin: u32) -> bool {
        match self {
            LeftBins::UpTo(b) => bin <= *b,
            LeftBins::Set(s) => s.binary_search(&bin).is_ok(),
        }
    }
}

struct OpenLeaf {
    node: usize,
    rows: Vec<u32>,
    g: f64,
    h: f64,
    depth: usize,
    /// Histograms for the tree's features, in `tree_features` order.
    hists: Vec<Vec<Bin>>,
    best: Option<Candidate>,
}

fn build_hist(data: &BinnedData, feature: usize, rows: &[u32], grad: &[f64], hess: &[f64]) -> Vec<Bin> {
    let mut hist = vec![Bin::default(); data.features[feature].n_bins()];
    let col = &data.bins[feature];
    for &r in rows {
        let b = &mut hist[col[r as usize] as usize];
        b.g += grad[r as usize];
        b.h += hess[r as usize];
        b.n += 1;
    }
    hist
}

fn subtract_hist(parent: &[Bin], child: &[Bin]) -> Vec<Bin> {
    parent
        .iter()
        .zip(child)
        .map(|(p, c)| {
            let n = p.n - c.n;
            if n == 0 {
                Bin::default()
            } else {
                Bin {
                    g: p.g - c.g,
                    h: p.h - c.h,
                    n,
                }
            }
        })
        .collect()
}

fn best_split_for_feature(
    fb: &FeatureBins,
    feature: usize,
    hist: &[Bin],
    total: Bin,
    params: &GrowParams,
) -> Option<Candidate> {
    let n_bins = hist.len();
    if n_bins < 2 {
        return None;
    }
    let parent = params.score(total.g, total.h);
    let valid = |l: &Bin, r: &Bin| {
        l.n >= params.min_data_in_leaf
            && r.n >= params.min_data_in_leaf
            && l.h >= params.min_sum_hessian
            && r.h >= params.min_sum_hessian
    };
    let mut best: Option<(f64, usize)> = None;
    match fb {
        FeatureBins::Numeric { lower, upper } => {
            let mut left = Bin::default();
            for b in 0..n_bins - 1 {
                left.g += hist[b].g;
                left.h += hist[b].h;
                left.n += hist[b].n;
                if hist[b].n == 0 {
                    continue;
                }
                let right = Bin {
                    g: total.g - left.g,
                    h: total.h - left.h,
                    n: total.n - left.n,
                };
                if right.n == 0 {
                    break;
                }
                if !valid(&left, &right) {
                    continue;
                }
                let gain = params.score(left.g, left.h) + params.score(right.g, right.h) - parent;
                if gain > params.min_gain_to_split && best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, b));
                }
            }
            let (gain, b) = best?;
            // Threshold halfway to the next occupied bin in this node.
            let next = (b + 1..n_bins).find(|&k| hist[k].n > 0).unwrap_or(b + 1);
            let threshold = 0.5 * (upper[b] + lower[next]);
            Some(Candidate {
                feature,
                gain,
                rule: SplitRule::Threshold(threshold),
                left_bins: LeftBins::UpTo(b as u32),
            })
        }
        FeatureBins::Categorical { .. } => {
            let mut present: Vec<usize> = (0..n_bins).filter(|&c| hist[c].n > 0).collect();
            if present.len() < 2 {
                return None;
            }
            present.sort_by(|&a, &b| {
                let ra = hist[a].g / (hist[a].h + params.lambda_l2);
                let rb = hist[b].g / (hist[b].h + params.lambda_l2);
                ra.total_cmp(&rb).then(a.cmp(&b))
            });
            let mut left = Bin::default();
            for k in 0..present.len() - 1 {
                let c = present[k];
                left.g += hist[c].g;
                left.h += hist[c].h;
                left.n += hist[c].n;
                let right = Bin {
                    g: total.g - left.g,
                    h: total.h - left.h,
                    n: total.n - left.n,
                };
                if !valid(&left, &right) {
                    continue;
                }
                let gain = params.score(left.g, left.h) + params.score(right.g, right.h) - parent;
                if gain > params.min_gain_to_split && best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, k));
                }
            }
            let (gain, k) = best?;
            let mut set: Vec<u32> = present[..=k].iter().map(|&c| c as u32).collect();
            set.sort_unstable();
            Some(Candidate {
                feature,
                gain,
                rule: SplitRule::Categories(set.clone()),
                left_bins: LeftBins::Set(set),
            })
        }
    }
}

fn sample_features(rng: &mut impl Rng, pool: &[usize], fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 || pool.len() <= 1 {
        return pool.to_vec();
    }
    let k = ((pool.len() as f64 * fraction).ceil() as usize).clamp(1, pool.len());
    let mut picked: Vec<usize> = sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    picked
}

pub(crate) fn sample_fraction(rng: &mut impl Rng, n: usize, fraction: f64) -> Vec<u32> {
    if fraction >= 1.0 {
        return (0..n as u32).collect();
    }
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n.max(1));
    let mut picked: Vec<u32> = sample(rng, n, k).into_iter().map(|i| i as u32).collect();
    picked.sort_unstable();
    picked
}

pub(crate) fn sample_columns(rng: &mut impl Rng, n: usize, fraction: f64) -> Vec<usize> {
    let pool: Vec<usize> = (0..n).collect();
    sample_features(rng, &pool, fraction)
}

fn all_hists(data: &BinnedData, tree_features: &[usize], rows: &[u32], grad: &[f64], hess: &[f64]) -> Vec<Vec<Bin>> {
    tree_features
        .par_iter()
        .map(|&f| build_hist(data, f, rows, grad, hess))
        .collect()
}

fn evaluate(leaf: &mut OpenLeaf, data: &BinnedData, tree_features: &[usize], params: &GrowParams, rng: &mut impl Rng) {
    leaf.best = None;
    if params.max_depth.is_some_and(|d| leaf.depth >= d) || leaf.rows.len() < 2 * params.min_data_in_leaf.max(1) {
        return;
    }
    let picked = sample_features(rng, tree_features, params.colsample_bynode);
    let total = Bin {
        g: leaf.g,
        h: leaf.h,
        n: leaf.rows.len(),
    };
    let hists = &leaf.hists;
    let candidates: Vec<Option<Candidate>> = picked
        .par_iter()
        .map(|&f| {
            let pos = tree_features.binary_search(&f).expect("node features come from the tree set");
            best_split_for_feature(&data.features[f], f, &hists[pos], total, params)
        })
        .collect();
    // Ascending feature order; strict comparison keeps the lowest index on ties.
    for c in candidates.into_iter().flatten() {
        if leaf.best.as_ref().is_none_or(|b| c.gain > b.gain) {
            leaf.best = Some(c);
        }
    }
}

/// Grows one tree on the bagged `rows`. `tree_features` must be ascending.
pub(crate) fn grow(
    data: &BinnedData,
    rows: Vec<u32>,
    grad: &[f64],
    hess: &[f64],
    tree_features: &[usize],
    params: &GrowParams,
    rng: &mut impl Rng,
) -> Tree {
    let sum = |rs: &[u32]| -> (f64, f64) {
        rs.iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + grad[r as usize], h + hess[r as usize]))
    };
    let (g, h) = sum(&rows);
    let mut nodes = vec![TreeNode::Leaf {
        value: params.leaf_value(g, h),
        count: rows.len(),
    }];
    if params.max_leaves <= 1 {
        return Tree { nodes };
    }
    let hists = all_hists(data, tree_features, &rows, grad, hess);
    let mut root = OpenLeaf {
        node: 0,
        rows,
        g,
        h,
        depth: 0,
        hists,
        best: None,
    };
    evaluate(&mut root, data, tree_features, params, rng);
    let mut open = vec![root];
    let mut n_leaves = 1;
    while n_leaves < params.max_leaves {
        // Highest gain wins; equal gains go to the leaf created first.
        let mut pick: Option<(usize, f64)> = None;
        for (i, l) in open.iter().enumerate() {
            if let Some(b) = &l.best {
                if pick.is_none_or(|(_, g)| b.gain > g) {
                    pick = Some((i, b.gain));
                }
            }
        }
        let Some((idx, _)) = pick else { break };
        let leaf = open.remove(idx);
        let cand = leaf.best.expect("picked leaf has a split");
        let col = &data.bins[cand.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            leaf.rows.iter().partition(|&&r| cand.left_bins.contains(col[r as usize]));
        let (lg, lh) = sum(&left_rows);
        let (rg, rh) = sum(&right_rows);
        let left_id = nodes.len();
        let right_id = left_id + 1;
        nodes.push(TreeNode::Leaf {
            value: params.leaf_value(lg, lh),
            count: left_rows.len(),
        });
        nodes.push(TreeNode::Leaf {
            value: params.leaf_value(rg, rh),
            count: right_rows.len(),
        });
        nodes[leaf.node] = TreeNode::Split {
            feature: cand.feature,
            rule: cand.rule,
            left: left_id,
            right: right_id,
            gain: cand.gain,
        };
        n_leaves += 1;
        if n_leaves >= params.max_leaves {
            break;
        }
        // Scan only the smaller child; the sibling is parent minus child.
        let (small, large_is_left) = if left_rows.len() <= right_rows.len() {
            (&left_rows, false)
        } else {
            (&right_rows, true)
        };
        let small_hists = all_hists(data, tree_features, small, grad, hess);
        let large_hists: Vec<Vec<Bin>> = leaf
            .hists
            .iter()
            .zip(&small_hists)
            .map(|(p, c)| subtract_hist(p, c))
            .collect();
        let (left_hists, right_hists) = if large_is_left {
            (large_hists, small_hists)
        } else {
            (small_hists, large_hists)
        };
        let mut left = OpenLeaf {
            node: left_id,
            rows: left_rows,
            g: lg,
            h: lh,
            depth: leaf.depth + 1,
            hists: left_hists,
            best: None,
        };
        let mut right = OpenLeaf {
            node: right_id,
            rows: right_rows,
            g: rg,
            h: rh,
            depth: leaf.depth + 1,
            hists: right_hists,
            best: None,
        };
        evaluate(&mut left, data, tree_features, params, rng);
        evaluate(&mut right, data, tree_features, params, rng);
        open.push(left);
        open.push(right);
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{ColumnData, FeatureColumn, FeatureMatrix, RowKey};
    use crate::gbm::data::SplitMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> GrowParams {
        GrowParams {
            max_leaves: 4,
            max_depth: None,
            min_data_in_leaf: 1,
            min_sum_hessian: 0.0,
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            min_gain_to_split: 0.0,
            colsample_bynode: 1.0,
        }
    }

    fn data(cols: Vec<ColumnData>) -> BinnedData {
        let n = match &cols[0] {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Codes(v) => v.len(),
            ColumnData::Labels(v) => v.len(),
        };
        let fm = FeatureMatrix::new(
            (0..n).map(|i| RowKey { series: 0, day: i as u32 + 1 }).collect(),
            cols.into_iter()
                .enumerate()
                .map(|(i, data)| FeatureColumn {
                    name: format!("f{i}"),
                    data,
                })
                .collect(),
        )
        .unwrap();
        BinnedData::new(&fm, SplitMode::Exact).unwrap()
    }

    #[test]
    fn numeric_split_separates_step_function() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [0.0, 0.0, 0.0, 10.0, 10.0, 10.0];
        let d = data(vec![ColumnData::Numeric(x)]);
        // Residuals against a zero prediction: g = -2y, h = 2.
        let grad: Vec<f64> = y.iter().map(|v| -2.0 * v).collect();
        let hess = vec![2.0; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = grow(&d, (0..6).collect(), &grad, &hess, &[0], &params(), &mut rng);
        assert_eq!(t.predict(|_| 2.0), 0.0);
        assert_eq!(t.predict(|_| 5.0), 10.0);
        match &t.nodes[0] {
            TreeNode::Split { rule, .. } => assert_eq!(rule, &SplitRule::Threshold(3.5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn categorical_split_groups_codes_by_gradient() {
        let codes = vec![0, 1, 2, 0, 1, 2];
        let y = [5.0, 0.0, 5.0, 5.0, 0.0, 5.0];
        let d = data(vec![ColumnData::Codes(codes)]);
        let grad: Vec<f64> = y.iter().map(|v| -2.0 * v).collect();
        let hess = vec![2.0; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = params();
        p.max_leaves = 2;
        let t = grow(&d, (0..6).collect(), &grad, &hess, &[0], &p, &mut rng);
        assert_eq!(t.predict(|_| 1.0), 0.0);
        assert_eq!(t.predict(|_| 0.0), 5.0);
        assert_eq!(t.predict(|_| 2.0), 5.0);
        // Unseen code goes right.
        assert_eq!(t.predict(|_| 7.0), t.predict(|_| 1.0));
    }

    #[test]
    fn equal_gain_prefers_lowest_feature() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let d = data(vec![ColumnData::Numeric(x.clone()), ColumnData::Numeric(x)]);
        let grad = vec![-2.0, -2.0, 2.0, 2.0];
        let hess = vec![2.0; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = params();
        p.max_leaves = 2;
        let t = grow(&d, (0..4).collect(), &grad, &hess, &[0, 1], &p, &mut rng);
        assert!(matches!(t.nodes[0], TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn min_data_in_leaf_holds() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let grad: Vec<f64> = (0..50).map(|i| if i % 7 == 0 { -9.0 } else { 1.0 }).collect();
        let hess = vec![2.0; 50];
        let d = data(vec![ColumnData::Numeric(x)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = params();
        p.max_leaves = 8;
        p.min_data_in_leaf = 6;
        let t = grow(&d, (0..50).collect(), &grad, &hess, &[0], &p, &mut rng);
        assert!(t.num_leaves() > 1);
        assert!(t.leaves().all(|(_, n)| n >= 6));
    }
}
