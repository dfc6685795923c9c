//! Random forest classifier with Gini splits and leaf class proportions.
//!
//! Features are binned once per fit into their sorted unique values, so a
//! node's split search costs one pass over the node plus one sweep over the
//! occupied bins. Pair training sets keep their factorized layout: a pair
//! feature is looked up through the control or experimental subject index
//! and the `m * n` feature rows are never materialized.
//!
//! Tree `t` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to stream
//! `t`, so fits are reproducible whatever the thread count.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{
    ClassProbabilities, PairLearner, PairRows, PairTrainingSet, ProbabilisticClassifier,
};
use crate::score::Score;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            mtry: None,
            min_leaf: 5,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn mtry_for(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((n_features as f64).sqrt().ceil() as usize).max(1))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidValue("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidValue("min_leaf must be at least 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidValue("max_depth must be at least 1".into()));
        }
        let mtry = self.mtry_for(n_features);
        if mtry == 0 || mtry > n_features.max(1) {
            return Err(Error::InvalidValue(format!(
                "mtry must be in 1..={n_features}, got {mtry}"
            )));
        }
        Ok(())
    }
}

const LEAF: u32 = u32::MAX;

/// A fitted tree in flat array form. `feature[k] == u32::MAX` marks a leaf;
/// internal nodes send `x[feature] <= threshold` to `left`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<u32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    /// Class proportions of the training samples reaching each node.
    pub value: Vec<[f64; 3]>,
}

impl Tree {
    /// A single leaf with the given class proportions.
    pub fn leaf(value: [f64; 3]) -> Self {
        Tree {
            feature: vec![LEAF],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            value: vec![value],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.n_nodes()];
        let mut max = 0;
        for k in 0..self.n_nodes() {
            if self.feature[k] != LEAF {
                for c in [self.left[k], self.right[k]] {
                    depth[c as usize] = depth[k] + 1;
                    max = max.max(depth[k] + 1);
                }
            }
        }
        max
    }

    pub fn predict(&self, x: &[f64]) -> &[f64; 3] {
        let mut k = 0usize;
        while self.feature[k] != LEAF {
            k = if x[self.feature[k] as usize] <= self.threshold[k] {
                self.left[k] as usize
            } else {
                self.right[k] as usize
            };
        }
        &self.value[k]
    }

    pub(crate) fn check(&self, n_features: usize) -> Result<()> {
        let n = self.n_nodes();
        let consistent = n > 0
            && [self.threshold.len(), self.left.len(), self.right.len(), self.value.len()]
                .iter()
                .all(|&l| l == n);
        if !consistent {
            return Err(Error::ModelFormat("tree arrays have inconsistent lengths".into()));
        }
        for k in 0..n {
            if self.feature[k] != LEAF {
                let ok = (self.feature[k] as usize) < n_features
                    && (self.left[k] as usize) > k
                    && (self.left[k] as usize) < n
                    && (self.right[k] as usize) > k
                    && (self.right[k] as usize) < n;
                if !ok {
                    return Err(Error::ModelFormat(format!("tree node {k} is malformed")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    n_features: usize,
    trees: Vec<Tree>,
}

impl RandomForest {
    pub fn from_trees(n_features: usize, trees: Vec<Tree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::ModelFormat("a forest needs at least one tree".into()));
        }
        for t in &trees {
            t.check(n_features)?;
        }
        Ok(RandomForest { n_features, trees })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Structural checks for a forest read back from storage.
    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::ModelFormat("a forest needs at least one tree".into()));
        }
        self.trees.iter().try_for_each(|t| t.check(self.n_features))
    }
}

impl ProbabilisticClassifier for RandomForest {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, features: &[f64]) -> Result<ClassProbabilities> {
        if features.len() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                found: features.len(),
            });
        }
        let mut acc = [0.0; 3];
        for t in &self.trees {
            let v = t.predict(features);
            for c in 0..3 {
                acc[c] += v[c];
            }
        }
        let k = self.trees.len() as f64;
        Ok(ClassProbabilities::from_array(acc.map(|a| a / k)))
    }
}

/// Fits a forest on dense feature rows.
pub fn fit_forest(config: &ForestConfig, features: &[Vec<f64>], labels: &[Score]) -> Result<RandomForest> {
    if features.is_empty() {
        return Err(Error::Domain("cannot fit a forest on empty data".into()));
    }
    if labels.len() != features.len() {
        return Err(Error::Shape {
            expected: features.len(),
            found: labels.len(),
        });
    }
    let p = features[0].len();
    if let Some(bad) = features.iter().find(|r| r.len() != p) {
        return Err(Error::Shape {
            expected: p,
            found: bad.len(),
        });
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidValue("features must be finite".into()));
    }
    let columns: Vec<Vec<f64>> = (0..p)
        .map(|f| features.iter().map(|r| r[f]).collect())
        .collect();
    let (values, bins): (Vec<_>, Vec<_>) = columns.iter().map(|c| bin_column(c)).unzip();
    let samples: Vec<(u32, u32)> = (0..features.len() as u32).map(|r| (r, 0)).collect();
    let table = Binned {
        values,
        first: bins,
        second: Vec::new(),
        split_at: p,
        samples,
        classes: labels.iter().map(|s| s.class_index() as u8).collect(),
    };
    grow_forest(config, &table, config.seed)
}

impl PairLearner for ForestConfig {
    type Model = RandomForest;

    fn fit_pairs(&self, pairs: &PairTrainingSet<'_>, seed: u64) -> Result<RandomForest> {
        let d = pairs.dim();
        if pairs.x.iter().chain(&pairs.u).flat_map(|r| r.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("features must be finite".into()));
        }
        let mut values = Vec::with_capacity(2 * d);
        let mut first = Vec::with_capacity(d);
        let mut second = Vec::with_capacity(d);
        for f in 0..d {
            let (v, b) = bin_column(&pairs.x.iter().map(|r| r[f]).collect::<Vec<_>>());
            values.push(v);
            first.push(b);
        }
        for f in 0..d {
            let (v, b) = bin_column(&pairs.u.iter().map(|r| r[f]).collect::<Vec<_>>());
            values.push(v);
            second.push(b);
        }
        let samples: Vec<(u32, u32)> = match &pairs.rows {
            PairRows::Product { m, n } => (0..*m as u32)
                .flat_map(|i| (0..*n as u32).map(move |j| (i, j)))
                .collect(),
            PairRows::Matched(v) => v.iter().map(|&(i, j)| (i as u32, j as u32)).collect(),
        };
        let table = Binned {
            values,
            first,
            second,
            split_at: d,
            samples,
            classes: pairs.labels.iter().map(|s| s.class_index() as u8).collect(),
        };
        grow_forest(self, &table, seed)
    }
}

/// Sorted unique values and the bin index of every entry.
fn bin_column(col: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let mut values = col.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let bins = col
        .iter()
        .map(|v| values.binary_search_by(|p| p.total_cmp(v)).unwrap_or(0) as u32)
        .collect();
    (values, bins)
}

/// Binned training table. Row `r` is `samples[r] = (a, b)`; features below
/// `split_at` are looked up as `first[f][a]`, the others as
/// `second[f - split_at][b]`. Dense tables use `a = r` and no `second`.
struct Binned {
    values: Vec<Vec<f64>>,
    first: Vec<Vec<u32>>,
    second: Vec<Vec<u32>>,
    split_at: usize,
    samples: Vec<(u32, u32)>,
    classes: Vec<u8>,
}

impl Binned {
    fn n_features(&self) -> usize {
        self.values.len()
    }

    fn n_rows(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Clone, Copy)]
struct Sample {
    a: u32,
    b: u32,
    weight: u32,
    class: u8,
}

#[derive(Clone, Copy)]
struct Split {
    feature: usize,
    bin: u32,
    threshold: f64,
    score: f64,
}

fn grow_forest(config: &ForestConfig, table: &Binned, seed: u64) -> Result<RandomForest> {
    let p = table.n_features();
    config.validate(p)?;
    if table.n_rows() == 0 {
        return Err(Error::Domain("cannot fit a forest on empty data".into()));
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            grow_tree(config, table, &mut rng)
        })
        .collect();
    Ok(RandomForest {
        n_features: p,
        trees,
    })
}

fn grow_tree(config: &ForestConfig, table: &Binned, rng: &mut ChaCha8Rng) -> Tree {
    let n_rows = table.n_rows();
    let weights: Vec<u32> = if config.bootstrap {
        let mut w = vec![0u32; n_rows];
        for _ in 0..n_rows {
            w[rng.random_range(0..n_rows)] += 1;
        }
        w
    } else {
        vec![1; n_rows]
    };
    let mut samples: Vec<Sample> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0)
        .map(|(r, &w)| Sample {
            a: table.samples[r].0,
            b: table.samples[r].1,
            weight: w,
            class: table.classes[r],
        })
        .collect();

    let p = table.n_features();
    let mtry = config.mtry_for(p);
    let mut tree = Tree {
        feature: Vec::new(),
        threshold: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
        value: Vec::new(),
    };
    let mut scratch = Scratch::default();
    let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];
    push_node(&mut tree);
    while let Some((node, start, end, depth)) = stack.pop() {
        let node_samples = &mut samples[start..end];
        let counts = class_counts(node_samples);
        let total: u64 = counts.iter().sum();
        tree.value[node] = counts.map(|c| c as f64 / total as f64);

        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || total < 2 * config.min_leaf as u64 {
            continue;
        }
        let mut features = index::sample(rng, p, mtry).into_vec();
        features.sort_unstable();
        let Some(split) = best_split(table, node_samples, &features, &counts, config, &mut scratch)
        else {
            continue;
        };
        let mid = partition(table, node_samples, split.feature, split.bin);
        let (l, r) = (tree.n_nodes(), tree.n_nodes() + 1);
        push_node(&mut tree);
        push_node(&mut tree);
        tree.feature[node] = split.feature as u32;
        tree.threshold[node] = split.threshold;
        tree.left[node] = l as u32;
        tree.right[node] = r as u32;
        stack.push((r, start + mid, end, depth + 1));
        stack.push((l, start, start + mid, depth + 1));
    }
    tree
}

fn push_node(tree: &mut Tree) {
    tree.feature.push(LEAF);
    tree.threshold.push(0.0);
    tree.left.push(0);
    tree.right.push(0);
    tree.value.push([0.0; 3]);
}

fn class_counts(samples: &[Sample]) -> [u64; 3] {
    let mut c = [0u64; 3];
    for s in samples {
        c[s.class as usize] += u64::from(s.weight);
    }
    c
}

#[inline]
fn column<'t>(table: &'t Binned, feature: usize) -> (&'t [u32], bool) {
    if feature < table.split_at {
        (&table.first[feature], true)
    } else {
        (&table.second[feature - table.split_at], false)
    }
}

#[derive(Default)]
struct Scratch {
    hist: Vec<[u64; 3]>,
    sorted: Vec<(u32, u8, u32)>,
    occupied: Vec<(u32, [u64; 3])>,
}

fn sum_squares_over(c: &[u64; 3], w: u64) -> f64 {
    let w = w as f64;
    c.iter().map(|&k| (k as f64) * (k as f64)).sum::<f64>() / w
}

/// Maximizes `sum_c L_c^2 / W_L + sum_c R_c^2 / W_R`, which is equivalent to
/// minimizing the weighted Gini impurity of the children. Ties go to the
/// lowest feature index, then the lowest threshold.
fn best_split(
    table: &Binned,
    samples: &[Sample],
    features: &[usize],
    counts: &[u64; 3],
    config: &ForestConfig,
    scratch: &mut Scratch,
) -> Option<Split> {
    let total: u64 = counts.iter().sum();
    let parent = sum_squares_over(counts, total);
    let min_leaf = config.min_leaf as u64;
    let mut best: Option<Split> = None;

    for &f in features {
        let (col, by_first) = column(table, f);
        let n_bins = table.values[f].len();
        scratch.occupied.clear();
        if n_bins <= 2 * samples.len() {
            if scratch.hist.len() < n_bins {
                scratch.hist.resize(n_bins, [0; 3]);
            }
            let hist = &mut scratch.hist[..n_bins];
            for s in samples {
                let key = if by_first { s.a } else { s.b };
                hist[col[key as usize] as usize][s.class as usize] += u64::from(s.weight);
            }
            for (b, h) in hist.iter_mut().enumerate() {
                if *h != [0; 3] {
                    scratch.occupied.push((b as u32, *h));
                    *h = [0; 3];
                }
            }
        } else {
            scratch.sorted.clear();
            scratch.sorted.extend(samples.iter().map(|s| {
                let key = if by_first { s.a } else { s.b };
                (col[key as usize], s.class, s.weight)
            }));
            scratch.sorted.sort_unstable_by_key(|e| e.0);
            for &(b, c, w) in &scratch.sorted {
                match scratch.occupied.last_mut() {
                    Some((last, h)) if *last == b => h[c as usize] += u64::from(w),
                    _ => {
                        let mut h = [0u64; 3];
                        h[c as usize] = u64::from(w);
                        scratch.occupied.push((b, h));
                    }
                }
            }
        }

        let mut left = [0u64; 3];
        let mut w_left = 0u64;
        for k in 0..scratch.occupied.len().saturating_sub(1) {
            let (bin, h) = scratch.occupied[k];
            for c in 0..3 {
                left[c] += h[c];
            }
            w_left += h.iter().sum::<u64>();
            let w_right = total - w_left;
            if w_right < min_leaf {
                break;
            }
            if w_left < min_leaf {
                continue;
            }
            let right = [counts[0] - left[0], counts[1] - left[1], counts[2] - left[2]];
            let score = sum_squares_over(&left, w_left) + sum_squares_over(&right, w_right);
            if score - parent <= 1e-12 * total as f64 {
                continue;
            }
            if best.is_none_or(|b| score > b.score) {
                let lo = table.values[f][bin as usize];
                let hi = table.values[f][scratch.occupied[k + 1].0 as usize];
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(Split {
                    feature: f,
                    bin,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

/// Moves samples with `bin <= split_bin` to the front; returns their count.
fn partition(table: &Binned, samples: &mut [Sample], feature: usize, split_bin: u32) -> usize {
    let (col, by_first) = column(table, feature);
    let goes_left = |s: &Sample| col[(if by_first { s.a } else { s.b }) as usize] <= split_bin;
    let mut i = 0;
    let mut j = samples.len();
    while i < j {
        if goes_left(&samples[i]) {
            i += 1;
        } else {
            j -= 1;
            samples.swap(i, j);
        }
    }
    i
}
