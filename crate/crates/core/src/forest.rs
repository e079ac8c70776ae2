//! Random-forest binary classifier: bootstrap-sampled CART trees grown on
//! Gini impurity with a random feature subset per node, probability leaves,
//! and out-of-bag permutation importance.

use std::io::{Read, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const FOREST_VERSION: &str = "appdyn-forest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// `None` means `ceil(sqrt(p))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            max_depth: None,
            min_leaf: 2,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("min_leaf must be at least 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::InvalidConfig("features_per_split must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// `probs = [P(class 0), P(class 1)]`.
    Leaf { probs: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_probs(&self, x: &[f64]) -> [f64; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { probs } => return *probs,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    fn vote(&self, x: &[f64]) -> u8 {
        u8::from(self.leaf_probs(x)[1] > 0.5)
    }

    fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: String,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Mean OOB accuracy drop per permuted feature, clipped at 0.
    pub oob_importance: Vec<f64>,
    /// Accuracy of the OOB vote over rows left out by at least one tree.
    pub oob_accuracy: Option<f64>,
    /// Accuracy of each tree on its own out-of-bag rows.
    pub tree_oob_accuracy: Vec<Option<f64>>,
    /// Set when training saw a single class.
    pub constant_class: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub label: u8,
    /// Mean leaf probability of class 1.
    pub probability: f64,
}

/// Metrics with per-class rows ordered (positive, negative). Precision of a
/// class that is never predicted is 0, as is recall of an absent class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub n: usize,
}

fn check_matrix(x: &[Vec<f64>], y: &[u8]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if x.len() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(Error::invalid("training set has no features"));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != p {
            return Err(Error::invalid(format!("row {i} has {} features, expected {p}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("row {i} has a non-finite entry")));
        }
    }
    if let Some(l) = y.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("label {l} is not binary")));
    }
    Ok(p)
}

fn gini(n1: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let q = n1 as f64 / n as f64;
    2.0 * q * (1.0 - q)
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u8],
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn leaf(rows: &[usize], y: &[u8]) -> Node {
        let n1 = rows.iter().filter(|&&r| y[r] == 1).count() as f64;
        let p1 = n1 / rows.len() as f64;
        Node::Leaf { probs: [1.0 - p1, p1] }
    }

    fn best_split(&self, rows: &[usize], rng: &mut rng::Rng) -> Option<Best> {
        let n = rows.len();
        let n1 = rows.iter().filter(|&&r| self.y[r] == 1).count();
        let parent = gini(n1, n);
        let p = self.x[0].len();
        let mut features = index::sample(rng, p, self.mtry.min(p)).into_vec();
        features.sort_unstable();
        let mut best: Option<Best> = None;
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(n);
        for f in features {
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left1 = 0usize;
            for i in 0..n - 1 {
                left1 += sorted[i].1 as usize;
                let nl = i + 1;
                if sorted[i].0 == sorted[i + 1].0 || nl < self.cfg.min_leaf || n - nl < self.cfg.min_leaf {
                    continue;
                }
                let child = (nl as f64 * gini(left1, nl) + (n - nl) as f64 * gini(n1 - left1, n - nl)) / n as f64;
                let gain = parent - child;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold: 0.5 * (sorted[i].0 + sorted[i + 1].0),
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, rng: &mut rng::Rng) {
        // (node slot, rows, depth)
        self.nodes.push(Grower::leaf(&rows, self.y));
        let mut stack = vec![(0usize, rows, 0usize)];
        while let Some((slot, rows, depth)) = stack.pop() {
            let n1 = rows.iter().filter(|&&r| self.y[r] == 1).count();
            let pure = n1 == 0 || n1 == rows.len();
            let deep = self.cfg.max_depth.is_some_and(|d| depth >= d);
            if pure || deep || rows.len() < 2 * self.cfg.min_leaf {
                continue;
            }
            let Some(best) = self.best_split(&rows, rng) else {
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&i| self.x[i][best.feature] <= best.threshold);
            let left = self.nodes.len();
            self.nodes.push(Grower::leaf(&l, self.y));
            self.nodes.push(Grower::leaf(&r, self.y));
            self.nodes[slot] = Node::Split {
                feature: best.feature,
                threshold: best.threshold,
                left,
                right: left + 1,
            };
            stack.push((left + 1, r, depth + 1));
            stack.push((left, l, depth + 1));
        }
    }
}

struct TreeResult {
    tree: Tree,
    oob: Vec<usize>,
    oob_accuracy: Option<f64>,
    /// Accuracy drop per feature (unclipped), `None` without OOB rows.
    drops: Option<Vec<f64>>,
}

fn train_tree(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig, mtry: usize, t: usize) -> TreeResult {
    let n = x.len();
    let mut rng = rng::substream(cfg.seed, "forest-tree", t as u64);
    let mut in_bag = vec![false; n];
    let rows: Vec<usize> = (0..n)
        .map(|_| {
            let r = rng.gen_range(0..n);
            in_bag[r] = true;
            r
        })
        .collect();
    let mut g = Grower {
        x,
        y,
        cfg,
        mtry,
        nodes: Vec::new(),
    };
    g.grow(rows, &mut rng);
    let tree = Tree { nodes: g.nodes };
    let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
    if oob.is_empty() {
        return TreeResult {
            tree,
            oob,
            oob_accuracy: None,
            drops: None,
        };
    }
    let correct = |rows: &mut dyn Iterator<Item = (usize, u8)>| rows.filter(|&(i, v)| v == y[i]).count();
    let base = correct(&mut oob.iter().map(|&i| (i, tree.vote(&x[i]))));
    let mut drops = vec![0.0; x[0].len()];
    let mut perm_rng = rng::substream(cfg.seed, "forest-permute", t as u64);
    let mut row = Vec::new();
    for f in tree.used_features() {
        let mut shuffled: Vec<f64> = oob.iter().map(|&i| x[i][f]).collect();
        shuffled.shuffle(&mut perm_rng);
        let permuted = correct(&mut oob.iter().zip(&shuffled).map(|(&i, &v)| {
            row.clear();
            row.extend_from_slice(&x[i]);
            row[f] = v;
            (i, tree.vote(&row))
        }));
        drops[f] = (base as f64 - permuted as f64) / oob.len() as f64;
    }
    TreeResult {
        tree,
        oob_accuracy: Some(base as f64 / oob.len() as f64),
        oob,
        drops: Some(drops),
    }
}

/// Trains a forest. Trees are grown in parallel from per-tree substreams and
/// assembled in index order, so the result does not depend on thread count.
pub fn train(x: &[Vec<f64>], y: &[u8], cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate()?;
    let p = check_matrix(x, y)?;
    let n1 = y.iter().filter(|&&l| l == 1).count();
    if n1 == 0 || n1 == y.len() {
        let class = u8::from(n1 > 0);
        log::warn!("training labels are all {class}; returning a constant classifier");
        let mut probs = [0.0; 2];
        probs[class as usize] = 1.0;
        return Ok(Forest {
            version: FOREST_VERSION.into(),
            n_features: p,
            trees: vec![Tree {
                nodes: vec![Node::Leaf { probs }],
            }],
            oob_importance: vec![0.0; p],
            oob_accuracy: None,
            tree_oob_accuracy: vec![None],
            constant_class: Some(class),
        });
    }
    let mtry = cfg.features_per_split.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize);
    let results: Vec<TreeResult> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| train_tree(x, y, cfg, mtry, t))
        .collect();

    let mut importance = vec![0.0; p];
    let mut with_oob = 0usize;
    let mut p1_sum = vec![0.0; x.len()];
    let mut votes = vec![(0usize, 0usize); x.len()];
    for r in &results {
        if let Some(d) = &r.drops {
            with_oob += 1;
            for (acc, v) in importance.iter_mut().zip(d) {
                *acc += v;
            }
        }
        for &i in &r.oob {
            let probs = r.tree.leaf_probs(&x[i]);
            p1_sum[i] += probs[1];
            votes[i].0 += 1;
            votes[i].1 += usize::from(probs[1] > 0.5);
        }
    }
    if with_oob > 0 {
        for v in &mut importance {
            *v = (*v / with_oob as f64).max(0.0);
        }
    }
    let scored: Vec<bool> = votes
        .iter()
        .enumerate()
        .filter(|(_, v)| v.0 > 0)
        .map(|(i, &(n, ones))| u8::from(2 * ones > n) == y[i])
        .collect();
    let oob_accuracy = (!scored.is_empty()).then(|| scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64);
    let tree_oob_accuracy = results.iter().map(|r| r.oob_accuracy).collect();
    Ok(Forest {
        version: FOREST_VERSION.into(),
        n_features: p,
        trees: results.into_iter().map(|r| r.tree).collect(),
        oob_importance: importance,
        oob_accuracy,
        tree_oob_accuracy,
        constant_class: None,
    })
}

impl Forest {
    /// Majority vote of the trees; an even split goes to class 0.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.n_features {
            return Err(Error::invalid(format!(
                "row has {} features, the forest expects {}",
                x.len(),
                self.n_features
            )));
        }
        let mut p1 = 0.0;
        let mut ones = 0usize;
        for t in &self.trees {
            let probs = t.leaf_probs(x);
            p1 += probs[1];
            ones += usize::from(probs[1] > 0.5);
        }
        Ok(Prediction {
            label: u8::from(2 * ones > self.trees.len()),
            probability: p1 / self.trees.len() as f64,
        })
    }

    pub fn predict_all(&self, x: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        x.iter().map(|r| self.predict(r)).collect()
    }

    /// Feature indices by decreasing importance, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_features).collect();
        idx.sort_by(|&a, &b| self.oob_importance[b].total_cmp(&self.oob_importance[a]).then(a.cmp(&b)));
        idx
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read_json(input: impl Read) -> Result<Forest> {
        let f: Forest = serde_json::from_reader(input)?;
        if f.version != FOREST_VERSION {
            return Err(Error::invalid(format!("unsupported forest version `{}`", f.version)));
        }
        Ok(f)
    }

    pub fn evaluate(&self, x: &[Vec<f64>], y: &[u8]) -> Result<Evaluation> {
        let pred: Vec<u8> = self.predict_all(x)?.iter().map(|p| p.label).collect();
        evaluate_labels(&pred, y)
    }
}

/// Accuracy and per-class precision/recall, classes ordered (1, 0).
pub fn evaluate_labels(predicted: &[u8], actual: &[u8]) -> Result<Evaluation> {
    if predicted.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if predicted.len() != actual.len() {
        return Err(Error::invalid("prediction and label counts differ"));
    }
    let mut m = [[0usize; 2]; 2]; // m[actual][predicted]
    for (&p, &a) in predicted.iter().zip(actual) {
        m[a as usize][p as usize] += 1;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let class = |c: usize| {
        let tp = m[c][c];
        (ratio(tp, m[0][c] + m[1][c]), ratio(tp, m[c][0] + m[c][1]))
    };
    let (p1, r1) = class(1);
    let (p0, r0) = class(0);
    Ok(Evaluation {
        accuracy: ratio(m[0][0] + m[1][1], predicted.len()),
        precision: [p1, p0],
        recall: [r1, r0],
        n: predicted.len(),
    })
}
