//! Random forest binary classifier used as the stacking learner.
//!
//! Trees are grown on bootstrap resamples with Gini splits over a random
//! subset of features at each node; the forest score is the mean of the
//! positive-class fractions of the leaves reached.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, StreamId};
use crate::stacking::FeatureMatrix;

const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    #[default]
    None,
    /// weights inversely proportional to class frequency
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
    #[serde(default)]
    pub class_weight: ClassWeight,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_samples_leaf: 5,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed: 0,
            class_weight: ClassWeight::None,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::domain("forest needs at least one tree"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::domain("min_samples_leaf must be at least 1"));
        }
        if let MaxFeatures::Count(0) = self.max_features {
            return Err(Error::domain("max_features must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        /// (weighted) positive fraction of the training rows in the leaf
        value: f64,
        /// bootstrap rows that reached the leaf
        samples: u32,
    },
    Split {
        feature: u32,
        threshold: f64,
        gain: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature as usize] <= *threshold { left } else { right };
                }
            }
        }
    }

    /// Visits every leaf as `(value, samples)`.
    pub fn leaves(&self) -> Vec<(f64, u32)> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            match n {
                Node::Leaf { value, samples } => out.push((*value, *samples)),
                Node::Split { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    /// Gains of every split in the tree.
    pub fn split_gains(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if let Node::Split { gain, left, right, .. } = n {
                out.push(*gain);
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub columns: Vec<String>,
    pub trees: Vec<Node>,
    /// Set when the training targets had a single class; the model then
    /// predicts that class everywhere.
    #[serde(default)]
    pub single_class: Option<u8>,
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.columns.len() {
            return Err(Error::Schema(format!(
                "row has {} features, model expects {}",
                x.len(),
                self.columns.len()
            )));
        }
        if let Some(c) = self.single_class {
            return Ok(c as f64);
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Scores every row of `features`; column names must match training.
    pub fn predict_matrix(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.columns() != self.columns.as_slice() {
            return Err(Error::Schema(format!(
                "feature columns {:?} differ from model columns {:?}",
                features.columns(),
                self.columns
            )));
        }
        features.rows().map(|r| self.predict_proba(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let model = ForestModel::deserialize(&mut de)?;
        de.end()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Trains a forest on `features` and 0/1 `targets`.
pub fn fit(features: &FeatureMatrix, targets: &[u8], params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    let n = features.n_rows();
    if n == 0 {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if targets.len() != n {
        return Err(Error::Schema(format!("{n} feature rows but {} targets", targets.len())));
    }
    if targets.iter().any(|&y| y > 1) {
        return Err(Error::invalid("targets must be 0 or 1"));
    }
    let n_pos = targets.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == n {
        let class = u8::from(n_pos == n);
        log::warn!("training targets contain only class {class}; fitting a constant model");
        return Ok(ForestModel {
            params: *params,
            columns: features.columns().to_vec(),
            trees: Vec::new(),
            single_class: Some(class),
        });
    }

    let data = TrainingData::new(features, targets, params.class_weight, n_pos);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(params.seed, StreamId::new(0, i as u32, "forest-tree"));
            data.grow_tree(params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        params: *params,
        columns: features.columns().to_vec(),
        trees,
        single_class: None,
    })
}

struct TrainingData {
    n_rows: usize,
    n_features: usize,
    class_weight: [f64; 2],
    // per feature: entries sorted by value (ties by row index)
    order: Vec<Vec<Entry>>,
}

#[derive(Clone, Copy)]
struct Entry {
    value: f64,
    row: u32,
    count: u16,
    class: u8,
}

impl TrainingData {
    fn new(features: &FeatureMatrix, targets: &[u8], weighting: ClassWeight, n_pos: usize) -> Self {
        let n = features.n_rows();
        let order = (0..features.n_cols())
            .map(|j| {
                let mut entries: Vec<Entry> = features
                    .column(j)
                    .zip(targets)
                    .enumerate()
                    .map(|(r, (value, &class))| Entry {
                        value,
                        row: r as u32,
                        count: 0,
                        class,
                    })
                    .collect();
                entries.sort_by(|a, b| a.value.total_cmp(&b.value));
                entries
            })
            .collect();
        let class_weight = match weighting {
            ClassWeight::None => [1.0, 1.0],
            ClassWeight::Balanced => [n as f64 / (2.0 * (n - n_pos) as f64), n as f64 / (2.0 * n_pos as f64)],
        };
        Self {
            n_rows: n,
            n_features: features.n_cols(),
            class_weight,
            order,
        }
    }

    fn grow_tree<R: Rng>(&self, params: &ForestParams, rng: &mut R) -> Node {
        let n = self.n_rows;
        let mut counts = vec![0u16; n];
        if params.bootstrap {
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
        } else {
            counts.fill(1);
        }
        let sorted: Vec<Vec<Entry>> = self
            .order
            .iter()
            .map(|o| {
                o.iter()
                    .filter_map(|e| {
                        let count = counts[e.row as usize];
                        (count > 0).then_some(Entry { count, ..*e })
                    })
                    .collect()
            })
            .collect();
        let len = sorted[0].len();
        let mut grower = Grower {
            class_weight: self.class_weight,
            sorted,
            scratch: Vec::with_capacity(len),
            goes_left: vec![false; n],
            min_leaf: params.min_samples_leaf as u32,
            n_features: self.n_features,
            n_try: params.max_features.resolve(self.n_features),
        };
        grower.grow(0, len, rng)
    }
}

struct Grower {
    class_weight: [f64; 2],
    sorted: Vec<Vec<Entry>>,
    scratch: Vec<Entry>,
    goes_left: Vec<bool>,
    min_leaf: u32,
    n_features: usize,
    n_try: usize,
}

#[derive(Clone, Copy, Default)]
struct Totals {
    samples: u32,
    weight: f64,
    positive: f64,
}

impl Totals {
    fn add(&mut self, e: &Entry, class_weight: &[f64; 2]) {
        let w = e.count as f64 * class_weight[e.class as usize];
        self.samples += e.count as u32;
        self.weight += w;
        if e.class == 1 {
            self.positive += w;
        }
    }

    fn gini(&self) -> f64 {
        if self.weight <= 0.0 {
            return 0.0;
        }
        let p = self.positive / self.weight;
        2.0 * p * (1.0 - p)
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower {
    fn grow<R: Rng>(&mut self, lo: usize, hi: usize, rng: &mut R) -> Node {
        let mut totals = Totals::default();
        for e in &self.sorted[0][lo..hi] {
            totals.add(e, &self.class_weight);
        }
        let leaf = Node::Leaf {
            value: totals.positive / totals.weight,
            samples: totals.samples,
        };
        let pure = totals.positive <= 0.0 || totals.positive >= totals.weight;
        if pure || totals.samples < 2 * self.min_leaf {
            return leaf;
        }
        let Some(best) = self.best_split(lo, hi, &totals, rng) else {
            return leaf;
        };
        let mid = self.partition(lo, hi, &best);
        let left = self.grow(lo, mid, rng);
        let right = self.grow(mid, hi, rng);
        Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            gain: best.gain,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn best_split<R: Rng>(&self, lo: usize, hi: usize, totals: &Totals, rng: &mut R) -> Option<BestSplit> {
        let mut features = sample(rng, self.n_features, self.n_try).into_vec();
        // ascending order makes equal gains resolve to the lowest feature index
        features.sort_unstable();
        let parent = totals.gini();
        let scale = 2.0 / totals.weight;
        let mut best: Option<BestSplit> = None;
        for f in features {
            let rows = &self.sorted[f][lo..hi];
            let mut left = Totals::default();
            for i in 0..rows.len() - 1 {
                left.add(&rows[i], &self.class_weight);
                let a = rows[i].value;
                let b = rows[i + 1].value;
                if a == b || left.samples < self.min_leaf {
                    continue;
                }
                if totals.samples - left.samples < self.min_leaf {
                    break;
                }
                let right_weight = totals.weight - left.weight;
                let right_positive = totals.positive - left.positive;
                // weighted child impurity w_l*g_l + w_r*g_r, halved
                let child = left.positive * (left.weight - left.positive) / left.weight
                    + right_positive * (right_weight - right_positive) / right_weight;
                let gain = parent - scale * child;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = a + (b - a) / 2.0;
                    if !(threshold < b) {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    /// Stable-partitions every feature's sorted slice into left then right
    /// rows; returns the boundary.
    fn partition(&mut self, lo: usize, hi: usize, split: &BestSplit) -> usize {
        let key = &self.sorted[split.feature][lo..hi];
        let n_left = key.partition_point(|e| e.value <= split.threshold);
        for (i, e) in key.iter().enumerate() {
            self.goes_left[e.row as usize] = i < n_left;
        }
        for f in 0..self.sorted.len() {
            if f == split.feature {
                continue;
            }
            let slice = &mut self.sorted[f][lo..hi];
            self.scratch.clear();
            let mut l = 0;
            for i in 0..slice.len() {
                let e = slice[i];
                if self.goes_left[e.row as usize] {
                    slice[l] = e;
                    l += 1;
                } else {
                    self.scratch.push(e);
                }
            }
            slice[l..].copy_from_slice(&self.scratch);
        }
        lo + n_left
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: &[&str], rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::new(
            cols.iter().map(|s| s.to_string()).collect(),
            rows.iter().flatten().copied().collect(),
        )
        .unwrap()
    }

    fn separable(n: usize) -> (FeatureMatrix, Vec<u8>) {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1) as f64;
                // keep a clean margin around 0.5
                vec![if x < 0.5 { x * 0.9 } else { 0.55 + (x - 0.5) * 0.9 }]
            })
            .collect();
        let y = rows.iter().map(|r| u8::from(r[0] > 0.5)).collect();
        (matrix(&["x"], &rows), y)
    }

    #[test]
    fn learns_clean_threshold() {
        let (x, y) = separable(200);
        let model = fit(&x, &y, &ForestParams { seed: 5, ..Default::default() }).unwrap();
        let scores = model.predict_matrix(&x).unwrap();
        let correct = scores.iter().zip(&y).filter(|(s, &t)| u8::from(**s >= 0.5) == t).count();
        assert!(correct as f64 / 200.0 >= 0.95, "{correct}");
    }

    #[test]
    fn single_class_gives_constant_model() {
        let (x, _) = separable(30);
        let model = fit(&x, &vec![0; 30], &ForestParams::default()).unwrap();
        assert_eq!(model.single_class, Some(0));
        for v in [0.0, 0.7, 10.0] {
            assert_eq!(model.predict_proba(&[v]).unwrap(), 0.0);
        }
    }

    #[test]
    fn prediction_is_mean_of_leaves() {
        let leaf = |v| Node::Leaf { value: v, samples: 5 };
        let mut model = ForestModel {
            params: ForestParams::default(),
            columns: vec!["a".into()],
            trees: vec![leaf(0.3)],
            single_class: None,
        };
        assert_eq!(model.predict_proba(&[1.0]).unwrap(), 0.3);
        model.trees = vec![leaf(0.2), leaf(0.8)];
        assert_eq!(model.predict_proba(&[1.0]).unwrap(), 0.5);
        assert!(model.predict_proba(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn training_is_deterministic_and_serializable() {
        let (x, y) = separable(120);
        let params = ForestParams {
            seed: 77,
            n_trees: 10,
            ..Default::default()
        };
        let a = fit(&x, &y, &params).unwrap();
        let b = fit(&x, &y, &params).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let back = ForestModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn threshold_between_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let x = matrix(&["x"], &[vec![a], vec![a], vec![b], vec![b]]);
        let params = ForestParams {
            min_samples_leaf: 1,
            bootstrap: false,
            n_trees: 1,
            ..Default::default()
        };
        let model = fit(&x, &[0, 0, 1, 1], &params).unwrap();
        assert_eq!(model.predict_proba(&[a]).unwrap(), 0.0);
        assert_eq!(model.predict_proba(&[b]).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y) = separable(10);
        assert!(fit(&x, &y[..5], &ForestParams::default()).is_err());
        let bad = ForestParams {
            n_trees: 0,
            ..Default::default()
        };
        assert!(fit(&x, &y, &bad).is_err());
        let mut y2 = y.clone();
        y2[0] = 2;
        assert!(fit(&x, &y2, &ForestParams::default()).is_err());
    }
}
