use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbt::matrix::FeatureMatrix;
use crate::gbt::tree::{DecisionTree, Node};
use crate::seed::indexed_seed;

/// Splits must lower impurity by more than this.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `floor(sqrt(n_features))`, at least one.
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 400,
            max_depth: 15,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

/// Gini impurity of a node with the given class counts.
pub fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (counts[0] as f64 / n, counts[1] as f64 / n);
    1.0 - p0 * p0 - p1 * p1
}

/// Impurity decrease of splitting `parent` into `left` and the remainder.
pub fn gini_gain(parent: [usize; 2], left: [usize; 2]) -> f64 {
    let right = [parent[0] - left[0], parent[1] - left[1]];
    let n = (parent[0] + parent[1]) as f64;
    let nl = (left[0] + left[1]) as f64;
    gini(parent) - nl / n * gini(left) - (n - nl) / n * gini(right)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
}

impl RandomForest {
    /// Mean over trees of the resistant-class frequency in the reached leaf.
    pub fn proba(&self, token: impl Fn(usize) -> u8 + Copy) -> f64 {
        self.trees.iter().map(|t| t.predict(token)).sum::<f64>() / self.trees.len().max(1) as f64
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_features() != self.n_features {
            return Err(Error::Input(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.n_features()
            )));
        }
        Ok((0..x.n_rows()).map(|r| self.proba(|f| x.get(r, f))).collect())
    }
}

struct Grower<'a> {
    x: &'a FeatureMatrix,
    labels: &'a [u8],
    params: &'a ForestConfig,
    n_candidates: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> [usize; 2] {
        let ones = rows.iter().filter(|&&r| self.labels[r] == 1).count();
        [rows.len() - ones, ones]
    }

    fn best_split(&mut self, rows: &[usize], parent: [usize; 2]) -> Option<(usize, u8)> {
        let mut candidates =
            sample(&mut self.rng, self.x.n_features(), self.n_candidates).into_vec();
        candidates.sort_unstable();
        let mut best: Option<(f64, usize, u8)> = None;
        for f in candidates {
            let col = self.x.column(f);
            let mut bins = [[0usize; 2]; 5];
            for &r in rows {
                bins[col[r] as usize][self.labels[r] as usize] += 1;
            }
            let mut left = [0usize; 2];
            for (t, bin) in bins.iter().take(4).enumerate() {
                left[0] += bin[0];
                left[1] += bin[1];
                let nl = left[0] + left[1];
                if nl == 0 || nl == rows.len() {
                    continue;
                }
                let gain = gini_gain(parent, left);
                if gain > best.map_or(MIN_GAIN, |b| b.0) {
                    best = Some((gain, f, t as u8));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let counts = self.counts(&rows);
        let idx = self.nodes.len();
        let n = rows.len();
        self.nodes.push(Node::Leaf {
            value: counts[1] as f64 / n.max(1) as f64,
            cover: n as f64,
        });
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || depth >= self.params.max_depth || n < self.params.min_samples_split {
            return idx as u32;
        }
        let Some((feature, threshold)) = self.best_split(&rows, counts) else {
            return idx as u32;
        };
        let col = self.x.column(feature);
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| col[r] <= threshold);
        let left = self.grow(left, depth + 1);
        let right = self.grow(right, depth + 1);
        self.nodes[idx] = Node::Split {
            feature: feature as u32,
            threshold,
            left,
            right,
            cover: n as f64,
        };
        idx as u32
    }
}

fn fit_tree(x: &FeatureMatrix, labels: &[u8], params: &ForestConfig, seed: u64) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.n_rows();
    let rows: Vec<usize> = if params.bootstrap {
        let mut r: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        r.sort_unstable();
        r
    } else {
        (0..n).collect()
    };
    let mut grower = Grower {
        x,
        labels,
        params,
        n_candidates: params.max_features.resolve(x.n_features()),
        rng,
        nodes: Vec::new(),
    };
    grower.grow(rows, 0);
    DecisionTree {
        nodes: grower.nodes,
    }
}

/// Bagged Gini trees with per-node feature subsampling. Trees are grown in parallel
/// from independent seeds, so the result does not depend on the thread count.
pub fn fit_random_forest(x: &FeatureMatrix, labels: &[u8], params: &ForestConfig) -> Result<RandomForest> {
    if labels.len() != x.n_rows() || x.n_rows() == 0 {
        return Err(Error::Input(format!(
            "{} labels for {} rows",
            labels.len(),
            x.n_rows()
        )));
    }
    if params.n_trees == 0 || x.n_features() == 0 {
        return Err(Error::Config("forest needs at least one tree and one feature".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidData("labels must be 0 or 1".into()));
    }
    let trees = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|i| fit_tree(x, labels, params, indexed_seed(params.seed, i)))
        .collect();
    Ok(RandomForest {
        trees,
        n_features: x.n_features(),
    })
}
