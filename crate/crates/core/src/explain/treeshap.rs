//! Path-dependent TreeSHAP for boosted trees.
//!
//! Missing features are marginalized with the tree's own cover weights (hessian sums), so
//! no background dataset is needed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbt::{DecisionTree, FeatureMatrix, GbtModel, Node};

/// Attributions in margin (log-odds) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapValues {
    /// Expected model margin under the trees' cover weights.
    pub base_value: f64,
    /// `values[sample][feature]`.
    pub values: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
}

impl ShapValues {
    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// `base + sum(phi)` for one sample, which equals the model margin.
    pub fn reconstructed_margin(&self, sample: usize) -> f64 {
        self.base_value + self.values[sample].iter().sum::<f64>()
    }
}

fn child_fraction(tree: &DecisionTree, child: u32, parent_cover: f64) -> f64 {
    if parent_cover > 0.0 {
        tree.nodes[child as usize].cover() / parent_cover
    } else {
        0.5
    }
}

/// Cover-weighted mean leaf value.
pub fn tree_expectation(tree: &DecisionTree) -> f64 {
    fn walk(t: &DecisionTree, i: usize) -> f64 {
        match t.nodes[i] {
            Node::Leaf { value, .. } => value,
            Node::Split { left, right, cover, .. } => {
                child_fraction(t, left, cover) * walk(t, left as usize)
                    + child_fraction(t, right, cover) * walk(t, right as usize)
            }
        }
    }
    walk(tree, 0)
}

/// Base value of [`ShapValues`] for a model.
pub fn expected_margin(model: &GbtModel) -> f64 {
    model.base_score + model.learning_rate * model.trees.iter().map(tree_expectation).sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d = depth as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / (d + 1.0);
        path[i].weight = zero_fraction * path[i].weight * (d - i as f64) / (d + 1.0);
    }
}

fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let d = depth as f64;
    let PathElement {
        zero_fraction: zero,
        one_fraction: one,
        ..
    } = path[index];
    let mut next_one = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one * (d + 1.0) / ((i + 1) as f64 * one);
            next_one = tmp - path[i].weight * zero * (d - i as f64) / (d + 1.0);
        } else {
            path[i].weight = path[i].weight * (d + 1.0) / (zero * (d - i as f64));
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total permutation weight of the path with element `index` removed.
fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let d = depth as f64;
    let (zero, one) = (path[index].zero_fraction, path[index].one_fraction);
    let mut next_one = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * (d + 1.0) / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].weight - tmp * zero * (d - i as f64) / (d + 1.0);
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((d - i as f64) / (d + 1.0));
        }
    }
    total
}

struct Walk<'a> {
    tree: &'a DecisionTree,
    x: &'a [u8],
    scale: f64,
    phi: &'a mut [f64],
}

impl Walk<'_> {
    fn recurse(
        &mut self,
        node: usize,
        parent: &[PathElement],
        zero_fraction: f64,
        one_fraction: f64,
        feature: Option<usize>,
    ) {
        let mut path = parent.to_vec();
        extend_path(&mut path, zero_fraction, one_fraction, feature);
        match self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let el = path[i];
                    let f = el.feature.expect("only the root element has no feature");
                    self.phi[f] += w * (el.one_fraction - el.zero_fraction) * value * self.scale;
                }
            }
            Node::Split {
                feature: split,
                threshold,
                left,
                right,
                cover,
            } => {
                let split = split as usize;
                let (hot, cold) = if self.x[split] <= threshold {
                    (left, right)
                } else {
                    (right, left)
                };
                let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
                if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(split)) {
                    incoming_zero = path[k].zero_fraction;
                    incoming_one = path[k].one_fraction;
                    unwind_path(&mut path, k);
                }
                let hot_zero = child_fraction(self.tree, hot, cover) * incoming_zero;
                let cold_zero = child_fraction(self.tree, cold, cover) * incoming_zero;
                self.recurse(hot as usize, &path, hot_zero, incoming_one, Some(split));
                self.recurse(cold as usize, &path, cold_zero, 0.0, Some(split));
            }
        }
    }
}

/// Adds `scale` times one tree's exact Shapley values for sample `x` into `phi`.
pub fn tree_shap_single(tree: &DecisionTree, x: &[u8], scale: f64, phi: &mut [f64]) {
    let mut walk = Walk { tree, x, scale, phi };
    walk.recurse(0, &[], 1.0, 1.0, None);
}

fn check_width(model: &GbtModel, n: usize) -> Result<()> {
    if n != model.n_features {
        return Err(Error::Input(format!(
            "model expects {} features, sample has {n}",
            model.n_features
        )));
    }
    Ok(())
}

/// Per-feature attributions for one sample; they sum to `margin - expected_margin`.
pub fn tree_shap_sample(model: &GbtModel, x: &[u8]) -> Result<Vec<f64>> {
    check_width(model, x.len())?;
    let mut phi = vec![0.0; x.len()];
    for tree in &model.trees {
        tree_shap_single(tree, x, model.learning_rate, &mut phi);
    }
    Ok(phi)
}

/// Attributions for every row of `x`, computed in parallel.
pub fn tree_shap(model: &GbtModel, x: &FeatureMatrix, feature_names: Vec<String>) -> Result<ShapValues> {
    check_width(model, x.n_features())?;
    if feature_names.len() != x.n_features() {
        return Err(Error::Input(format!(
            "{} feature names for {} features",
            feature_names.len(),
            x.n_features()
        )));
    }
    let values = (0..x.n_rows())
        .into_par_iter()
        .map(|r| tree_shap_sample(model, &x.row(r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapValues {
        base_value: expected_margin(model),
        values,
        feature_names,
    })
}

/// Largest feature count accepted by [`brute_force_shap`].
pub const BRUTE_FORCE_MAX_FEATURES: usize = 16;

/// Expected tree output when only features in `known` (bitmask) are fixed to `x`.
fn conditional_expectation(tree: &DecisionTree, x: &[u8], known: u32) -> f64 {
    fn walk(t: &DecisionTree, i: usize, x: &[u8], known: u32) -> f64 {
        match t.nodes[i] {
            Node::Leaf { value, .. } => value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
                cover,
            } => {
                if known & (1 << feature) != 0 {
                    let next = if x[feature as usize] <= threshold { left } else { right };
                    walk(t, next as usize, x, known)
                } else {
                    child_fraction(t, left, cover) * walk(t, left as usize, x, known)
                        + child_fraction(t, right, cover) * walk(t, right as usize, x, known)
                }
            }
        }
    }
    walk(tree, 0, x, known)
}

/// Shapley values by enumerating every feature coalition. Exponential in the feature count;
/// meant as a reference for small models.
pub fn brute_force_shap(model: &GbtModel, x: &[u8]) -> Result<Vec<f64>> {
    check_width(model, x.len())?;
    let m = x.len();
    if m > BRUTE_FORCE_MAX_FEATURES {
        return Err(Error::Config(format!(
            "subset enumeration over {m} features exceeds the limit of {BRUTE_FORCE_MAX_FEATURES}"
        )));
    }
    let value = |mask: u32| -> f64 {
        model.learning_rate
            * model
                .trees
                .iter()
                .map(|t| conditional_expectation(t, x, mask))
                .sum::<f64>()
    };
    let values: Vec<f64> = (0..1u32 << m).map(value).collect();
    let mut factorial = vec![1.0f64; m + 1];
    for i in 1..=m {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        for mask in 0..1u32 << m {
            if mask & (1 << i) != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = factorial[s] * factorial[m - s - 1] / factorial[m];
            *p += weight * (values[(mask | (1 << i)) as usize] - values[mask as usize]);
        }
    }
    Ok(phi)
}
