use log::{debug, info};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClassWeights;
use crate::error::{Error, Result};
use crate::gbt::matrix::FeatureMatrix;
use crate::gbt::tree::{DecisionTree, Node};
use crate::nn::layers::sigmoid;
use crate::nn::loss::weighted_bce_loss;
use crate::seed::indexed_seed;

/// Largest token value a split threshold can take; `token <= 4` would send everything left.
const MAX_THRESHOLD: u8 = 3;
const FEATURE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of training rows drawn without replacement for each tree.
    pub subsample: f64,
    /// Fraction of features drawn without replacement for each tree.
    pub colsample: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian sum in each child of a split.
    pub min_child_weight: f64,
    /// Rounds without validation improvement before stopping; 0 disables.
    pub early_stopping_rounds: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_rounds: 300,
            max_depth: 6,
            learning_rate: 0.05,
            subsample: 0.7,
            colsample: 0.7,
            lambda: 1.0,
            min_child_weight: 1.0,
            early_stopping_rounds: 30,
            seed: 0,
        }
    }
}

impl GbtConfig {
    fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.learning_rate > 0.0)
            || !frac(self.subsample)
            || !frac(self.colsample)
            || !(self.lambda >= 0.0)
            || !(self.min_child_weight >= 0.0)
        {
            return Err(Error::Config("invalid boosting hyperparameters".into()));
        }
        Ok(())
    }
}

/// Boosted trees on the logit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
}

impl GbtModel {
    pub fn margin(&self, token: impl Fn(usize) -> u8 + Copy) -> f64 {
        self.base_score
            + self.learning_rate * self.trees.iter().map(|t| t.predict(token)).sum::<f64>()
    }

    fn check(&self, x: &FeatureMatrix) -> Result<()> {
        if x.n_features() != self.n_features {
            return Err(Error::Input(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.n_features()
            )));
        }
        Ok(())
    }

    pub fn margins(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..x.n_rows())
            .map(|r| self.margin(|f| x.get(r, f)))
            .collect())
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.margins(x)?.into_iter().map(sigmoid).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoostHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Number of trees kept.
    pub best_rounds: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitCandidate {
    pub gain: f64,
    pub feature: usize,
    pub threshold: u8,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn best_in_features(
    x: &FeatureMatrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    params: &GbtConfig,
) -> Option<SplitCandidate> {
    let (g_all, h_all) = rows
        .iter()
        .fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
    let parent = score(g_all, h_all, params.lambda);
    let mut best: Option<SplitCandidate> = None;
    for &f in features {
        let col = x.column(f);
        let mut g_bin = [0.0f64; 5];
        let mut h_bin = [0.0f64; 5];
        let mut n_bin = [0usize; 5];
        for &r in rows {
            let t = col[r] as usize;
            g_bin[t] += grad[r];
            h_bin[t] += hess[r];
            n_bin[t] += 1;
        }
        let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
        for t in 0..=MAX_THRESHOLD as usize {
            gl += g_bin[t];
            hl += h_bin[t];
            nl += n_bin[t];
            let nr = rows.len() - nl;
            let (gr, hr) = (g_all - gl, h_all - hl);
            if nl == 0 || nr == 0 || hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(gl, hl, params.lambda) + score(gr, hr, params.lambda) - parent);
            if gain > best.map_or(0.0, |b| b.gain) {
                best = Some(SplitCandidate {
                    gain,
                    feature: f,
                    threshold: t as u8,
                });
            }
        }
    }
    best
}

/// Highest-gain split over `features` (ascending) for the node holding `rows`.
/// Ties go to the earlier feature, then the lower threshold. `None` if no split has positive gain.
pub(crate) fn best_split(
    x: &FeatureMatrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    params: &GbtConfig,
) -> Option<SplitCandidate> {
    features
        .par_chunks(FEATURE_CHUNK)
        .map(|chunk| best_in_features(x, rows, grad, hess, chunk, params))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .fold(None, |best: Option<SplitCandidate>, c| match best {
            Some(b) if b.gain >= c.gain => Some(b),
            _ => Some(c),
        })
}

struct Grower<'a> {
    x: &'a FeatureMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    features: &'a [usize],
    params: &'a GbtConfig,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> u32 {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.grad[r], h + self.hess[r]));
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: -g / (h + self.params.lambda),
            cover: h,
        });
        if depth >= self.params.max_depth {
            return idx as u32;
        }
        let Some(split) = best_split(self.x, &rows, self.grad, self.hess, self.features, self.params)
        else {
            return idx as u32;
        };
        let col = self.x.column(split.feature);
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| col[r] <= split.threshold);
        let left = self.grow(left, depth + 1);
        let right = self.grow(right, depth + 1);
        self.nodes[idx] = Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left,
            right,
            cover: h,
        };
        idx as u32
    }
}

/// Grows one regression tree on gradient statistics with exact greedy splitting.
pub(crate) fn grow_tree(
    x: &FeatureMatrix,
    rows: Vec<usize>,
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    params: &GbtConfig,
) -> DecisionTree {
    let mut grower = Grower {
        x,
        grad,
        hess,
        features,
        params,
        nodes: Vec::new(),
    };
    grower.grow(rows, 0);
    DecisionTree {
        nodes: grower.nodes,
    }
}

fn draw(rng: &mut ChaCha8Rng, n: usize, fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n).collect();
    }
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut picked = sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

fn weighted_loss(margins: &[f64], labels: &[u8], weights: &ClassWeights) -> f64 {
    let p: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();
    weighted_bce_loss(&p, labels, weights)
}

/// Gradient boosting on class-weighted logistic loss.
///
/// `validation`, if given, drives early stopping and the model is truncated to the best round.
pub fn fit_gbt(
    x: &FeatureMatrix,
    labels: &[u8],
    weights: &ClassWeights,
    params: &GbtConfig,
    validation: Option<(&FeatureMatrix, &[u8])>,
) -> Result<(GbtModel, BoostHistory)> {
    params.validate()?;
    let n = x.n_rows();
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for {n} rows", labels.len())));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == n {
        return Err(Error::Config("boosting needs both classes in the training labels".into()));
    }
    if let Some((vx, vy)) = validation {
        if vx.n_features() != x.n_features() || vx.n_rows() != vy.len() {
            return Err(Error::Input("validation set does not match training features".into()));
        }
    }
    let prevalence = positives as f64 / n as f64;
    let mut model = GbtModel {
        base_score: (prevalence / (1.0 - prevalence)).ln(),
        learning_rate: params.learning_rate,
        trees: Vec::new(),
        n_features: x.n_features(),
    };
    let sample_weight: Vec<f64> = labels.iter().map(|&y| weights.weight(y)).collect();
    let mut margins = vec![model.base_score; n];
    let mut val_margins = validation.map(|(vx, _)| vec![model.base_score; vx.n_rows()]);
    let mut history = BoostHistory::default();
    let mut best: Option<(f64, usize)> = None;
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for round in 0..params.n_rounds {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = sample_weight[i] * (p - labels[i] as f64);
            hess[i] = sample_weight[i] * p * (1.0 - p);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(indexed_seed(params.seed, round as u64));
        let rows = draw(&mut rng, n, params.subsample);
        let features = draw(&mut rng, x.n_features(), params.colsample);
        let tree = grow_tree(x, rows, &grad, &hess, &features, params);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += params.learning_rate * tree.predict_row(x, i);
        }
        history.train_loss.push(weighted_loss(&margins, labels, weights));
        if let (Some((vx, vy)), Some(vm)) = (validation, val_margins.as_mut()) {
            for (i, m) in vm.iter_mut().enumerate() {
                *m += params.learning_rate * tree.predict_row(vx, i);
            }
            history.val_loss.push(weighted_loss(vm, vy, weights));
        }
        model.trees.push(tree);

        let Some(&val_loss) = history.val_loss.last() else {
            continue;
        };
        if params.early_stopping_rounds == 0 {
            continue;
        }
        if best.is_none_or(|(b, _)| val_loss < b) {
            best = Some((val_loss, round + 1));
        } else if round + 1 - best.unwrap().1 >= params.early_stopping_rounds {
            debug!("boosting stopped after round {round}");
            history.stopped_early = true;
            break;
        }
    }
    if let Some((_, keep)) = best {
        model.trees.truncate(keep);
    }
    history.best_rounds = model.trees.len();
    info!(
        "boosted {} trees (best of {} rounds)",
        history.best_rounds,
        history.train_loss.len()
    );
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_problem(seed: u64, n: usize, f: usize) -> (FeatureMatrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<u8> = (0..n * f).map(|_| rng.gen_range(0..5)).collect();
        let y = (0..n).map(|i| (vals[i * f] >= 3 || rng.gen_bool(0.15)) as u8).collect();
        (FeatureMatrix::from_row_major(n, f, &vals).unwrap(), y)
    }

    fn full_sampling() -> GbtConfig {
        GbtConfig {
            subsample: 1.0,
            colsample: 1.0,
            early_stopping_rounds: 0,
            ..Default::default()
        }
    }

    /// Every (feature, threshold) pair scored from direct sums over the two sides.
    fn brute_force_split(
        x: &FeatureMatrix,
        rows: &[usize],
        g: &[f64],
        h: &[f64],
        p: &GbtConfig,
    ) -> Option<SplitCandidate> {
        let total = |side: &[usize]| {
            side.iter()
                .fold((0.0, 0.0), |(a, b), &r| (a + g[r], b + h[r]))
        };
        let (ga, ha) = total(rows);
        let mut best: Option<SplitCandidate> = None;
        for f in 0..x.n_features() {
            for t in 0..=3u8 {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, f) <= t);
                let ((gl, hl), (gr, hr)) = (total(&l), total(&r));
                if l.is_empty() || r.is_empty() || hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain = 0.5
                    * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda)
                        - ga * ga / (ha + p.lambda));
                if gain > best.map_or(1e-12, |b| b.gain + 1e-12) {
                    best = Some(SplitCandidate { gain, feature: f, threshold: t });
                }
            }
        }
        best
    }

    #[test]
    fn split_search_matches_brute_force() {
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, f) = (rng.gen_range(2..40), rng.gen_range(1..6));
            let (x, _) = random_problem(seed, n, f);
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.3)).collect();
            let rows: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.8)).collect();
            let params = GbtConfig { min_child_weight: 0.2, ..Default::default() };
            let features: Vec<usize> = (0..f).collect();
            let fast = best_split(&x, &rows, &g, &h, &features, &params);
            let slow = brute_force_split(&x, &rows, &g, &h, &params);
            match (fast, slow) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert!((a.gain - b.gain).abs() < 1e-9, "seed {seed}: {a:?} vs {b:?}");
                    // equal-gain choices must at least induce the same partition
                    let side = |s: &SplitCandidate| -> Vec<bool> {
                        rows.iter().map(|&r| x.get(r, s.feature) <= s.threshold).collect()
                    };
                    let (sa, sb) = (side(&a), side(&b));
                    let mirrored: Vec<bool> = sb.iter().map(|v| !v).collect();
                    assert!(sa == sb || sa == mirrored, "seed {seed}: {a:?} vs {b:?}");
                }
                (a, b) => panic!("seed {seed}: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn ties_prefer_lowest_feature_then_threshold() {
        // every feature separates the gradients equally well, at every threshold
        let vals = [0, 4, 0, 4, 0, 4, 0, 4, 4, 0, 4, 0, 4, 0, 4, 0];
        let x = FeatureMatrix::from_row_major(4, 4, &vals).unwrap();
        let g = [1.0, 1.0, -1.0, -1.0];
        let h = [1.0; 4];
        let params = GbtConfig { min_child_weight: 0.0, ..Default::default() };
        let s = best_split(&x, &[0, 1, 2, 3], &g, &h, &[0, 1, 2, 3], &params).unwrap();
        assert_eq!((s.feature, s.threshold), (0, 0));
    }

    #[test]
    fn training_loss_never_increases_with_full_sampling() {
        let (x, y) = random_problem(3, 200, 8);
        let w = ClassWeights::from_labels(&y).unwrap();
        let params = GbtConfig { n_rounds: 60, ..full_sampling() };
        let (_, hist) = fit_gbt(&x, &y, &w, &params, None).unwrap();
        for pair in hist.train_loss.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{pair:?}");
        }
    }

    #[test]
    fn huge_lambda_keeps_base_score() {
        let (x, y) = random_problem(4, 100, 5);
        let w = ClassWeights::from_labels(&y).unwrap();
        let params = GbtConfig { n_rounds: 10, lambda: 1e12, ..full_sampling() };
        let (model, _) = fit_gbt(&x, &y, &w, &params, None).unwrap();
        let prevalence = y.iter().filter(|&&v| v == 1).count() as f64 / 100.0;
        for p in model.predict_proba(&x).unwrap() {
            assert!((p - prevalence).abs() < 1e-9);
        }
    }

    #[test]
    fn separable_feature_is_used_first() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut vals = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = (i % 3 == 0) as u8;
            vals.extend([rng.gen_range(0..5), if label == 1 { 4 } else { rng.gen_range(0..2) }, rng.gen_range(0..5)]);
            y.push(label);
        }
        let x = FeatureMatrix::from_row_major(n, 3, &vals).unwrap();
        let w = ClassWeights::from_labels(&y).unwrap();
        let (model, _) = fit_gbt(&x, &y, &w, &GbtConfig { n_rounds: 100, ..full_sampling() }, None).unwrap();
        match model.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 1);
                assert!((1..=3).contains(&threshold));
            }
            other => panic!("root is {other:?}"),
        }
        let p = model.predict_proba(&x).unwrap();
        for (pi, &yi) in p.iter().zip(&y) {
            assert_eq!((*pi >= 0.5) as u8, yi);
        }
    }

    #[test]
    fn fitting_is_deterministic_and_depth_bounded() {
        let (x, y) = random_problem(5, 150, 10);
        let w = ClassWeights::from_labels(&y).unwrap();
        let params = GbtConfig { n_rounds: 20, max_depth: 3, seed: 11, ..Default::default() };
        let (a, _) = fit_gbt(&x, &y, &w, &params, None).unwrap();
        let (b, _) = fit_gbt(&x, &y, &w, &params, None).unwrap();
        assert_eq!(a, b);
        for t in &a.trees {
            assert!(t.depth() <= 3);
            assert!(t.is_well_formed());
        }
    }

    #[test]
    fn early_stopping_truncates_to_best_round() {
        let (x, y) = random_problem(6, 120, 6);
        let (vx, vy) = random_problem(60, 60, 6);
        let w = ClassWeights::from_labels(&y).unwrap();
        let params = GbtConfig { n_rounds: 300, early_stopping_rounds: 5, ..Default::default() };
        let (model, hist) = fit_gbt(&x, &y, &w, &params, Some((&vx, &vy))).unwrap();
        let best = hist
            .val_loss
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(model.trees.len(), best + 1);
        assert_eq!(hist.best_rounds, best + 1);
    }

    #[test]
    fn single_class_is_rejected() {
        let (x, _) = random_problem(1, 10, 2);
        let err = fit_gbt(&x, &[0; 10], &ClassWeights::UNIFORM, &GbtConfig::default(), None);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn leaf_values_follow_newton_step(seed in 0u64..500) {
            let (x, y) = random_problem(seed, 30, 3);
            if y.iter().all(|&v| v == y[0]) { return Ok(()); }
            let w = ClassWeights::from_labels(&y).unwrap();
            let params = GbtConfig { n_rounds: 1, max_depth: 2, ..full_sampling() };
            let (model, _) = fit_gbt(&x, &y, &w, &params, None).unwrap();
            let p0 = sigmoid(model.base_score);
            let tree = &model.trees[0];
            // group rows by leaf and recompute -G/(H+lambda)
            let mut sums = std::collections::HashMap::new();
            for r in 0..30 {
                let leaf = tree.leaf_index(|f| x.get(r, f));
                let wt = w.weight(y[r]);
                let e = sums.entry(leaf).or_insert((0.0, 0.0));
                e.0 += wt * (p0 - y[r] as f64);
                e.1 += wt * p0 * (1.0 - p0);
            }
            for (leaf, (g, h)) in sums {
                let Node::Leaf { value, cover } = tree.nodes[leaf] else { unreachable!() };
                prop_assert!((value + g / (h + 1.0)).abs() < 1e-12);
                prop_assert!((cover - h).abs() < 1e-12);
            }
        }
    }
}
