use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassWeights, DatasetSplit, SnpMatrix};
use crate::error::{Error, Result};
use crate::nn::layers::sigmoid;
use crate::nn::loss::{weighted_bce_logit_grad, weighted_bce_loss};
use crate::nn::model::{CnnModel, DEFAULT_DROPOUT, DEFAULT_L2};
use crate::nn::real::Real;
use crate::nn::tensor::Parameter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l2: f64,
    pub dropout: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            l2: DEFAULT_L2,
            dropout: DEFAULT_DROPOUT,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch size must be at least 2 for batchnorm statistics".into(),
            ));
        }
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step;
        let lr_t = self.lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (c1, c2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let (lr_t, eps) = (T::of(lr_t), T::of(self.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let Some(grad) = &p.grad else { continue };
            let grad = grad.data().to_vec();
            for (((w, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + c1 * *g;
                *vi = b2 * *vi + c2 * *g * *g;
                *w -= lr_t * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 0-based epoch whose weights were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn gather(matrix: &SnpMatrix, rows: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(rows.len() * matrix.n_loci());
    for &r in rows {
        out.extend_from_slice(matrix.row(r));
    }
    out
}

/// Mini-batches over a shuffled order; a trailing batch of one joins its predecessor.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Class-weighted loss of inference-mode predictions on `rows`.
pub fn evaluate_loss<T: Real>(
    model: &CnnModel<T>,
    matrix: &SnpMatrix,
    labels: &[u8],
    rows: &[usize],
    weights: &ClassWeights,
) -> Result<f64> {
    let probs = model.predict_rows(matrix, rows)?;
    let y: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
    Ok(weighted_bce_loss(&probs, &y, weights))
}

/// One optimization step on a batch; returns the batch's data loss.
pub fn train_step<T: Real>(
    model: &mut CnnModel<T>,
    optimizer: &mut Adam<T>,
    tokens: &[u8],
    labels: &[u8],
    weights: &ClassWeights,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batch = labels.len();
    model.zero_grad();
    let logits = model.forward_train(tokens, batch, rng)?;
    let probs: Vec<f64> = logits.iter().map(|z| sigmoid(z.f64())).collect();
    let loss = weighted_bce_loss(&probs, labels, weights);
    let dz: Vec<T> = weighted_bce_logit_grad(&probs, labels, weights)
        .into_iter()
        .map(T::of)
        .collect();
    model.backward(&dz)?;
    let mut params = model.parameters_mut();
    for p in params.iter_mut() {
        p.apply_l2();
    }
    optimizer.step(&mut params);
    Ok(loss)
}

/// Trains `model` on `split.train` rows of `matrix` (labels indexed by matrix row) with
/// class-weighted BCE plus L2, Adam, and early stopping on the validation loss.
/// The best-validation weights are restored before returning.
pub fn train<T: Real>(
    model: &mut CnnModel<T>,
    matrix: &SnpMatrix,
    labels: &[u8],
    split: &DatasetSplit,
    weights: &ClassWeights,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if labels.len() != matrix.n_samples() {
        return Err(Error::Input(format!(
            "{} labels for {} matrix rows",
            labels.len(),
            matrix.n_samples()
        )));
    }
    if matrix.n_loci() != model.seq_len() {
        return Err(Error::Input(format!(
            "matrix has {} loci, model expects {}",
            matrix.n_loci(),
            model.seq_len()
        )));
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    if split.train.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 samples for batchnorm statistics, got {}",
            split.train.len()
        )));
    }
    model.set_regularization(cfg.dropout, cfg.l2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg);
    let mut order = split.train.clone();
    let mut best: Option<(f64, CnnModel<T>)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in batches(&order, cfg.batch_size) {
            let tokens = gather(matrix, rows);
            let y: Vec<u8> = rows.iter().map(|&r| labels[r]).collect();
            let loss = train_step(model, &mut optimizer, &tokens, &y, weights, &mut rng)?;
            if !loss.is_finite() || model.parameters().iter().any(|p| !p.value.all_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite loss {loss}"),
                });
            }
            total += loss * rows.len() as f64;
        }
        model.clear_cache();
        let train_loss = total / order.len() as f64;
        history.train_loss.push(train_loss);

        if split.val.is_empty() {
            info!("epoch {epoch}: train loss {train_loss:.5}");
            continue;
        }
        let val_loss = evaluate_loss(model, matrix, labels, &split.val, weights)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("non-finite validation loss {val_loss}"),
            });
        }
        history.val_loss.push(val_loss);
        info!("epoch {epoch}: train loss {train_loss:.5}, val loss {val_loss:.5}");
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.snapshot()));
            history.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                debug!("early stop after epoch {epoch}");
                history.stopped_early = true;
                break;
            }
        }
    }
    match best {
        Some((_, weights)) => *model = weights,
        None => history.best_epoch = Some(history.train_loss.len() - 1),
    }
    Ok(history)
}
