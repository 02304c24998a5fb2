//! Layer forward/backward kernels on `[batch x length x channels]` tensors.
//!
//! Every backward routine accumulates parameter gradients (`+=`) and returns the
//! gradient with respect to the layer input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::N_TOKENS;
use crate::error::{Error, Result};
use crate::nn::real::{gemm, Real, View};
use crate::nn::tensor::{Parameter, Tensor};

fn check_tokens(tokens: &[u8], batch: usize) -> Result<usize> {
    if batch == 0 || !tokens.len().is_multiple_of(batch) {
        return Err(Error::Structural(format!(
            "{} tokens do not divide into {batch} sequences",
            tokens.len()
        )));
    }
    if let Some(t) = tokens.iter().find(|&&t| t as usize >= N_TOKENS) {
        return Err(Error::Input(format!("token {t} outside 0..4")));
    }
    Ok(tokens.len() / batch)
}

/// Looks up one table row per token: `[batch x len]` tokens to `[batch x len x dim]`.
pub fn embedding_forward<T: Real>(tokens: &[u8], batch: usize, table: &Tensor<T>) -> Result<Tensor<T>> {
    let len = check_tokens(tokens, batch)?;
    let (vocab, dim) = table.dims2()?;
    if vocab != N_TOKENS {
        return Err(Error::Structural(format!("embedding table has {vocab} rows")));
    }
    let mut out = Vec::with_capacity(tokens.len() * dim);
    for &t in tokens {
        let t = t as usize;
        out.extend_from_slice(&table.data()[t * dim..(t + 1) * dim]);
    }
    Tensor::from_vec(&[batch, len, dim], out)
}

/// Scatters `dy` rows into the rows of `dtable` selected by `tokens`.
pub fn embedding_backward<T: Real>(tokens: &[u8], dy: &Tensor<T>, dtable: &mut Tensor<T>) {
    let dim = dtable.shape()[1];
    let g = dtable.data_mut();
    for (i, &t) in tokens.iter().enumerate() {
        let row = &mut g[t as usize * dim..(t as usize + 1) * dim];
        for (r, &d) in row.iter_mut().zip(&dy.data()[i * dim..(i + 1) * dim]) {
            *r += d;
        }
    }
}

/// Range of output rows `l` for which `l + offset` is a valid input row.
#[inline]
fn tap_rows(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

fn conv_dims<T: Real>(kernel: &Tensor<T>, bias: &Tensor<T>, cin: usize) -> Result<(usize, usize)> {
    let (k, kin, cout) = kernel.dims3()?;
    if k % 2 == 0 {
        return Err(Error::Structural(format!("kernel width {k} is not odd")));
    }
    if kin != cin || bias.shape() != [cout] {
        return Err(Error::Structural(format!(
            "conv kernel {:?} / bias {:?} incompatible with {cin} input channels",
            kernel.shape(),
            bias.shape()
        )));
    }
    Ok((k, cout))
}

/// Cross-correlation with zero "same" padding: `[B x L x Cin]` to `[B x L x Cout]`.
///
/// `kernel` is `[k x Cin x Cout]`; output row `l` sees input rows `l - (k-1)/2 ..= l + (k-1)/2`.
pub fn conv1d_forward<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, len, cin) = x.dims3()?;
    let (k, cout) = conv_dims(kernel, bias, cin)?;
    let pad = (k / 2) as isize;
    let mut y = Tensor::zeros(&[batch, len, cout]);
    let w = kernel.data();
    for b in 0..batch {
        let xs = &x.data()[b * len * cin..(b + 1) * len * cin];
        let ys = &mut y.data_mut()[b * len * cout..(b + 1) * len * cout];
        for row in ys.chunks_exact_mut(cout) {
            row.copy_from_slice(bias.data());
        }
        for tap in 0..k {
            let off = tap as isize - pad;
            let (lo, hi) = tap_rows(len, off);
            if lo >= hi {
                continue;
            }
            let src = (lo as isize + off) as usize;
            gemm(
                View::rows(&xs[src * cin..], hi - lo, cin),
                View::rows(&w[tap * cin * cout..(tap + 1) * cin * cout], cin, cout),
                T::one(),
                &mut ys[lo * cout..],
                cout,
            );
        }
    }
    Ok(y)
}

/// Backward of [`conv1d_forward`].
pub fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
    dkernel: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let (batch, len, cin) = x.dims3()?;
    let (k, _, cout) = kernel.dims3()?;
    if dy.shape() != [batch, len, cout] {
        return Err(Error::Structural(format!(
            "conv output gradient {:?} does not match [{batch}, {len}, {cout}]",
            dy.shape()
        )));
    }
    let pad = (k / 2) as isize;
    let mut dx = Tensor::zeros(&[batch, len, cin]);
    let w = kernel.data();
    for b in 0..batch {
        let xs = &x.data()[b * len * cin..(b + 1) * len * cin];
        let dys = &dy.data()[b * len * cout..(b + 1) * len * cout];
        let dxs = &mut dx.data_mut()[b * len * cin..(b + 1) * len * cin];
        for row in dys.chunks_exact(cout) {
            for (g, &d) in dbias.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
        for tap in 0..k {
            let off = tap as isize - pad;
            let (lo, hi) = tap_rows(len, off);
            if lo >= hi {
                continue;
            }
            let src = (lo as isize + off) as usize;
            let wk = &w[tap * cin * cout..(tap + 1) * cin * cout];
            // dx[l + off] += dy[l] * W_tap^T
            gemm(
                View::rows(&dys[lo * cout..], hi - lo, cout),
                View::rows(wk, cin, cout).t(),
                T::one(),
                &mut dxs[src * cin..],
                cin,
            );
            // dW_tap += x[l + off]^T * dy[l]
            gemm(
                View::rows(&xs[src * cin..], hi - lo, cin).t(),
                View::rows(&dys[lo * cout..], hi - lo, cout),
                T::one(),
                &mut dkernel.data_mut()[tap * cin * cout..(tap + 1) * cin * cout],
                cout,
            );
        }
    }
    Ok(dx)
}

/// Per-tap projection of every embedding row: `[k x vocab x Cout]`.
fn project_table<T: Real>(table: &Tensor<T>, kernel: &Tensor<T>) -> Vec<T> {
    let (vocab, dim) = (table.shape()[0], table.shape()[1]);
    let (k, _, cout) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let mut proj = vec![T::zero(); k * vocab * cout];
    for tap in 0..k {
        gemm(
            View::rows(table.data(), vocab, dim),
            View::rows(&kernel.data()[tap * dim * cout..(tap + 1) * dim * cout], dim, cout),
            T::zero(),
            &mut proj[tap * vocab * cout..],
            cout,
        );
    }
    proj
}

/// Embedding lookup followed by [`conv1d_forward`], computed without materializing the
/// embedded sequence. Every tap contributes one precomputed `table[token] * W_tap` row.
pub fn embed_conv_forward<T: Real>(
    tokens: &[u8],
    batch: usize,
    table: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let len = check_tokens(tokens, batch)?;
    let (vocab, dim) = table.dims2()?;
    let (k, cout) = conv_dims(kernel, bias, dim)?;
    let pad = (k / 2) as isize;
    let proj = project_table(table, kernel);
    let mut y = Tensor::zeros(&[batch, len, cout]);
    for b in 0..batch {
        let seq = &tokens[b * len..(b + 1) * len];
        let ys = &mut y.data_mut()[b * len * cout..(b + 1) * len * cout];
        for (l, row) in ys.chunks_exact_mut(cout).enumerate() {
            row.copy_from_slice(bias.data());
            for tap in 0..k {
                let src = l as isize + tap as isize - pad;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let t = seq[src as usize] as usize;
                let p = &proj[(tap * vocab + t) * cout..(tap * vocab + t + 1) * cout];
                for (o, &v) in row.iter_mut().zip(p) {
                    *o += v;
                }
            }
        }
    }
    Ok(y)
}

/// Backward of [`embed_conv_forward`]; accumulates table, kernel and bias gradients.
#[allow(clippy::too_many_arguments)]
pub fn embed_conv_backward<T: Real>(
    tokens: &[u8],
    batch: usize,
    table: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
    dtable: &mut Tensor<T>,
    dkernel: &mut Tensor<T>,
    dbias: &mut Tensor<T>,
) -> Result<()> {
    let len = check_tokens(tokens, batch)?;
    let (vocab, dim) = table.dims2()?;
    let (k, _, cout) = kernel.dims3()?;
    if dy.shape() != [batch, len, cout] {
        return Err(Error::Structural(format!(
            "embed-conv output gradient {:?} does not match [{batch}, {len}, {cout}]",
            dy.shape()
        )));
    }
    let pad = (k / 2) as isize;
    // dproj[tap][token] = sum of dy rows whose tap reads that token
    let mut dproj = vec![T::zero(); k * vocab * cout];
    for b in 0..batch {
        let seq = &tokens[b * len..(b + 1) * len];
        let dys = &dy.data()[b * len * cout..(b + 1) * len * cout];
        for (l, row) in dys.chunks_exact(cout).enumerate() {
            for (g, &d) in dbias.data_mut().iter_mut().zip(row) {
                *g += d;
            }
            for tap in 0..k {
                let src = l as isize + tap as isize - pad;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let t = seq[src as usize] as usize;
                let acc = &mut dproj[(tap * vocab + t) * cout..(tap * vocab + t + 1) * cout];
                for (a, &d) in acc.iter_mut().zip(row) {
                    *a += d;
                }
            }
        }
    }
    for tap in 0..k {
        let dp = View::rows(&dproj[tap * vocab * cout..], vocab, cout);
        let wk = &kernel.data()[tap * dim * cout..(tap + 1) * dim * cout];
        gemm(
            View::rows(table.data(), vocab, dim).t(),
            dp,
            T::one(),
            &mut dkernel.data_mut()[tap * dim * cout..(tap + 1) * dim * cout],
            cout,
        );
        gemm(dp, View::rows(wk, dim, cout).t(), T::one(), dtable.data_mut(), dim);
    }
    Ok(())
}

/// Batch normalization over every `(batch, position)` row of each channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BatchNorm<T> {
    pub scale: Parameter<T>,
    pub shift: Parameter<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Weight kept on the old running statistic at each update.
    pub momentum: f64,
    pub eps: f64,
}

/// Normalized activations and inverse deviations saved by a training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            scale: Parameter::new(Tensor::filled(&[channels], T::one()), 0.0),
            shift: Parameter::new(Tensor::zeros(&[channels]), 0.0),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.9,
            eps: 1e-3,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        let c = *x.shape().last().unwrap_or(&0);
        if c != self.channels() {
            return Err(Error::Structural(format!(
                "batchnorm has {} channels, input has {c}",
                self.channels()
            )));
        }
        Ok(c)
    }

    /// Normalizes with batch statistics and updates the running statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        let c = self.check(x)?;
        let rows = x.len() / c.max(1);
        if rows == 0 {
            return Err(Error::Input("batchnorm needs a non-empty batch in training mode".into()));
        }
        let mut mean = vec![0.0f64; c];
        for row in x.data().chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v.f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0f64; c];
        for row in x.data().chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v.f64() - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + self.eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        let (g, s) = (self.scale.value.data(), self.shift.value.data());
        for row in x.data().chunks_exact(c) {
            for ch in 0..c {
                let h = (row[ch] - mean_t[ch]) * inv_std[ch];
                xhat.push(h);
                y.push(g[ch] * h + s[ch]);
            }
        }
        let mom = T::of(self.momentum);
        let keep = T::of(1.0 - self.momentum);
        for ch in 0..c {
            self.running_mean[ch] = mom * self.running_mean[ch] + keep * T::of(mean[ch]);
            self.running_var[ch] = mom * self.running_var[ch] + keep * T::of(var[ch]);
        }
        Ok((
            Tensor::from_vec(x.shape(), y)?,
            BatchNormCache { xhat, inv_std },
        ))
    }

    /// Per-channel `(multiplier, offset)` equivalent to inference-mode normalization.
    pub fn inference_affine(&self) -> (Vec<T>, Vec<T>) {
        let eps = T::of(self.eps);
        let (g, s) = (self.scale.value.data(), self.shift.value.data());
        (0..self.channels())
            .map(|ch| {
                let mul = g[ch] / (self.running_var[ch] + eps).sqrt();
                (mul, s[ch] - mul * self.running_mean[ch])
            })
            .unzip()
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check(x)?;
        let (mul, add) = self.inference_affine();
        let mut y = x.clone();
        for row in y.data_mut().chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = row[ch] * mul[ch] + add[ch];
            }
        }
        Ok(y)
    }

    /// Backward of a training-mode pass.
    pub fn backward(&mut self, cache: &BatchNormCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.check(dy)?;
        let rows = dy.len() / c;
        let mut sum_d = vec![T::zero(); c];
        let mut sum_dh = vec![T::zero(); c];
        for (drow, hrow) in dy.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_d[ch] += drow[ch];
                sum_dh[ch] += drow[ch] * hrow[ch];
            }
        }
        for (g, &v) in self.shift.grad_mut().data_mut().iter_mut().zip(&sum_d) {
            *g += v;
        }
        for (g, &v) in self.scale.grad_mut().data_mut().iter_mut().zip(&sum_dh) {
            *g += v;
        }
        let n = T::of(rows as f64);
        let gamma = self.scale.value.data();
        let mut dx = Vec::with_capacity(dy.len());
        for (drow, hrow) in dy.data().chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for ch in 0..c {
                // dxhat = dy * gamma; sums of dxhat are gamma times the dy sums.
                let f = gamma[ch] * cache.inv_std[ch] / n;
                dx.push(f * (n * drow[ch] - sum_d[ch] - hrow[ch] * sum_dh[ch]));
            }
        }
        Tensor::from_vec(dy.shape(), dx)
    }
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_in_place(y.data_mut());
    y
}

pub(crate) fn relu_in_place<T: Real>(v: &mut [T]) {
    for e in v {
        if !(*e > T::zero()) {
            *e = T::zero();
        }
    }
}

/// Gradient through ReLU given its input `x`.
pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if !(v > T::zero()) {
            *d = T::zero();
        }
    }
    dx
}

/// Non-overlapping max pooling along the sequence axis; a trailing partial window is dropped.
///
/// Returns the pooled tensor and, per output element, the input position of its maximum
/// (first occurrence on ties).
pub fn maxpool1d_forward<T: Real>(x: &Tensor<T>, pool: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    let (batch, len, c) = x.dims3()?;
    if pool == 0 || pool > len {
        return Err(Error::Structural(format!(
            "pool size {pool} invalid for sequence length {len}"
        )));
    }
    let out_len = len / pool;
    let mut y = Vec::with_capacity(batch * out_len * c);
    let mut arg = Vec::with_capacity(batch * out_len * c);
    let xd = x.data();
    for b in 0..batch {
        for o in 0..out_len {
            let start = o * pool;
            for ch in 0..c {
                let mut best = start;
                let mut best_v = xd[(b * len + start) * c + ch];
                for p in start + 1..start + pool {
                    let v = xd[(b * len + p) * c + ch];
                    if v > best_v {
                        best_v = v;
                        best = p;
                    }
                }
                y.push(best_v);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[batch, out_len, c], y)?, arg))
}

/// Routes each pooled gradient to the position that produced the maximum.
pub fn maxpool1d_backward<T: Real>(argmax: &[u32], dy: &Tensor<T>, in_len: usize) -> Result<Tensor<T>> {
    let (batch, out_len, c) = dy.dims3()?;
    let mut dx = Tensor::zeros(&[batch, in_len, c]);
    let dxd = dx.data_mut();
    for b in 0..batch {
        for o in 0..out_len {
            for ch in 0..c {
                let i = (b * out_len + o) * c + ch;
                dxd[(b * in_len + argmax[i] as usize) * c + ch] += dy.data()[i];
            }
        }
    }
    Ok(dx)
}

/// Max over the whole sequence axis: `[B x L x C]` to `[B x C]`.
pub fn global_maxpool_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (batch, len, c) = x.dims3()?;
    if len == 0 {
        return Err(Error::Structural("global max pool over an empty sequence".into()));
    }
    let xd = x.data();
    let mut y = Vec::with_capacity(batch * c);
    let mut arg = Vec::with_capacity(batch * c);
    for b in 0..batch {
        let base = b * len * c;
        let mut best_v = xd[base..base + c].to_vec();
        let mut best = vec![0u32; c];
        for l in 1..len {
            let row = &xd[base + l * c..base + (l + 1) * c];
            for ch in 0..c {
                if row[ch] > best_v[ch] {
                    best_v[ch] = row[ch];
                    best[ch] = l as u32;
                }
            }
        }
        y.extend(best_v);
        arg.extend(best);
    }
    Ok((Tensor::from_vec(&[batch, c], y)?, arg))
}

pub fn global_maxpool_backward<T: Real>(argmax: &[u32], dy: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    let (batch, c) = dy.dims2()?;
    let mut dx = Tensor::zeros(&[batch, len, c]);
    for b in 0..batch {
        for ch in 0..c {
            let i = b * c + ch;
            dx.data_mut()[(b * len + argmax[i] as usize) * c + ch] = dy.data()[i];
        }
    }
    Ok(dx)
}

/// `x [B x in] * w [in x out] + b`.
pub fn dense_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, fin) = x.dims2()?;
    let (win, fout) = w.dims2()?;
    if win != fin || b.shape() != [fout] {
        return Err(Error::Structural(format!(
            "dense weights {:?} / bias {:?} incompatible with input {:?}",
            w.shape(),
            b.shape(),
            x.shape()
        )));
    }
    let mut y = Tensor::zeros(&[batch, fout]);
    for row in y.data_mut().chunks_exact_mut(fout) {
        row.copy_from_slice(b.data());
    }
    gemm(
        View::rows(x.data(), batch, fin),
        View::rows(w.data(), fin, fout),
        T::one(),
        y.data_mut(),
        fout,
    );
    Ok(y)
}

pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
) -> Result<Tensor<T>> {
    let (batch, fin) = x.dims2()?;
    let (_, fout) = w.dims2()?;
    if dy.shape() != [batch, fout] {
        return Err(Error::Structural(format!(
            "dense output gradient {:?} does not match [{batch}, {fout}]",
            dy.shape()
        )));
    }
    for row in dy.data().chunks_exact(fout) {
        for (g, &d) in db.data_mut().iter_mut().zip(row) {
            *g += d;
        }
    }
    gemm(
        View::rows(x.data(), batch, fin).t(),
        View::rows(dy.data(), batch, fout),
        T::one(),
        dw.data_mut(),
        fout,
    );
    let mut dx = Tensor::zeros(&[batch, fin]);
    gemm(
        View::rows(dy.data(), batch, fout),
        View::rows(w.data(), fin, fout).t(),
        T::zero(),
        dx.data_mut(),
        fin,
    );
    Ok(dx)
}

/// Inverted dropout. In training mode each element is zeroed with probability `rate` and
/// survivors are scaled by `1 / (1 - rate)`; the returned mask holds those factors.
/// Outside training mode the input passes through unchanged.
pub fn dropout_forward<T: Real, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> (Tensor<T>, Option<Vec<T>>) {
    if !training || rate <= 0.0 {
        return (x.clone(), None);
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    (y, Some(mask))
}

pub fn dropout_backward<T: Real>(mask: Option<&[T]>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    if let Some(mask) = mask {
        for (d, &m) in dx.data_mut().iter_mut().zip(mask) {
            *d *= m;
        }
    }
    dx
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t3(b: usize, l: usize, c: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&[b, l, c], v).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn embedding_repeats_rows() {
        let table = Tensor::from_vec(&[5, 2], (0..10).map(|v| v as f64).collect()).unwrap();
        let y = embedding_forward(&[0, 0, 0], 1, &table).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert_eq!(y.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let y = embedding_forward(&[0, 1, 2, 3, 4], 1, &table).unwrap();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(y.data()[i * 2..i * 2 + 2], y.data()[j * 2..j * 2 + 2]);
            }
        }
        assert!(matches!(
            embedding_forward(&[5], 1, &table),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn embedding_gradient_counts_tokens() {
        let tokens = [0u8, 3, 3, 4, 0, 0];
        let mut dtable = Tensor::<f64>::zeros(&[5, 3]);
        let dy = Tensor::filled(&[2, 3, 3], 1.0);
        embedding_backward(&tokens, &dy, &mut dtable);
        for (r, count) in [3.0, 0.0, 0.0, 2.0, 1.0].iter().enumerate() {
            assert!(dtable.data()[r * 3..r * 3 + 3].iter().all(|v| v == count));
        }
    }

    #[test]
    fn conv_scaling_kernel() {
        let x = t3(1, 3, 1, vec![1.0, 2.0, 3.0]);
        let k = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv1d_forward(&x, &k, &b).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 6, 1], &mut rng);
        let k = Tensor::from_vec(&[3, 1, 1], vec![0.0, 1.0, 0.0]).unwrap();
        let y = conv1d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_rejects_even_kernel_and_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 4, 2]);
        let even = Tensor::zeros(&[2, 2, 1]);
        assert!(matches!(
            conv1d_forward(&x, &even, &Tensor::zeros(&[1])),
            Err(Error::Structural(_))
        ));
        let wrong_cin = Tensor::zeros(&[3, 3, 1]);
        assert!(conv1d_forward(&x, &wrong_cin, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn conv_kernel_wider_than_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[1, 2, 2], &mut rng);
        let k = random(&[7, 2, 3], &mut rng);
        let y = conv1d_forward(&x, &k, &Tensor::zeros(&[3])).unwrap();
        // position 0 sees x[0] through tap 3 and x[1] through tap 4
        for co in 0..3 {
            let mut want = 0.0;
            for ci in 0..2 {
                want += x.data()[ci] * k.data()[(3 * 2 + ci) * 3 + co];
                want += x.data()[2 + ci] * k.data()[(4 * 2 + ci) * 3 + co];
            }
            assert!((y.data()[co] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_embed_conv_equals_two_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tokens: Vec<u8> = (0..2 * 11).map(|_| rng.gen_range(0..5)).collect();
        let table = random(&[5, 4], &mut rng);
        let kernel = random(&[5, 4, 3], &mut rng);
        let bias = random(&[3], &mut rng);
        let fused = embed_conv_forward(&tokens, 2, &table, &kernel, &bias).unwrap();
        let e = embedding_forward(&tokens, 2, &table).unwrap();
        let two = conv1d_forward(&e, &kernel, &bias).unwrap();
        for (a, b) in fused.data().iter().zip(two.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        let dy = random(&[2, 11, 3], &mut rng);
        let (mut dt1, mut dk1, mut db1) = (Tensor::zeros(&[5, 4]), Tensor::zeros(&[5, 4, 3]), Tensor::zeros(&[3]));
        embed_conv_backward(&tokens, 2, &table, &kernel, &dy, &mut dt1, &mut dk1, &mut db1).unwrap();
        let (mut dt2, mut dk2, mut db2) = (Tensor::zeros(&[5, 4]), Tensor::zeros(&[5, 4, 3]), Tensor::zeros(&[3]));
        let de = conv1d_backward(&e, &kernel, &dy, &mut dk2, &mut db2).unwrap();
        embedding_backward(&tokens, &de, &mut dt2);
        for (a, b) in [(&dt1, &dt2), (&dk1, &dk2), (&db1, &db2)] {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_on_standardized_input_is_near_identity() {
        let x = t3(1, 4, 1, vec![-1.0, 1.0, -1.0, 1.0]);
        let mut bn = BatchNorm::<f64>::new(1);
        let (y, _) = bn.forward_train(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-3);
        }
    }

    #[test]
    fn batchnorm_zero_scale_gives_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[3, 5, 2], &mut rng);
        let mut bn = BatchNorm::<f64>::new(2);
        bn.scale.value.fill(0.0);
        bn.shift.value = Tensor::from_vec(&[2], vec![0.5, -2.0]).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.5, -2.0]);
        }
        let y = bn.forward_infer(&x).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.5, -2.0]);
        }
    }

    #[test]
    fn batchnorm_running_stats_move_toward_batch() {
        let x = t3(1, 2, 1, vec![4.0, 6.0]);
        let mut bn = BatchNorm::<f64>::new(1);
        bn.forward_train(&x).unwrap();
        assert!((bn.running_mean[0] - 0.5).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
        assert!(matches!(
            bn.forward_train(&Tensor::zeros(&[0, 4, 1])),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn maxpool_floor_semantics() {
        let x = t3(1, 5, 1, vec![3.0, 1.0, 4.0, 1.0, 5.0]);
        let (y, arg) = maxpool1d_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
        assert_eq!(arg, vec![0, 2]);
        assert!(maxpool1d_forward(&x, 6).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let x = t3(1, 2, 1, vec![2.0, 2.0]);
        let (_, arg) = maxpool1d_forward(&x, 2).unwrap();
        let dx = maxpool1d_backward(&arg, &t3(1, 1, 1, vec![1.0]), 2).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0]);
    }

    #[test]
    fn pool_length_chain() {
        let mut len = 60936;
        let mut chain = vec![len];
        for _ in 0..4 {
            len /= 2;
            chain.push(len);
        }
        assert_eq!(chain, vec![60936, 30468, 15234, 7617, 3808]);
    }

    #[test]
    fn global_maxpool_finds_spike_anywhere() {
        for pos in 0..7 {
            let mut v = vec![0.0; 7];
            v[pos] = 3.5;
            let (y, arg) = global_maxpool_forward(&t3(1, 7, 1, v)).unwrap();
            assert_eq!(y.data(), &[3.5]);
            assert_eq!(arg, vec![pos as u32]);
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::filled(&[4, 100], 1.0f64);
        let (y, mask) = dropout_forward(&x, 0.3, false, &mut rng);
        assert_eq!(y, x);
        assert!(mask.is_none());
        let (y, mask) = dropout_forward(&x, 0.3, true, &mut rng);
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 60 && zeros < 180, "{zeros}");
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
        let dx = dropout_backward(mask.as_deref(), &x);
        assert_eq!(dx, y);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64).is_finite());
        assert!(sigmoid(1000.0f64) == 1.0);
        assert!((sigmoid(2.0f64) + sigmoid(-2.0f64) - 1.0).abs() < 1e-15);
    }
}
