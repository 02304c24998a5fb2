//! The sequence CNN: token embedding, six conv/batchnorm/ReLU blocks with max pooling
//! after the first four, global max pooling, and a 128-unit MLP head with one sigmoid output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SnpMatrix, N_TOKENS};
use crate::error::{Error, Result};
use crate::nn::layers::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_backward, dropout_forward,
    embed_conv_backward, embed_conv_forward, global_maxpool_backward, global_maxpool_forward,
    maxpool1d_backward, maxpool1d_forward, relu_in_place, sigmoid, BatchNorm, BatchNormCache,
};
use crate::nn::real::Real;
use crate::nn::tensor::{Parameter, Tensor};

pub const EMBEDDING_DIM: usize = 64;
pub const HIDDEN_UNITS: usize = 128;
pub const POOL_SIZE: usize = 2;
pub const DEFAULT_DROPOUT: f64 = 0.3;
pub const DEFAULT_L2: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub filters: usize,
    pub kernel: usize,
    /// Max-pool (size 2) after this block.
    pub pool: bool,
}

const fn block(filters: usize, kernel: usize, pool: bool) -> BlockSpec {
    BlockSpec {
        filters,
        kernel,
        pool,
    }
}

/// Filters 128/128/64/64/32/32, kernels 7/7/5/5/3/3, pooling after blocks 1-4.
pub const AMR_BLOCKS: [BlockSpec; 6] = [
    block(128, 7, true),
    block(128, 7, true),
    block(64, 5, true),
    block(64, 5, true),
    block(32, 3, false),
    block(32, 3, false),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub seq_len: usize,
    pub embedding_dim: usize,
    pub blocks: Vec<BlockSpec>,
    pub hidden_units: usize,
    /// Applied after global pooling and after the hidden dense layer.
    pub dropout: f64,
    /// L2 coefficient on conv and dense kernels.
    pub l2: f64,
}

impl Architecture {
    pub fn amr(seq_len: usize) -> Self {
        Architecture {
            seq_len,
            embedding_dim: EMBEDDING_DIM,
            blocks: AMR_BLOCKS.to_vec(),
            hidden_units: HIDDEN_UNITS,
            dropout: DEFAULT_DROPOUT,
            l2: DEFAULT_L2,
        }
    }

    /// Sequence length entering each block, followed by the length after the last block.
    pub fn lengths(&self) -> Vec<usize> {
        let mut len = self.seq_len;
        let mut out = vec![len];
        for b in &self.blocks {
            if b.pool {
                len /= POOL_SIZE;
            }
            out.push(len);
        }
        out
    }

    pub fn final_len(&self) -> usize {
        *self.lengths().last().unwrap()
    }

    fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("architecture needs at least one conv block".into()));
        }
        if self.blocks.iter().any(|b| b.kernel % 2 == 0 || b.filters == 0) {
            return Err(Error::Config("conv kernels must be odd and filters positive".into()));
        }
        let pools = self.blocks.iter().filter(|b| b.pool).count() as u32;
        let min_len = POOL_SIZE.pow(pools);
        if self.seq_len < min_len.max(1) {
            return Err(Error::Config(format!(
                "sequence length {} too short for {pools} pooling stages (need at least {min_len})",
                self.seq_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || self.l2 < 0.0 {
            return Err(Error::Config("dropout must be in [0, 1) and l2 non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ConvBlock<T> {
    pub spec: BlockSpec,
    /// `[kernel x in_channels x filters]`
    pub kernel: Parameter<T>,
    pub bias: Parameter<T>,
    pub norm: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Dense<T> {
    /// `[in x out]`
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    /// Block input; `None` for the first block, which reads tokens directly.
    input: Option<Tensor<T>>,
    norm: BatchNormCache<T>,
    len: usize,
    pool_arg: Option<Vec<u32>>,
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    tokens: Vec<u8>,
    batch: usize,
    blocks: Vec<BlockCache<T>>,
    global_arg: Vec<u32>,
    head_in: Tensor<T>,
    head_mask: Option<Vec<T>>,
    hidden_pre: Tensor<T>,
    out_in: Tensor<T>,
    out_mask: Option<Vec<T>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CnnModel<T> {
    arch: Architecture,
    /// `[5 x embedding_dim]`
    pub embedding: Parameter<T>,
    pub blocks: Vec<ConvBlock<T>>,
    pub hidden: Dense<T>,
    pub output: Dense<T>,
    #[serde(skip)]
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> PartialEq for CnnModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.embedding == other.embedding
            && self.blocks == other.blocks
            && self.hidden == other.hidden
            && self.output == other.output
    }
}

fn uniform<T: Real>(shape: &[usize], limit: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data).expect("shape matches generated values")
}

/// Builds the AMR sequence CNN for sequences of `seq_len` tokens.
pub fn build_amr_cnn<T: Real>(seq_len: usize, seed: u64) -> Result<CnnModel<T>> {
    CnnModel::new(Architecture::amr(seq_len), seed)
}

impl<T: Real> CnnModel<T> {
    /// Seeded initialization: embedding rows uniform in +-0.05, conv and hidden kernels
    /// He-uniform (`sqrt(6 / fan_in)`), output kernel LeCun-uniform (`sqrt(3 / fan_in)`),
    /// biases zero, batchnorm scale 1 / shift 0.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = Parameter::new(uniform(&[N_TOKENS, arch.embedding_dim], 0.05, &mut rng), 0.0);
        let mut cin = arch.embedding_dim;
        let mut blocks = Vec::with_capacity(arch.blocks.len());
        for spec in &arch.blocks {
            let fan_in = (spec.kernel * cin) as f64;
            blocks.push(ConvBlock {
                spec: *spec,
                kernel: Parameter::new(
                    uniform(&[spec.kernel, cin, spec.filters], (6.0 / fan_in).sqrt(), &mut rng),
                    arch.l2,
                ),
                bias: Parameter::new(Tensor::zeros(&[spec.filters]), 0.0),
                norm: BatchNorm::new(spec.filters),
            });
            cin = spec.filters;
        }
        let hidden = Dense {
            weight: Parameter::new(
                uniform(&[cin, arch.hidden_units], (6.0 / cin as f64).sqrt(), &mut rng),
                arch.l2,
            ),
            bias: Parameter::new(Tensor::zeros(&[arch.hidden_units]), 0.0),
        };
        let output = Dense {
            weight: Parameter::new(
                uniform(&[arch.hidden_units, 1], (3.0 / arch.hidden_units as f64).sqrt(), &mut rng),
                arch.l2,
            ),
            bias: Parameter::new(Tensor::zeros(&[1]), 0.0),
        };
        Ok(CnnModel {
            arch,
            embedding,
            blocks,
            hidden,
            output,
            cache: None,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn seq_len(&self) -> usize {
        self.arch.seq_len
    }

    /// Updates dropout rate and the L2 coefficient on every kernel.
    pub fn set_regularization(&mut self, dropout: f64, l2: f64) -> Result<()> {
        let mut arch = self.arch.clone();
        arch.dropout = dropout;
        arch.l2 = l2;
        arch.validate()?;
        self.arch = arch;
        for b in &mut self.blocks {
            b.kernel.l2 = l2;
        }
        self.hidden.weight.l2 = l2;
        self.output.weight.l2 = l2;
        Ok(())
    }

    /// Trainable parameters in a fixed order.
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out = vec![&self.embedding];
        for b in &self.blocks {
            out.extend([&b.kernel, &b.bias, &b.norm.scale, &b.norm.shift]);
        }
        out.extend([
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = vec![&mut self.embedding];
        for b in &mut self.blocks {
            out.push(&mut b.kernel);
            out.push(&mut b.bias);
            out.push(&mut b.norm.scale);
            out.push(&mut b.norm.shift);
        }
        out.push(&mut self.hidden.weight);
        out.push(&mut self.hidden.bias);
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    /// Number of trainable scalars (excludes batchnorm running statistics).
    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// A copy without any cached activations.
    pub fn snapshot(&self) -> Self {
        CnnModel {
            cache: None,
            ..self.clone()
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn check_batch(&self, tokens: &[u8], batch: usize) -> Result<()> {
        if batch == 0 || tokens.len() != batch * self.arch.seq_len {
            return Err(Error::Input(format!(
                "expected {batch} sequences of length {}, got {} tokens",
                self.arch.seq_len,
                tokens.len()
            )));
        }
        Ok(())
    }

    /// Training-mode forward pass returning one logit per sequence and caching what
    /// [`CnnModel::backward`] needs. Batchnorm uses batch statistics; dropout is active.
    pub fn forward_train<R: Rng + ?Sized>(&mut self, tokens: &[u8], batch: usize, rng: &mut R) -> Result<Vec<T>> {
        self.check_batch(tokens, batch)?;
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        let mut x: Option<Tensor<T>> = None;
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            let conv = match &x {
                None => embed_conv_forward(
                    tokens,
                    batch,
                    &self.embedding.value,
                    &blk.kernel.value,
                    &blk.bias.value,
                )?,
                Some(input) => conv1d_forward(input, &blk.kernel.value, &blk.bias.value)?,
            };
            let len = conv.shape()[1];
            let (mut act, norm) = blk.norm.forward_train(&conv)?;
            drop(conv);
            relu_in_place(act.data_mut());
            let (out, pool_arg) = if blk.spec.pool {
                let (p, arg) = maxpool1d_forward(&act, POOL_SIZE)?;
                (p, Some(arg))
            } else {
                (act, None)
            };
            block_caches.push(BlockCache {
                input: if i == 0 { None } else { x.take() },
                norm,
                len,
                pool_arg,
            });
            x = Some(out);
        }
        let features = x.expect("at least one block");
        let (pooled, global_arg) = global_maxpool_forward(&features)?;
        drop(features);
        let (head_in, head_mask) = dropout_forward(&pooled, self.arch.dropout, true, rng);
        let hidden_pre = dense_forward(&head_in, &self.hidden.weight.value, &self.hidden.bias.value)?;
        let mut hidden_act = hidden_pre.clone();
        relu_in_place(hidden_act.data_mut());
        let (out_in, out_mask) = dropout_forward(&hidden_act, self.arch.dropout, true, rng);
        let logits = dense_forward(&out_in, &self.output.weight.value, &self.output.bias.value)?;
        self.cache = Some(ForwardCache {
            tokens: tokens.to_vec(),
            batch,
            blocks: block_caches,
            global_arg,
            head_in,
            head_mask,
            hidden_pre,
            out_in,
            out_mask,
        });
        Ok(logits.into_data())
    }

    /// Accumulates parameter gradients given `dloss/dlogit` for the last training batch.
    pub fn backward(&mut self, dlogits: &[T]) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Input("backward called without a training forward pass".into()))?;
        if dlogits.len() != cache.batch {
            return Err(Error::Input(format!(
                "{} logit gradients for a batch of {}",
                dlogits.len(),
                cache.batch
            )));
        }
        let dy = Tensor::from_vec(&[cache.batch, 1], dlogits.to_vec())?;
        let (out_w, out_dw) = self.output.weight.value_and_grad();
        let d_out_in = dense_backward(
            &cache.out_in,
            out_w,
            &dy,
            out_dw,
            self.output.bias.value_and_grad().1,
        )?;
        let mut d_hidden = dropout_backward(cache.out_mask.as_deref(), &d_out_in);
        for (d, &pre) in d_hidden.data_mut().iter_mut().zip(cache.hidden_pre.data()) {
            if !(pre > T::zero()) {
                *d = T::zero();
            }
        }
        let (hid_w, hid_dw) = self.hidden.weight.value_and_grad();
        let d_head_in = dense_backward(
            &cache.head_in,
            hid_w,
            &d_hidden,
            hid_dw,
            self.hidden.bias.value_and_grad().1,
        )?;
        let d_pooled = dropout_backward(cache.head_mask.as_deref(), &d_head_in);
        let last_len = self.arch.final_len();
        let mut grad = global_maxpool_backward(&cache.global_arg, &d_pooled, last_len)?;

        for (blk, bc) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            let mut d_act = match &bc.pool_arg {
                Some(arg) => maxpool1d_backward(arg, &grad, bc.len)?,
                None => grad,
            };
            let c = blk.spec.filters;
            let (g, s) = (blk.norm.scale.value.data(), blk.norm.shift.value.data());
            for (drow, hrow) in d_act
                .data_mut()
                .chunks_exact_mut(c)
                .zip(bc.norm.xhat.chunks_exact(c))
            {
                for ch in 0..c {
                    if !(g[ch] * hrow[ch] + s[ch] > T::zero()) {
                        drow[ch] = T::zero();
                    }
                }
            }
            let d_conv = blk.norm.backward(&bc.norm, &d_act)?;
            drop(d_act);
            let kernel_shape = blk.kernel.shape().to_vec();
            let dkernel = blk
                .kernel
                .grad
                .get_or_insert_with(|| Tensor::zeros(&kernel_shape));
            let dbias = blk.bias.grad.get_or_insert_with(|| Tensor::zeros(&[c]));
            grad = match &bc.input {
                Some(input) => conv1d_backward(input, &blk.kernel.value, &d_conv, dkernel, dbias)?,
                None => {
                    let emb_shape = self.embedding.shape().to_vec();
                    let dtable = self
                        .embedding
                        .grad
                        .get_or_insert_with(|| Tensor::zeros(&emb_shape));
                    embed_conv_backward(
                        &cache.tokens,
                        cache.batch,
                        &self.embedding.value,
                        &blk.kernel.value,
                        &d_conv,
                        dtable,
                        dkernel,
                        dbias,
                    )?;
                    Tensor::zeros(&[0])
                }
            };
        }
        Ok(())
    }

    /// Inference-mode logit for one sequence.
    fn logit_one(&self, tokens: &[u8]) -> Result<T> {
        let mut x: Option<Tensor<T>> = None;
        for blk in &self.blocks {
            let mut act = match &x {
                None => embed_conv_forward(
                    tokens,
                    1,
                    &self.embedding.value,
                    &blk.kernel.value,
                    &blk.bias.value,
                )?,
                Some(input) => conv1d_forward(input, &blk.kernel.value, &blk.bias.value)?,
            };
            let (mul, add) = blk.norm.inference_affine();
            let c = blk.spec.filters;
            for row in act.data_mut().chunks_exact_mut(c) {
                for ch in 0..c {
                    let v = row[ch] * mul[ch] + add[ch];
                    row[ch] = if v > T::zero() { v } else { T::zero() };
                }
            }
            x = Some(if blk.spec.pool {
                maxpool1d_forward(&act, POOL_SIZE)?.0
            } else {
                act
            });
        }
        let (pooled, _) = global_maxpool_forward(&x.expect("at least one block"))?;
        let mut h = dense_forward(&pooled, &self.hidden.weight.value, &self.hidden.bias.value)?;
        relu_in_place(h.data_mut());
        let out = dense_forward(&h, &self.output.weight.value, &self.output.bias.value)?;
        Ok(out.data()[0])
    }

    /// Inference-mode logits; sequences are independent and run on the worker pool.
    pub fn logits(&self, tokens: &[u8], batch: usize) -> Result<Vec<T>> {
        self.check_batch(tokens, batch)?;
        tokens
            .par_chunks_exact(self.arch.seq_len)
            .map(|seq| self.logit_one(seq))
            .collect()
    }

    /// Resistance probabilities for `batch` concatenated sequences.
    pub fn predict_proba(&self, tokens: &[u8], batch: usize) -> Result<Vec<f64>> {
        Ok(self
            .logits(tokens, batch)?
            .into_iter()
            .map(|z| sigmoid(z.f64()))
            .collect())
    }

    /// Probabilities for the given matrix rows.
    pub fn predict_rows(&self, matrix: &SnpMatrix, rows: &[usize]) -> Result<Vec<f64>> {
        if matrix.n_loci() != self.arch.seq_len {
            return Err(Error::Input(format!(
                "matrix has {} loci, model expects {}",
                matrix.n_loci(),
                self.arch.seq_len
            )));
        }
        rows.par_iter()
            .map(|&r| Ok(sigmoid(self.logit_one(matrix.row(r))?.f64())))
            .collect()
    }
}
