//! Finite-difference gradient checks shared by the gradient tests and the acceptance run.
//! Every check returns the worst relative (or, for the conv oracle, absolute) error of one
//! random case.
#![allow(dead_code)]

use amrnet::data::ClassWeights;
use amrnet::nn::layers::*;
use amrnet::nn::{weighted_bce, weighted_bce_logit_grad, Architecture, BlockSpec, CnnModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Relative error with a small floor so near-zero gradients compare absolutely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error of `analytic` against central differences of `f` around `x`.
fn fd_error(x: &Tensor<f64>, analytic: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> f64 {
    assert_eq!(x.shape(), analytic.shape());
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        let numeric = (f(&xp) - f(&xm)) / (2.0 * H);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

fn random_tokens(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.gen_range(0..5u8)).collect()
}

pub fn conv1d(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, l, cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..9), rng.gen_range(1..4), rng.gen_range(1..4));
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let x = random_tensor(&mut rng, &[b, l, cin]);
    let w = random_tensor(&mut rng, &[k, cin, cout]);
    let bias = random_tensor(&mut rng, &[cout]);
    let r = random_tensor(&mut rng, &[b, l, cout]);
    let mut dw = Tensor::zeros(&[k, cin, cout]);
    let mut db = Tensor::zeros(&[cout]);
    let dx = conv1d_backward(&x, &w, &r, &mut dw, &mut db).unwrap();
    fd_error(&x, &dx, |x| dot(&conv1d_forward(x, &w, &bias).unwrap(), &r))
        .max(fd_error(&w, &dw, |w| dot(&conv1d_forward(&x, w, &bias).unwrap(), &r)))
        .max(fd_error(&bias, &db, |bb| dot(&conv1d_forward(&x, &w, bb).unwrap(), &r)))
}

/// Largest absolute gap between the optimized conv and a direct triple loop.
pub fn conv1d_vs_naive(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let (b, l, cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..12), rng.gen_range(1..5), rng.gen_range(1..5));
    let k = [1, 3, 5, 7][rng.gen_range(0..4)];
    let x = random_tensor(&mut rng, &[b, l, cin]);
    let w = random_tensor(&mut rng, &[k, cin, cout]);
    let bias = random_tensor(&mut rng, &[cout]);
    let y = conv1d_forward(&x, &w, &bias).unwrap();
    let pad = (k / 2) as isize;
    let mut worst = 0.0f64;
    for bi in 0..b {
        for p in 0..l {
            for o in 0..cout {
                let mut s = bias.data()[o];
                for t in 0..k {
                    let src = p as isize + t as isize - pad;
                    if src < 0 || src >= l as isize {
                        continue;
                    }
                    for c in 0..cin {
                        s += x.data()[(bi * l + src as usize) * cin + c] * w.data()[(t * cin + c) * cout + o];
                    }
                }
                worst = worst.max((y.data()[(bi * l + p) * cout + o] - s).abs());
            }
        }
    }
    worst
}

pub fn embedding_and_fused_conv(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
    let (b, l, dim, cout) = (rng.gen_range(1..4), rng.gen_range(1..9), rng.gen_range(1..4), rng.gen_range(1..4));
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let tokens = random_tokens(&mut rng, b * l);
    let table = random_tensor(&mut rng, &[5, dim]);
    let w = random_tensor(&mut rng, &[k, dim, cout]);
    let bias = random_tensor(&mut rng, &[cout]);

    let r = random_tensor(&mut rng, &[b, l, dim]);
    let mut dtable = Tensor::zeros(&[5, dim]);
    embedding_backward(&tokens, &r, &mut dtable);
    let mut worst = fd_error(&table, &dtable, |t| dot(&embedding_forward(&tokens, b, t).unwrap(), &r));

    let r = random_tensor(&mut rng, &[b, l, cout]);
    let (mut dt, mut dw, mut db) = (Tensor::zeros(&[5, dim]), Tensor::zeros(&[k, dim, cout]), Tensor::zeros(&[cout]));
    embed_conv_backward(&tokens, b, &table, &w, &r, &mut dt, &mut dw, &mut db).unwrap();
    let f = |t: &Tensor<f64>, w: &Tensor<f64>, bb: &Tensor<f64>| dot(&embed_conv_forward(&tokens, b, t, w, bb).unwrap(), &r);
    worst = worst.max(fd_error(&table, &dt, |t| f(t, &w, &bias)));
    worst = worst.max(fd_error(&w, &dw, |w| f(&table, w, &bias)));
    worst.max(fd_error(&bias, &db, |bb| f(&table, &w, bb)))
}

pub fn batchnorm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
    let (b, l, c) = (rng.gen_range(1..4), rng.gen_range(2..7), rng.gen_range(1..4));
    let x = random_tensor(&mut rng, &[b, l, c]);
    let r = random_tensor(&mut rng, &[b, l, c]);
    let mut bn = BatchNorm::<f64>::new(c);
    bn.scale.value = random_tensor(&mut rng, &[c]);
    bn.shift.value = random_tensor(&mut rng, &[c]);
    let template = bn.clone();
    let (_, cache) = bn.forward_train(&x).unwrap();
    bn.scale.zero_grad();
    bn.shift.zero_grad();
    let dx = bn.backward(&cache, &r).unwrap();
    let out = |bn: &BatchNorm<f64>, x: &Tensor<f64>| dot(&bn.clone().forward_train(x).unwrap().0, &r);
    let mut worst = fd_error(&x, &dx, |x| out(&template, x));
    worst = worst.max(fd_error(&template.scale.value, bn.scale.grad.as_ref().unwrap(), |s| {
        let mut m = template.clone();
        m.scale.value = s.clone();
        out(&m, &x)
    }));
    worst.max(fd_error(&template.shift.value, bn.shift.grad.as_ref().unwrap(), |s| {
        let mut m = template.clone();
        m.shift.value = s.clone();
        out(&m, &x)
    }))
}

/// ReLU, max pooling, global max pooling, dense and dropout.
pub fn elementwise_pool_dense_dropout(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
    let (b, l, c) = (rng.gen_range(1..4), rng.gen_range(2..9), rng.gen_range(1..4));
    let x = random_tensor(&mut rng, &[b, l, c]);

    let r = random_tensor(&mut rng, &[b, l, c]);
    let dx = relu_backward(&x, &r);
    let mut worst = fd_error(&x, &dx, |x| dot(&relu_forward(x), &r));

    let (y, arg) = maxpool1d_forward(&x, 2).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    let dx = maxpool1d_backward(&arg, &r, l).unwrap();
    worst = worst.max(fd_error(&x, &dx, |x| dot(&maxpool1d_forward(x, 2).unwrap().0, &r)));

    let r = random_tensor(&mut rng, &[b, c]);
    let (_, arg) = global_maxpool_forward(&x).unwrap();
    let dx = global_maxpool_backward(&arg, &r, l).unwrap();
    worst = worst.max(fd_error(&x, &dx, |x| dot(&global_maxpool_forward(x).unwrap().0, &r)));

    let fout = rng.gen_range(1..5);
    let x2 = random_tensor(&mut rng, &[b, c]);
    let w = random_tensor(&mut rng, &[c, fout]);
    let bias = random_tensor(&mut rng, &[fout]);
    let r = random_tensor(&mut rng, &[b, fout]);
    let (mut dw, mut db) = (Tensor::zeros(&[c, fout]), Tensor::zeros(&[fout]));
    let dx = dense_backward(&x2, &w, &r, &mut dw, &mut db).unwrap();
    worst = worst.max(fd_error(&x2, &dx, |x| dot(&dense_forward(x, &w, &bias).unwrap(), &r)));
    worst = worst.max(fd_error(&w, &dw, |w| dot(&dense_forward(&x2, w, &bias).unwrap(), &r)));
    worst = worst.max(fd_error(&bias, &db, |bb| dot(&dense_forward(&x2, &w, bb).unwrap(), &r)));

    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, mask) = dropout_forward(&x2, 0.4, true, &mut drop_rng);
    let r = random_tensor(&mut rng, &[b, c]);
    let dx = dropout_backward(mask.as_deref(), &r);
    worst.max(fd_error(&x2, &dx, |x| {
        dot(&dropout_forward(x, 0.4, true, &mut ChaCha8Rng::seed_from_u64(seed)).0, &r)
    }))
}

pub fn weighted_bce_logits(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let n = rng.gen_range(2..10);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let w = ClassWeights::from_labels(&labels).unwrap();
    let z = random_tensor(&mut rng, &[n]);
    let probs: Vec<f64> = z.data().iter().map(|&v| sigmoid(v)).collect();
    let g = Tensor::from_vec(&[n], weighted_bce_logit_grad(&probs, &labels, &w)).unwrap();
    fd_error(&z, &g, |z| {
        let p: Vec<f64> = z.data().iter().map(|&v| sigmoid(v)).collect();
        weighted_bce(&p, &labels, &w).0
    })
}

fn small_arch(seq_len: usize) -> Architecture {
    Architecture {
        seq_len,
        embedding_dim: 3,
        blocks: vec![
            BlockSpec { filters: 4, kernel: 3, pool: true },
            BlockSpec { filters: 3, kernel: 5, pool: true },
            BlockSpec { filters: 2, kernel: 3, pool: false },
        ],
        hidden_units: 5,
        dropout: 0.0,
        l2: 0.0,
    }
}

/// Loss gradient of every parameter of a small network built from the same blocks.
pub fn whole_model(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
    let (batch, len) = (4, 16);
    let tokens = random_tokens(&mut rng, batch * len);
    let labels = vec![0, 1, 1, 0];
    let w = ClassWeights::from_labels(&[0, 0, 0, 1]).unwrap();
    let mut model = CnnModel::<f64>::new(small_arch(len), seed).unwrap();

    let loss_of = |m: &CnnModel<f64>| {
        let mut m = m.snapshot();
        let z = m.forward_train(&tokens, batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        weighted_bce(&p, &labels, &w).0
    };

    model.zero_grad();
    let z = model.forward_train(&tokens, batch, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
    model.backward(&weighted_bce_logit_grad(&p, &labels, &w)).unwrap();
    let base = model.snapshot();
    let grads: Vec<Tensor<f64>> = model
        .parameters()
        .iter()
        .map(|p| p.grad.clone().expect("every parameter gets a gradient"))
        .collect();

    let mut worst = 0.0f64;
    for (pi, g) in grads.iter().enumerate() {
        let value = base.parameters()[pi].value.clone();
        worst = worst.max(fd_error(&value, g, |v| {
            let mut m = base.snapshot();
            m.parameters_mut()[pi].value = v.clone();
            loss_of(&m)
        }));
    }
    worst
}

/// Name, check, number of random cases.
pub type GradCheck = (&'static str, fn(u64) -> f64, u64);

pub const GRADIENT_CHECKS: [GradCheck; 6] = [
    ("conv1d", conv1d, 20),
    ("embedding + fused conv", embedding_and_fused_conv, 20),
    ("batchnorm", batchnorm, 20),
    ("relu/pool/dense/dropout", elementwise_pool_dense_dropout, 20),
    ("weighted bce", weighted_bce_logits, 20),
    ("whole model", whole_model, 4),
];
