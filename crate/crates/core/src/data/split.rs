//! Stratified partitioning and class weighting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitFractions { train, val, test }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    fn validate(&self) -> Result<()> {
        let f = self.as_array();
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) || self.train <= 0.0 {
            return Err(Error::Config(format!("invalid split fractions {f:?}")));
        }
        let total: f64 = f.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Disjoint train/validation/test index lists into a label vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Largest-remainder apportionment of `n` items over `fractions`: every share is
/// within one item of `n * fraction`.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // Largest fractional part first; earlier partition wins ties.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &p in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[p] > 0.0 {
            counts[p] += 1;
            left -= 1;
        }
    }
    counts
}

/// Splits binary `labels` into train/validation/test, preserving class proportions.
///
/// Deterministic for a fixed seed. Each class is shuffled independently and its
/// members apportioned so every partition's per-class count is within one sample of
/// exact proportionality.
pub fn stratified_split(labels: &[u8], fractions: SplitFractions, seed: u64) -> Result<DatasetSplit> {
    fractions.validate()?;
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidData(format!("label {bad} is not binary")));
    }
    let f = fractions.as_array();
    let partitions = f.iter().filter(|&&x| x > 0.0).count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for class in 0..=1u8 {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < partitions {
            return Err(Error::Config(format!(
                "class {class} has {} samples, fewer than the {partitions} partitions requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = apportion(members.len(), &f);
        split.train.extend_from_slice(&members[..n_train]);
        split.val.extend_from_slice(&members[n_train..n_train + n_val]);
        split.test.extend_from_slice(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// The experiment protocol: a stratified `1 - test_fraction` / `test_fraction` split,
/// then `val_fraction` of the training part held out (again stratified) for validation.
pub fn protocol_split(labels: &[u8], test_fraction: f64, val_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    let outer = stratified_split(
        labels,
        SplitFractions::new(1.0 - test_fraction, 0.0, test_fraction),
        seed,
    )?;
    if val_fraction <= 0.0 {
        return Ok(outer);
    }
    let train_labels: Vec<u8> = outer.train.iter().map(|&i| labels[i]).collect();
    let inner = stratified_split(
        &train_labels,
        SplitFractions::new(1.0 - val_fraction, val_fraction, 0.0),
        seed.wrapping_add(1),
    )?;
    Ok(DatasetSplit {
        train: inner.train.iter().map(|&i| outer.train[i]).collect(),
        val: inner.val.iter().map(|&i| outer.train[i]).collect(),
        test: outer.test,
        seed,
    })
}

/// Per-class loss weights proportional to `1/sqrt(class frequency)`, scaled so the
/// mean per-sample weight over the training labels is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub susceptible: f64,
    pub resistant: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights {
        susceptible: 1.0,
        resistant: 1.0,
    };

    pub fn from_labels(train_labels: &[u8]) -> Result<Self> {
        let n1 = train_labels.iter().filter(|&&l| l == 1).count();
        let n0 = train_labels.iter().filter(|&&l| l == 0).count();
        if n0 + n1 != train_labels.len() {
            return Err(Error::InvalidData("labels must be 0 or 1".into()));
        }
        if n0 == 0 || n1 == 0 {
            return Err(Error::Config(format!(
                "class weights need both classes, got {n0} susceptible / {n1} resistant"
            )));
        }
        let (s0, s1) = ((n0 as f64).sqrt(), (n1 as f64).sqrt());
        let scale = (n0 + n1) as f64 / (s0 + s1);
        Ok(ClassWeights {
            susceptible: scale / s0,
            resistant: scale / s1,
        })
    }

    #[inline]
    pub fn weight(&self, label: u8) -> f64 {
        if label == 1 {
            self.resistant
        } else {
            self.susceptible
        }
    }
}
