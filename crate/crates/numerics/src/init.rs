//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

pub fn normal(rng: &mut impl Rng, shape: &[usize], mean: f64, std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = if std > 0.0 {
        let dist = Normal::new(mean, std).expect("finite std");
        (0..n).map(|_| dist.sample(rng)).collect()
    } else {
        vec![mean; n]
    };
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// Linear weight `fan_in × fan_out`, std `1/√fan_in`.
pub fn linear_weight(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    normal(rng, &[fan_in, fan_out], 0.0, 1.0 / (fan_in as f64).sqrt())
}

pub const EMBEDDING_STD: f64 = 0.02;

pub fn embedding(rng: &mut impl Rng, rows: usize, dim: usize) -> Tensor {
    normal(rng, &[rows, dim], 0.0, EMBEDDING_STD)
}
