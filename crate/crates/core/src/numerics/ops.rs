use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// Glorot/Xavier uniform initialization for a 2-D shape `[fan_out, fan_in]`.
pub fn xavier_init(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    if shape.len() != 2 {
        return Err(Error::shape(format!(
            "xavier_init needs a 2-D shape, got {shape:?}"
        )));
    }
    let bound = xavier_bound(shape[0], shape[1]);
    let data = (0..shape[0] * shape[1])
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

pub fn xavier_bound(fan_out: usize, fan_in: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Inverted-dropout mask: entries are `0` with probability `p`, otherwise
/// `1/(1-p)`. In eval mode the mask is all ones.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut Rng, training: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::domain(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(Tensor::filled(shape, 1.0));
    }
    let keep = 1.0 / (1.0 - p);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// `param - lr * grad`.
pub fn sgd_step(param: &Tensor, grad: &Tensor, lr: f64) -> Result<Tensor> {
    let mut out = param.clone();
    sgd_update(&mut out, grad, lr)?;
    Ok(out)
}

pub fn sgd_update(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::shape(format!(
            "sgd: param {:?} vs grad {:?}",
            param.shape(),
            grad.shape()
        )));
    }
    param.axpy(-lr, grad)
}
