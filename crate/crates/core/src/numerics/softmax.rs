use super::tensor::Tensor;
use crate::error::{Error, Result};

const LOG_CLIP: f64 = 1e-12;

/// Softmax of `logits / temperature`, shifted by the max logit so large
/// inputs cannot overflow.
pub fn softmax(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if logits.rank() != 1 {
        return Err(Error::invalid(format!("softmax expects a rank-1 tensor, got shape {:?}", logits.shape())));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("softmax temperature must be positive, got {temperature}")));
    }
    Ok(Tensor::vector(softmax_slice(logits.data(), temperature)))
}

pub(crate) fn softmax_slice(x: &[f64], temperature: f64) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// `-ln(probs[label])` with the probability clipped at 1e-12.
pub fn cross_entropy_loss(probs: &Tensor, label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", probs.len())));
    }
    Ok(-probs.data()[label].max(LOG_CLIP).ln())
}
