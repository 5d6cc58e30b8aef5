use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::Rng;

pub(crate) fn check_drop_prob(drop_prob: f64) -> Result<()> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(Error::invalid(format!("drop probability must lie in [0, 1), got {drop_prob}")));
    }
    Ok(())
}

pub(crate) fn fill_mask(mask: &mut [f64], drop_prob: f64, rng: &mut Rng) {
    let keep_scale = 1.0 / (1.0 - drop_prob);
    for m in mask.iter_mut() {
        *m = if rng.random::<f64>() < drop_prob { 0.0 } else { keep_scale };
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `drop_prob`,
/// otherwise `1 / (1 - drop_prob)`, so the mask has unit mean.
pub fn dropout_mask(dim: usize, drop_prob: f64, rng: &mut Rng) -> Result<Tensor> {
    check_drop_prob(drop_prob)?;
    if dim == 0 {
        return Err(Error::invalid("mask dimension must be positive"));
    }
    let mut mask = vec![1.0; dim];
    if drop_prob > 0.0 {
        fill_mask(&mut mask, drop_prob, rng);
    }
    Ok(Tensor::vector(mask))
}

/// Closed-form variance of each output of `y = W (D ⊙ x) + b` where the
/// `D_i ~ Bernoulli(keep_prob)` are independent and unscaled:
/// `Var(y_j) = Σ_i (W_ji x_i)^2 keep_prob (1 - keep_prob)`.
///
/// `weight` is `[out, in]`; the bias shifts the mean only and is not needed.
pub fn embedding_component_variance(weight: &Tensor, x: &Tensor, keep_prob: f64) -> Result<Tensor> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(format!("keep probability must lie in (0, 1], got {keep_prob}")));
    }
    if weight.rank() != 2 {
        return Err(Error::invalid(format!("weight must be rank-2, got {:?}", weight.shape())));
    }
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    x.expect_shape("embedding_component_variance", &[inp])?;
    let bern_var = keep_prob * (1.0 - keep_prob);
    let var = (0..out)
        .map(|j| weight.row(j).iter().zip(x.data()).map(|(w, xi)| (w * xi).powi(2)).sum::<f64>() * bern_var)
        .collect();
    Ok(Tensor::vector(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_drop_is_all_ones() {
        let m = dropout_mask(7, 0.0, &mut seeded(1)).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_mean_is_one() {
        let m = dropout_mask(100_000, 0.1, &mut seeded(2)).unwrap();
        let mean = m.data().iter().sum::<f64>() / m.len() as f64;
        assert!((0.99..=1.01).contains(&mean), "{mean}");
        assert!(m.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-15));
    }

    #[test]
    fn mask_is_reproducible() {
        let a = dropout_mask(4, 0.5, &mut seeded(3)).unwrap();
        let b = dropout_mask(4, 0.5, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_drop_prob_of_one() {
        assert!(dropout_mask(4, 1.0, &mut seeded(0)).is_err());
        assert!(dropout_mask(4, -0.1, &mut seeded(0)).is_err());
    }

    #[test]
    fn closed_form_hand_values() {
        let w = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let x = Tensor::vector(vec![1.0, 1.0]);
        let v = embedding_component_variance(&w, &x, 0.5).unwrap();
        assert_eq!(v.data(), &[0.5]);
        let v = embedding_component_variance(&w, &x, 1.0).unwrap();
        assert_eq!(v.data(), &[0.0]);
        assert!(embedding_component_variance(&w, &x, 0.0).is_err());
        assert!(embedding_component_variance(&w, &Tensor::vector(vec![1.0]), 0.5).is_err());
    }
}
