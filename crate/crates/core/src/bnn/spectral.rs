use crate::error::{Error, Result};
use crate::numerics::{dot, Tensor};

const SIGMA_FLOOR: f64 = 1e-12;

/// Result of power iteration on a weight viewed as `[rows, rest]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralStep {
    /// `weight / sigma`, same shape as the input weight.
    pub weight: Tensor,
    /// Updated left singular vector estimate (unit norm), to be persisted.
    pub u: Vec<f64>,
    /// Right singular vector estimate (unit norm).
    pub v: Vec<f64>,
    /// Estimated top singular value, floored at 1e-12.
    pub sigma: f64,
}

fn normalize(v: &mut [f64]) -> bool {
    let n = dot(v, v).sqrt();
    if n < SIGMA_FLOOR {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Runs `n_iters` power-iteration steps from `u` and divides the weight by
/// the resulting singular value estimate. Conv kernels are viewed as
/// `out_ch x (in_ch * kh * kw)`.
pub fn spectral_normalize(weight: &Tensor, u: &[f64], n_iters: usize) -> Result<SpectralStep> {
    if n_iters == 0 {
        return Err(Error::invalid("power iteration needs at least one step"));
    }
    let rows = weight.shape()[0];
    let cols = weight.len() / rows;
    if u.len() != rows {
        return Err(Error::ShapeMismatch { op: "spectral_normalize", expected: vec![rows], found: vec![u.len()] });
    }
    let w = weight.data();
    let mut u = u.to_vec();
    let mut v = vec![0.0; cols];
    for _ in 0..n_iters {
        let mut next_v = vec![0.0; cols];
        for (r, &ur) in u.iter().enumerate() {
            for (nv, &wrc) in next_v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *nv += wrc * ur;
            }
        }
        if !normalize(&mut next_v) {
            break;
        }
        v = next_v;
        let mut next_u: Vec<f64> = (0..rows).map(|r| dot(&w[r * cols..(r + 1) * cols], &v)).collect();
        if !normalize(&mut next_u) {
            break;
        }
        u = next_u;
    }
    let wv: Vec<f64> = (0..rows).map(|r| dot(&w[r * cols..(r + 1) * cols], &v)).collect();
    let sigma = dot(&u, &wv).max(SIGMA_FLOOR);
    let normalized = Tensor::new(weight.shape().to_vec(), w.iter().map(|x| x / sigma).collect())?;
    Ok(SpectralStep { weight: normalized, u, v, sigma })
}

/// Gradient with respect to the raw weight given the gradient with respect
/// to the normalized weight, treating `u` and `v` as constants:
/// `(G - <G, W_sn> u v^T) / sigma`.
pub(crate) fn raw_weight_grad(step: &SpectralStep, grad_normalized: &Tensor) -> Tensor {
    let g = grad_normalized.data();
    let inner = dot(g, step.weight.data());
    let cols = step.v.len();
    let data =
        g.iter().enumerate().map(|(i, gi)| (gi - inner * step.u[i / cols] * step.v[i % cols]) / step.sigma).collect();
    Tensor::new(grad_normalized.shape().to_vec(), data).expect("same shape as the weight")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Vec<f64> {
        vec![1.0 / (n as f64).sqrt(); n]
    }

    #[test]
    fn diagonal_matrix() {
        let w = Tensor::matrix(2, 2, vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let s = spectral_normalize(&w, &[0.6, 0.8], 50).unwrap();
        assert!((s.sigma - 3.0).abs() < 1e-6, "{}", s.sigma);
        let again = spectral_normalize(&s.weight, &s.u, 50).unwrap();
        assert!((again.sigma - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_unchanged() {
        let w = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let s = spectral_normalize(&w, &unit(3), 5).unwrap();
        assert!((s.sigma - 1.0).abs() < 1e-12);
        for (a, b) in s.weight.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_matrix_is_clamped() {
        let w = Tensor::zeros(&[2, 3]);
        let s = spectral_normalize(&w, &unit(2), 10).unwrap();
        assert_eq!(s.sigma, 1e-12);
        assert!(s.weight.data().iter().all(|&x| x == 0.0));
        assert!((dot(&s.u, &s.u) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_state() {
        let w = Tensor::zeros(&[2, 3]);
        assert!(spectral_normalize(&w, &unit(3), 1).is_err());
        assert!(spectral_normalize(&w, &unit(2), 0).is_err());
    }
}
