use rand::Rng as _;

use super::layer::Layer;
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng;

const PROBE_SEED: u64 = 0x0067_7261_6463_686b;

/// Outcome of a central-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Human-readable location of the worst coordinate, e.g. `param[0][5]`.
    pub worst: String,
    pub coordinates: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares `backward` against central differences of the scalar
/// `<r, forward(x)>` for a fixed random probe `r`, over every input and
/// parameter coordinate.
pub fn finite_difference_check(layer: &Layer, input: &Tensor, eps: f64) -> Result<GradCheck> {
    let out_shape = layer.output_shape(input.shape())?;
    let mut g = rng::seeded(PROBE_SEED);
    let n_out: usize = out_shape.iter().product();
    let probe = Tensor::new(out_shape, (0..n_out).map(|_| g.random_range(-1.0..1.0)).collect())?;
    let objective = |l: &Layer, x: &Tensor| -> Result<f64> {
        let y = l.forward(x)?;
        Ok(y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum())
    };

    let analytic = layer.backward(input, &probe)?;
    let mut check = GradCheck { max_relative_error: 0.0, worst: String::from("none"), coordinates: 0 };
    let mut record = |err: f64, at: String| {
        check.coordinates += 1;
        if err > check.max_relative_error || check.coordinates == 1 {
            check.max_relative_error = err;
            check.worst = at;
        }
    };

    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += eps;
        let mut minus = input.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (objective(layer, &plus)? - objective(layer, &minus)?) / (2.0 * eps);
        record(relative_error(analytic.input_grad.data()[i], numeric), format!("input[{i}]"));
    }

    for (p, grad) in analytic.param_grads.iter().enumerate() {
        for i in 0..grad.len() {
            let mut plus = layer.clone();
            plus.params_mut()[p].data_mut()[i] += eps;
            let mut minus = layer.clone();
            minus.params_mut()[p].data_mut()[i] -= eps;
            let numeric = (objective(&plus, input)? - objective(&minus, input)?) / (2.0 * eps);
            record(relative_error(grad.data()[i], numeric), format!("param[{p}][{i}]"));
        }
    }
    Ok(check)
}
