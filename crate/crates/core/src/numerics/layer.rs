use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer, `y = W x + b` with `W` stored `[out_dim, in_dim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawParams", try_from = "RawParams")]
pub struct Linear {
    in_dim: usize,
    out_dim: usize,
    weight: Tensor,
    bias: Tensor,
    /// Left singular vector estimate carried between power-iteration steps.
    spectral_u: Option<Vec<f64>>,
}

/// 2-D convolution with valid padding and unit dilation. Weight layout is
/// `[out_ch, in_ch, kernel_h, kernel_w]`; inputs are `[in_ch, h, w]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawParams", try_from = "RawParams")]
pub struct Conv2d {
    in_ch: usize,
    out_ch: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    weight: Tensor,
    bias: Tensor,
    spectral_u: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Linear(Linear),
    Conv2d(Conv2d),
    Relu,
    /// Non-overlapping max pooling (window == stride == `size`).
    MaxPool2d {
        size: usize,
    },
    Flatten,
}

/// Gradients of a scalar objective with respect to a layer's input and
/// parameters. `param_grads` follows [`Layer::params`] order (weight, bias).
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle {
    pub input_grad: Tensor,
    pub param_grads: Vec<Tensor>,
}

/// Serialized form of a weight layer; dimensions are recovered from the
/// weight shape so a document cannot disagree with itself.
#[derive(Clone, Serialize, Deserialize)]
struct RawParams {
    weight: Tensor,
    bias: Tensor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spectral_u: Option<Vec<f64>>,
}

impl From<Linear> for RawParams {
    fn from(l: Linear) -> Self {
        RawParams { weight: l.weight, bias: l.bias, stride: None, spectral_u: l.spectral_u }
    }
}

impl TryFrom<RawParams> for Linear {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let mut l = Linear::new(raw.weight, raw.bias)?;
        l.set_spectral_u(raw.spectral_u)?;
        Ok(l)
    }
}

impl From<Conv2d> for RawParams {
    fn from(c: Conv2d) -> Self {
        RawParams { weight: c.weight, bias: c.bias, stride: Some(c.stride), spectral_u: c.spectral_u }
    }
}

impl TryFrom<RawParams> for Conv2d {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let mut c = Conv2d::new(raw.weight, raw.bias, raw.stride.unwrap_or(1))?;
        c.set_spectral_u(raw.spectral_u)?;
        Ok(c)
    }
}

fn check_unit(u: &[f64]) -> Result<()> {
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("spectral state must have unit norm, got {norm}")));
    }
    Ok(())
}

impl Linear {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::invalid(format!("linear weight must be rank-2, got shape {:?}", weight.shape())));
        }
        let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
        bias.expect_shape("linear bias", &[out_dim])?;
        Ok(Linear { in_dim, out_dim, weight, bias, spectral_u: None })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn spectral_u(&self) -> Option<&[f64]> {
        self.spectral_u.as_deref()
    }

    pub fn set_spectral_u(&mut self, u: Option<Vec<f64>>) -> Result<()> {
        if let Some(u) = &u {
            if u.len() != self.out_dim {
                return Err(Error::ShapeMismatch {
                    op: "spectral state",
                    expected: vec![self.out_dim],
                    found: vec![u.len()],
                });
            }
            check_unit(u)?;
        }
        self.spectral_u = u;
        Ok(())
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        input.expect_shape("linear forward", &[self.in_dim])?;
        let x = input.data();
        let w = self.weight.data();
        let out = self
            .bias
            .data()
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                b + dot(row, x)
            })
            .collect();
        Ok(Tensor::vector(out))
    }

    fn backward_into(&self, input: &Tensor, grad_out: &Tensor, acc: &mut [Tensor]) -> Result<Tensor> {
        input.expect_shape("linear backward input", &[self.in_dim])?;
        grad_out.expect_shape("linear backward grad", &[self.out_dim])?;
        let x = input.data();
        let g = grad_out.data();
        let w = self.weight.data();
        let mut input_grad = vec![0.0; self.in_dim];
        let (wg, bg) = acc.split_at_mut(1);
        let wg = wg[0].data_mut();
        let bg = bg[0].data_mut();
        for (o, &go) in g.iter().enumerate() {
            bg[o] += go;
            if go == 0.0 {
                continue;
            }
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut wg[o * self.in_dim..(o + 1) * self.in_dim];
            for ((gw, &xi), (ig, &wi)) in grow.iter_mut().zip(x).zip(input_grad.iter_mut().zip(row)) {
                *gw += go * xi;
                *ig += go * wi;
            }
        }
        Ok(Tensor::vector(input_grad))
    }
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        if weight.rank() != 4 {
            return Err(Error::invalid(format!("conv weight must be rank-4, got shape {:?}", weight.shape())));
        }
        if stride == 0 {
            return Err(Error::invalid("conv stride must be positive"));
        }
        let s = weight.shape();
        let (out_ch, in_ch, kernel_h, kernel_w) = (s[0], s[1], s[2], s[3]);
        bias.expect_shape("conv bias", &[out_ch])?;
        Ok(Conv2d { in_ch, out_ch, kernel_h, kernel_w, stride, weight, bias, spectral_u: None })
    }

    pub fn in_ch(&self) -> usize {
        self.in_ch
    }

    pub fn out_ch(&self) -> usize {
        self.out_ch
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn spectral_u(&self) -> Option<&[f64]> {
        self.spectral_u.as_deref()
    }

    pub fn set_spectral_u(&mut self, u: Option<Vec<f64>>) -> Result<()> {
        if let Some(u) = &u {
            if u.len() != self.out_ch {
                return Err(Error::ShapeMismatch {
                    op: "spectral state",
                    expected: vec![self.out_ch],
                    found: vec![u.len()],
                });
            }
            check_unit(u)?;
        }
        self.spectral_u = u;
        Ok(())
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != 3 || input[0] != self.in_ch || input[1] < self.kernel_h || input[2] < self.kernel_w {
            return Err(Error::ShapeMismatch {
                op: "conv2d forward",
                expected: vec![self.in_ch, self.kernel_h.max(1), self.kernel_w.max(1)],
                found: input.to_vec(),
            });
        }
        Ok(vec![
            self.out_ch,
            (input[1] - self.kernel_h) / self.stride + 1,
            (input[2] - self.kernel_w) / self.stride + 1,
        ])
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let (oh, ow) = (out_shape[1], out_shape[2]);
        let (kh, kw, s) = (self.kernel_h, self.kernel_w, self.stride);
        let x = input.data();
        let wt = self.weight.data();
        let mut out = vec![0.0; self.out_ch * oh * ow];
        for o in 0..self.out_ch {
            let b = self.bias.data()[o];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    for c in 0..self.in_ch {
                        for ky in 0..kh {
                            let xrow = (c * h + oy * s + ky) * w + ox * s;
                            let wrow = ((o * self.in_ch + c) * kh + ky) * kw;
                            acc += dot(&wt[wrow..wrow + kw], &x[xrow..xrow + kw]);
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        Tensor::new(out_shape, out)
    }

    fn backward_into(&self, input: &Tensor, grad_out: &Tensor, acc: &mut [Tensor]) -> Result<Tensor> {
        let out_shape = self.output_shape(input.shape())?;
        grad_out.expect_shape("conv2d backward grad", &out_shape)?;
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let (oh, ow) = (out_shape[1], out_shape[2]);
        let (kh, kw, s) = (self.kernel_h, self.kernel_w, self.stride);
        let x = input.data();
        let wt = self.weight.data();
        let g = grad_out.data();
        let mut input_grad = vec![0.0; x.len()];
        let (wg, bg) = acc.split_at_mut(1);
        let wg = wg[0].data_mut();
        let bg = bg[0].data_mut();
        for o in 0..self.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = g[(o * oh + oy) * ow + ox];
                    bg[o] += go;
                    if go == 0.0 {
                        continue;
                    }
                    for c in 0..self.in_ch {
                        for ky in 0..kh {
                            let xrow = (c * h + oy * s + ky) * w + ox * s;
                            let wrow = ((o * self.in_ch + c) * kh + ky) * kw;
                            for kx in 0..kw {
                                wg[wrow + kx] += go * x[xrow + kx];
                                input_grad[xrow + kx] += go * wt[wrow + kx];
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(input.shape().to_vec(), input_grad)
    }
}

fn pool_output_shape(size: usize, input: &[usize]) -> Result<Vec<usize>> {
    if size == 0 || input.len() != 3 || input[1] < size || input[2] < size {
        return Err(Error::ShapeMismatch {
            op: "maxpool2d forward",
            expected: vec![input.first().copied().unwrap_or(1), size, size],
            found: input.to_vec(),
        });
    }
    Ok(vec![input[0], input[1] / size, input[2] / size])
}

/// Flat input index of the max element in each pooling window (first wins on ties).
fn pool_argmax(size: usize, input: &Tensor) -> Result<(Vec<usize>, Vec<usize>)> {
    let out_shape = pool_output_shape(size, input.shape())?;
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let x = input.data();
    let mut idx = Vec::with_capacity(out_shape.iter().product());
    for c in 0..out_shape[0] {
        for oy in 0..out_shape[1] {
            for ox in 0..out_shape[2] {
                let mut best = (c * h + oy * size) * w + ox * size;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = (c * h + oy * size + ky) * w + ox * size + kx;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    Ok((out_shape, idx))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Layer {
    pub fn linear(weight: Tensor, bias: Tensor) -> Result<Self> {
        Linear::new(weight, bias).map(Layer::Linear)
    }

    pub fn conv2d(weight: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        Conv2d::new(weight, bias, stride).map(Layer::Conv2d)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
        }
    }

    /// Layers that carry weights; dropout is applied to their inputs.
    pub fn is_weight_layer(&self) -> bool {
        matches!(self, Layer::Linear(_) | Layer::Conv2d(_))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Linear(l) => {
                if input != [l.in_dim] {
                    return Err(Error::ShapeMismatch {
                        op: "linear forward",
                        expected: vec![l.in_dim],
                        found: input.to_vec(),
                    });
                }
                Ok(vec![l.out_dim])
            }
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d { size } => pool_output_shape(*size, input),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Linear(l) => l.forward(input),
            Layer::Conv2d(c) => c.forward(input),
            Layer::Relu => Tensor::new(
                input.shape().to_vec(),
                input.data().iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect(),
            ),
            Layer::MaxPool2d { size } => {
                let (shape, idx) = pool_argmax(*size, input)?;
                let x = input.data();
                Tensor::new(shape, idx.into_iter().map(|i| x[i]).collect())
            }
            Layer::Flatten => Ok(input.clone().flatten()),
        }
    }

    /// Zeroed gradient buffers matching [`Layer::params`].
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    /// Adds parameter gradients into `acc` and returns the input gradient.
    pub fn backward_accumulate(&self, input: &Tensor, grad_out: &Tensor, acc: &mut [Tensor]) -> Result<Tensor> {
        match self {
            Layer::Linear(l) => l.backward_into(input, grad_out, acc),
            Layer::Conv2d(c) => c.backward_into(input, grad_out, acc),
            Layer::Relu => {
                grad_out.expect_shape("relu backward", input.shape())?;
                // subgradient 0 at x == 0
                let g =
                    input.data().iter().zip(grad_out.data()).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect();
                Tensor::new(input.shape().to_vec(), g)
            }
            Layer::MaxPool2d { size } => {
                let (shape, idx) = pool_argmax(*size, input)?;
                grad_out.expect_shape("maxpool2d backward", &shape)?;
                let mut g = vec![0.0; input.len()];
                for (&i, &go) in idx.iter().zip(grad_out.data()) {
                    g[i] += go;
                }
                Tensor::new(input.shape().to_vec(), g)
            }
            Layer::Flatten => {
                grad_out.expect_shape("flatten backward", &[input.len()])?;
                grad_out.clone().reshape(input.shape().to_vec())
            }
        }
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<GradBundle> {
        let mut param_grads = self.zero_grads();
        let input_grad = self.backward_accumulate(input, grad_out, &mut param_grads)?;
        Ok(GradBundle { input_grad, param_grads })
    }

    /// Spectral power-iteration state, for weight layers.
    pub fn spectral_u(&self) -> Option<&[f64]> {
        match self {
            Layer::Linear(l) => l.spectral_u(),
            Layer::Conv2d(c) => c.spectral_u(),
            _ => None,
        }
    }

    pub fn set_spectral_u(&mut self, u: Option<Vec<f64>>) -> Result<()> {
        match self {
            Layer::Linear(l) => l.set_spectral_u(u),
            Layer::Conv2d(c) => c.set_spectral_u(u),
            _ if u.is_none() => Ok(()),
            other => Err(Error::invalid(format!("{} layer has no weights to normalize", other.name()))),
        }
    }
}
