use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dropout::{check_drop_prob, fill_mask};
use crate::error::{Error, Result};
use crate::numerics::{softmax_slice, Layer, Tensor};
use crate::rng::{self, Rng};

/// Architecture descriptor; parameters are created by [`Network::new`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel_h: usize,
        kernel_w: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    Relu,
    MaxPool2d {
        size: usize,
    },
    Flatten,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Probability that a unit is dropped.
    pub drop_prob: f64,
    #[serde(default)]
    pub spectral_norm: bool,
    #[serde(default)]
    pub init_seed: u64,
}

impl NetworkSpec {
    /// ReLU MLP over `input_shape` (flattened first when rank > 1).
    pub fn mlp(input_shape: &[usize], hidden: &[usize], classes: usize, drop_prob: f64) -> Self {
        let mut layers = Vec::new();
        if input_shape.len() > 1 {
            layers.push(LayerSpec::Flatten);
        }
        let mut prev: usize = input_shape.iter().product();
        for &h in hidden {
            layers.push(LayerSpec::Linear { in_dim: prev, out_dim: h });
            layers.push(LayerSpec::Relu);
            prev = h;
        }
        layers.push(LayerSpec::Linear { in_dim: prev, out_dim: classes });
        NetworkSpec { input_shape: input_shape.to_vec(), layers, drop_prob, spectral_norm: false, init_seed: 0 }
    }

    /// LeNet-5 style network for `1 x 28 x 28` inputs: two conv/pool blocks and three dense layers.
    pub fn lenet5(classes: usize, drop_prob: f64) -> Self {
        use LayerSpec::*;
        NetworkSpec {
            input_shape: vec![1, 28, 28],
            layers: vec![
                Conv2d { in_ch: 1, out_ch: 6, kernel_h: 5, kernel_w: 5, stride: 1 },
                Relu,
                MaxPool2d { size: 2 },
                Conv2d { in_ch: 6, out_ch: 16, kernel_h: 5, kernel_w: 5, stride: 1 },
                Relu,
                MaxPool2d { size: 2 },
                Flatten,
                Linear { in_dim: 256, out_dim: 120 },
                Relu,
                Linear { in_dim: 120, out_dim: 84 },
                Relu,
                Linear { in_dim: 84, out_dim: classes },
            ],
            drop_prob,
            spectral_norm: false,
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_spectral_norm(mut self, on: bool) -> Self {
        self.spectral_norm = on;
        self
    }

    /// Checks the shape chain and returns the output shape.
    pub fn validate(&self) -> Result<Vec<usize>> {
        check_drop_prob(self.drop_prob)?;
        if self.layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        if !self.layers.iter().any(|l| matches!(l, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. })) {
            return Err(Error::invalid("network has no weight layers"));
        }
        let mut shape = self.input_shape.clone();
        for spec in &self.layers {
            // zero-weight instantiation is enough to reuse the layer shape rules
            shape = instantiate(spec, &mut None)?.output_shape(&shape)?;
        }
        if shape.len() != 1 {
            return Err(Error::invalid(format!("network output must be rank-1 logits, got shape {shape:?}")));
        }
        Ok(shape)
    }
}

fn uniform_tensor(shape: &[usize], bound: f64, g: &mut Option<&mut Rng>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match g {
        Some(g) => (0..n).map(|_| g.random_range(-bound..=bound)).collect(),
        None => vec![0.0; n],
    };
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}

fn instantiate(spec: &LayerSpec, g: &mut Option<&mut Rng>) -> Result<Layer> {
    let positive = |dims: &[usize]| {
        if dims.contains(&0) {
            Err(Error::invalid(format!("layer {spec:?} has a zero dimension")))
        } else {
            Ok(())
        }
    };
    Ok(match *spec {
        LayerSpec::Linear { in_dim, out_dim } => {
            positive(&[in_dim, out_dim])?;
            let bound = 1.0 / (in_dim as f64).sqrt();
            Layer::linear(uniform_tensor(&[out_dim, in_dim], bound, g), uniform_tensor(&[out_dim], bound, g))?
        }
        LayerSpec::Conv2d { in_ch, out_ch, kernel_h, kernel_w, stride } => {
            positive(&[in_ch, out_ch, kernel_h, kernel_w, stride])?;
            let bound = 1.0 / ((in_ch * kernel_h * kernel_w) as f64).sqrt();
            Layer::conv2d(
                uniform_tensor(&[out_ch, in_ch, kernel_h, kernel_w], bound, g),
                uniform_tensor(&[out_ch], bound, g),
                stride,
            )?
        }
        LayerSpec::Relu => Layer::Relu,
        LayerSpec::MaxPool2d { size } => {
            positive(&[size])?;
            Layer::MaxPool2d { size }
        }
        LayerSpec::Flatten => Layer::Flatten,
    })
}

/// `T` stochastic passes of one datum.
#[derive(Clone, Debug, PartialEq)]
pub struct MCRun {
    /// `T x C`, one softmax distribution per pass.
    pub softmax_samples: Tensor,
    /// Per weight layer, `T x d_i` flattened block outputs.
    pub layer_embeddings: Vec<Tensor>,
}

impl MCRun {
    pub fn samples(&self) -> usize {
        self.softmax_samples.rows()
    }
}

/// Dropout-before-every-weight-layer network with concrete parameters.
///
/// Layers are grouped into blocks: each block starts at a weight layer and
/// runs up to the next one. The output of block `i` is embedding `i`; the
/// last block's output is the logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

#[derive(Deserialize)]
struct RawNetwork {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl TryFrom<RawNetwork> for Network {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        Network::from_layers(raw.spec, raw.layers)
    }
}

/// Per-layer inputs recorded during a training pass.
pub(crate) struct Trace {
    /// Input of each layer after dropout has been applied.
    pub inputs: Vec<Tensor>,
    /// Dropout mask applied before each layer, if any.
    pub masks: Vec<Option<Vec<f64>>>,
    pub logits: Tensor,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut g = rng::seeded(spec.init_seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for ls in &spec.layers {
            let mut layer = instantiate(ls, &mut Some(&mut g))?;
            if spec.spectral_norm && layer.is_weight_layer() {
                let rows = layer.params()[0].shape()[0];
                let mut u: Vec<f64> = (0..rows).map(|_| g.sample(StandardNormal)).collect();
                let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                u.iter_mut().for_each(|v| *v /= n);
                layer.set_spectral_u(Some(u))?;
            }
            layers.push(layer);
        }
        Ok(Network { spec, layers })
    }

    /// Builds a network from explicit layers, validating the shape chain.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layers.len() {
            return Err(Error::invalid(format!(
                "spec lists {} layers but {} were given",
                spec.layers.len(),
                layers.len()
            )));
        }
        let mut shape = spec.input_shape.clone();
        for (ls, layer) in spec.layers.iter().zip(&layers) {
            let expected = instantiate(ls, &mut None)?;
            let same_kind = std::mem::discriminant(&expected) == std::mem::discriminant(layer);
            let same_params = expected.params().iter().zip(layer.params()).all(|(a, b)| a.shape() == b.shape());
            if !same_kind || !same_params || expected.output_shape(&shape)? != layer.output_shape(&shape)? {
                return Err(Error::invalid(format!("layer {} does not match spec {ls:?}", layer.name())));
            }
            shape = layer.output_shape(&shape)?;
        }
        Ok(Network { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn drop_prob(&self) -> f64 {
        self.spec.drop_prob
    }

    pub fn n_classes(&self) -> usize {
        match self.layers.iter().rev().find(|l| l.is_weight_layer()) {
            Some(Layer::Linear(l)) => l.out_dim(),
            _ => self.output_len(),
        }
    }

    fn output_len(&self) -> usize {
        self.spec.validate().map_or(0, |s| s[0])
    }

    /// Number of embeddings produced per pass (one per weight layer).
    pub fn n_embeddings(&self) -> usize {
        self.layers.iter().filter(|l| l.is_weight_layer()).count()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.expect_shape("network input", &self.spec.input_shape)
    }

    /// Index of the last layer of every block, in order.
    fn block_ends(&self) -> Vec<usize> {
        let starts: Vec<usize> = (0..self.layers.len()).filter(|&i| self.layers[i].is_weight_layer()).collect();
        starts
            .iter()
            .enumerate()
            .map(|(k, _)| starts.get(k + 1).map_or(self.layers.len() - 1, |&next| next - 1))
            .collect()
    }

    fn run(&self, x: &Tensor, mut rng: Option<&mut Rng>, trace: bool) -> Result<(Tensor, Vec<Tensor>, Option<Trace>)> {
        self.check_input(x)?;
        let p = self.spec.drop_prob;
        let ends = self.block_ends();
        let mut embeddings = Vec::with_capacity(ends.len());
        let mut inputs = Vec::new();
        let mut masks = Vec::new();
        let mut current = x.clone();
        let mut next_end = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut mask = None;
            if layer.is_weight_layer() && p > 0.0 {
                if let Some(g) = rng.as_deref_mut() {
                    let mut m = vec![0.0; current.len()];
                    fill_mask(&mut m, p, g);
                    current.data_mut().iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    mask = Some(m);
                }
            }
            let out = layer.forward(&current)?;
            if trace {
                inputs.push(std::mem::replace(&mut current, out));
                masks.push(mask);
            } else {
                current = out;
            }
            if next_end < ends.len() && ends[next_end] == i {
                embeddings.push(current.clone().flatten());
                next_end += 1;
            }
        }
        let logits = current;
        let trace = trace.then(|| Trace { inputs, masks, logits: logits.clone() });
        Ok((logits, embeddings, trace))
    }

    /// Deterministic pass with dropout disabled.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, None, false)?.0)
    }

    /// One stochastic pass: a fresh dropout mask on the input of every weight
    /// layer. Returns the logits and every block's flattened output.
    pub fn forward_stochastic(&self, x: &Tensor, rng: &mut Rng) -> Result<(Tensor, Vec<Tensor>)> {
        let (logits, embeddings, _) = self.run(x, Some(rng), false)?;
        Ok((logits, embeddings))
    }

    pub(crate) fn forward_trace(&self, x: &Tensor, rng: &mut Rng) -> Result<Trace> {
        Ok(self.run(x, Some(rng), true)?.2.expect("trace requested"))
    }

    /// `samples` independent stochastic passes of `x`.
    pub fn mc_sample(&self, x: &Tensor, samples: usize, rng: &mut Rng) -> Result<MCRun> {
        if samples < 2 {
            return Err(Error::invalid(format!(
                "MC sampling needs at least 2 passes for pairwise distances, got {samples}"
            )));
        }
        let mut probs = Vec::new();
        let mut per_layer: Vec<Vec<f64>> = Vec::new();
        let mut dims = Vec::new();
        for t in 0..samples {
            let (logits, embeddings) = self.forward_stochastic(x, rng)?;
            probs.extend(softmax_slice(logits.data(), 1.0));
            if t == 0 {
                dims = embeddings.iter().map(Tensor::len).collect();
                per_layer = dims.iter().map(|d| Vec::with_capacity(d * samples)).collect();
            }
            for (buf, e) in per_layer.iter_mut().zip(embeddings) {
                buf.extend(e.into_data());
            }
        }
        let classes = probs.len() / samples;
        Ok(MCRun {
            softmax_samples: Tensor::matrix(samples, classes, probs)?,
            layer_embeddings: per_layer
                .into_iter()
                .zip(dims)
                .map(|(buf, d)| Tensor::matrix(samples, d, buf))
                .collect::<Result<_>>()?,
        })
    }

    /// Index of the predicted class under the deterministic pass.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(self.forward(x)?.data()))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best }).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Network {
        Network::new(NetworkSpec::mlp(&[4], &[8, 6], 3, 0.5).with_seed(11)).unwrap()
    }

    #[test]
    fn mlp_layout() {
        let s = NetworkSpec::mlp(&[1, 28, 28], &[128, 64], 10, 0.1);
        assert_eq!(s.validate().unwrap(), vec![10]);
        assert_eq!(s.layers[0], LayerSpec::Flatten);
        let net = Network::new(s).unwrap();
        assert_eq!(net.n_embeddings(), 3);
        assert_eq!(net.n_classes(), 10);
    }

    #[test]
    fn lenet_has_five_blocks() {
        let net = Network::new(NetworkSpec::lenet5(10, 0.1)).unwrap();
        assert_eq!(net.n_embeddings(), 5);
        let x = Tensor::zeros(&[1, 28, 28]);
        let (logits, emb) = net.forward_stochastic(&x, &mut rng::seeded(0)).unwrap();
        assert_eq!(logits.len(), 10);
        let dims: Vec<usize> = emb.iter().map(Tensor::len).collect();
        assert_eq!(dims, vec![6 * 12 * 12, 256, 120, 84, 10]);
    }

    #[test]
    fn spec_validation() {
        let mut s = NetworkSpec::mlp(&[4], &[3], 2, 0.1);
        s.drop_prob = 1.0;
        assert!(s.validate().is_err());
        let mut s = NetworkSpec::mlp(&[4], &[3], 2, 0.1);
        s.layers[0] = LayerSpec::Linear { in_dim: 5, out_dim: 3 };
        assert!(s.validate().is_err());
        let s = NetworkSpec {
            input_shape: vec![4],
            layers: vec![LayerSpec::Relu],
            drop_prob: 0.0,
            spectral_norm: false,
            init_seed: 0,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_dropout_matches_deterministic() {
        let mut spec = NetworkSpec::mlp(&[4], &[8], 3, 0.0);
        spec.init_seed = 3;
        let net = Network::new(spec).unwrap();
        let x = Tensor::vector(vec![0.1, -0.3, 0.7, 1.2]);
        let (logits, _) = net.forward_stochastic(&x, &mut rng::seeded(9)).unwrap();
        assert_eq!(logits, net.forward(&x).unwrap());
        let run = net.mc_sample(&x, 5, &mut rng::seeded(1)).unwrap();
        for t in 1..5 {
            assert_eq!(run.softmax_samples.row(t), run.softmax_samples.row(0));
        }
    }

    #[test]
    fn same_seed_same_pass() {
        let net = small();
        let x = Tensor::vector(vec![0.5, -1.0, 2.0, 0.25]);
        let a = net.forward_stochastic(&x, &mut rng::seeded(5)).unwrap();
        let b = net.forward_stochastic(&x, &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let net = small();
        let x = Tensor::vector(vec![0.5, -1.0, 2.0, 0.25]);
        for s in 0..8u64 {
            let (_, a) = net.forward_stochastic(&x, &mut rng::seeded(2 * s)).unwrap();
            let (_, b) = net.forward_stochastic(&x, &mut rng::seeded(2 * s + 1)).unwrap();
            assert_ne!(a, b, "seed pair {s}");
        }
    }

    #[test]
    fn mc_run_shapes() {
        let net = small();
        let x = Tensor::vector(vec![0.5, -1.0, 2.0, 0.25]);
        let run = net.mc_sample(&x, 32, &mut rng::seeded(0)).unwrap();
        assert_eq!(run.softmax_samples.shape(), &[32, 3]);
        assert_eq!(run.layer_embeddings.len(), 3);
        assert_eq!(run.layer_embeddings[0].shape(), &[32, 8]);
        for row in run.softmax_samples.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(net.mc_sample(&x, 1, &mut rng::seeded(0)).is_err());
        let again = net.mc_sample(&x, 32, &mut rng::seeded(0)).unwrap();
        assert_eq!(run, again);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        assert!(small().forward(&Tensor::vector(vec![1.0; 5])).is_err());
    }

    #[test]
    fn from_layers_checks_kinds() {
        let net = small();
        assert!(Network::from_layers(net.spec().clone(), net.layers().to_vec()).is_ok());
        let mut layers = net.layers().to_vec();
        layers.swap(0, 1);
        assert!(Network::from_layers(net.spec().clone(), layers).is_err());
    }
}
