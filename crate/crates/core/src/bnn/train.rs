use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{argmax, Network};
use super::spectral::{raw_weight_grad, spectral_normalize, SpectralStep};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{softmax_slice, Layer, Tensor};
use crate::rng;

/// Mini-batch Adam settings. Defaults are Adam's published recommendations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be positive".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if !(self.learning_rate > 0.0) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                problems.push(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            problems.push(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the dropout-active predictions seen during the epoch.
    pub train_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<Vec<Tensor>>,
    v: Vec<Vec<Tensor>>,
    step: i32,
}

impl Adam {
    fn new(net: &Network) -> Self {
        let zeros: Vec<Vec<Tensor>> = net.layers().iter().map(Layer::zero_grads).collect();
        Adam { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn update(&mut self, net: &mut Network, grads: &[Vec<Tensor>], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (li, layer) in net.layers_mut().iter_mut().enumerate() {
            for (pi, param) in layer.params_mut().into_iter().enumerate() {
                let g = grads[li][pi].data();
                let m = self.m[li][pi].data_mut();
                let v = self.v[li][pi].data_mut();
                for (((p, &gi), mi), vi) in param.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                    *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                    *p -= cfg.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + cfg.adam_eps);
                }
            }
        }
    }
}

/// One power-iteration step per weight layer; returns the network to run the
/// forward pass with (normalized weights) and the steps needed for backward.
fn normalized_view(net: &mut Network) -> Result<(Network, Vec<Option<SpectralStep>>)> {
    let mut view = net.clone();
    let mut steps = Vec::with_capacity(net.layers().len());
    for (layer, vlayer) in net.layers_mut().iter_mut().zip(view.layers_mut()) {
        let Some(u) = layer.spectral_u().map(<[f64]>::to_vec) else {
            steps.push(None);
            continue;
        };
        let step = spectral_normalize(layer.params()[0], &u, 1)?;
        layer.set_spectral_u(Some(step.u.clone()))?;
        *vlayer.params_mut()[0] = step.weight.clone();
        steps.push(Some(step));
    }
    Ok((view, steps))
}

/// Replaces each weight with its spectrally normalized value.
fn bake_spectral(net: &mut Network) -> Result<()> {
    for layer in net.layers_mut() {
        if let Some(u) = layer.spectral_u().map(<[f64]>::to_vec) {
            let step = spectral_normalize(layer.params()[0], &u, 1)?;
            *layer.params_mut()[0] = step.weight;
            layer.set_spectral_u(Some(step.u))?;
        }
    }
    Ok(())
}

/// Trains with dropout active, seeded per-epoch shuffling and Adam. With
/// spectral normalization on, every step rescales the weights by their
/// estimated top singular value; the normalized weights are stored in the
/// returned network.
pub fn train(mut net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let classes = net.n_classes();
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    if data.item_shape() != net.spec().input_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "train",
            expected: net.spec().input_shape.clone(),
            found: data.item_shape().to_vec(),
        });
    }

    let spectral = net.layers().iter().any(|l| l.spectral_u().is_some());
    let mut g = rng::seeded(cfg.seed);
    let mut adam = Adam::new(&net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut g);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (view, steps) = if spectral { normalized_view(&mut net)? } else { (net.clone(), Vec::new()) };
            let mut grads: Vec<Vec<Tensor>> = view.layers().iter().map(Layer::zero_grads).collect();
            for &i in batch {
                let trace = view.forward_trace(&data.input(i), &mut g)?;
                let probs = softmax_slice(trace.logits.data(), 1.0);
                let label = data.labels()[i];
                loss_sum -= probs[label].max(1e-12).ln();
                correct += usize::from(argmax(&probs) == label);
                let mut grad = probs;
                grad[label] -= 1.0;
                let mut grad = Tensor::vector(grad);
                for (li, layer) in view.layers().iter().enumerate().rev() {
                    let input_grad = layer.backward_accumulate(&trace.inputs[li], &grad, &mut grads[li])?;
                    grad = match &trace.masks[li] {
                        Some(mask) => {
                            let mut masked = input_grad;
                            masked.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                            masked
                        }
                        None => input_grad,
                    };
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (li, layer_grads) in grads.iter_mut().enumerate() {
                for t in layer_grads.iter_mut() {
                    t.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
                if let Some(Some(step)) = steps.get(li) {
                    layer_grads[0] = raw_weight_grad(step, &layer_grads[0]);
                }
            }
            adam.update(&mut net, &grads, cfg);
        }
        let mean_loss = loss_sum / data.len() as f64;
        if !mean_loss.is_finite() || net.layers().iter().any(|l| l.params().iter().any(|p| !p.is_finite())) {
            return Err(Error::Diverged { epoch, reason: format!("mean loss {mean_loss}") });
        }
        history.push(EpochStats { epoch, mean_loss, train_accuracy: correct as f64 / data.len() as f64 });
    }
    if spectral {
        bake_spectral(&mut net)?;
    }
    Ok(TrainOutcome { network: net, history })
}

/// Fraction of `data` classified correctly by the deterministic pass.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    let mut correct = 0;
    for i in 0..data.len() {
        correct += usize::from(net.predict(&data.input(i))? == data.labels()[i]);
    }
    Ok(correct as f64 / data.len() as f64)
}
