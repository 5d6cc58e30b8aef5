use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Labeled inputs stored as one flat row-major buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    item_shape: Vec<usize>,
    inputs: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, item_shape: Vec<usize>, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let item: usize = item_shape.iter().product();
        if item_shape.is_empty() || item == 0 {
            return Err(Error::invalid(format!("dataset item shape {item_shape:?} is empty")));
        }
        if inputs.len() != item * labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                expected: vec![labels.len(), item],
                found: vec![inputs.len()],
            });
        }
        Ok(Dataset { name: name.into(), item_shape, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn item_shape(&self) -> &[usize] {
        &self.item_shape
    }

    pub fn item_len(&self) -> usize {
        self.item_shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn raw(&self, i: usize) -> &[f64] {
        let d = self.item_len();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn input(&self, i: usize) -> Tensor {
        Tensor::new(self.item_shape.clone(), self.raw(i).to_vec()).expect("dataset item shape is validated")
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.item_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.raw(i));
            labels.push(self.labels[i]);
        }
        Dataset { name: name.into(), item_shape: self.item_shape.clone(), inputs, labels }
    }

    pub fn mean_input(&self) -> Vec<f64> {
        let d = self.item_len();
        let mut mean = vec![0.0; d];
        for i in 0..self.len() {
            for (m, v) in mean.iter_mut().zip(self.raw(i)) {
                *m += v;
            }
        }
        let n = self.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}
