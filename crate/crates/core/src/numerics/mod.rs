//! Dense tensors, the layer kinds the models need, and gradient verification.

mod gradcheck;
mod layer;
mod softmax;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheck};
pub use layer::{Conv2d, GradBundle, Layer, Linear};
pub use softmax::{cross_entropy_loss, softmax};
pub use tensor::Tensor;

pub(crate) use layer::dot;
pub(crate) use softmax::softmax_slice;
