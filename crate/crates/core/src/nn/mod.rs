//! Tensors, reverse-mode differentiation and the convolutional classifier.

pub mod checkpoint;
pub mod functional;
mod kernels;
pub mod model;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadOptions};
pub use functional::{argmax, cross_entropy, one_hot, softmax};
pub use model::{Activation, BlockSpec, ClassifierModel, GradientLayer, ModelGraph, ModelSpec, Parameter, ParameterSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
