//! Dense network core: layer stacks that can be run over arbitrary
//! sub-ranges, softmax cross-entropy, and plain SGD.

pub mod checkpoint;
pub mod layer;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use layer::{Dense, DenseGrad, Layer, LayerStack, StackGrads, Tape};
pub use loss::{loss_and_grad, softmax};
pub use optim::{sgd_step, OptimizerConfig};
pub use tensor::Tensor2D;
