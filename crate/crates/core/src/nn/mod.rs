//! Tensors, layers with hand-written backward passes, and the sequence CNN.

pub mod layers;
pub mod loss;
pub mod model;
pub mod real;
pub mod tensor;
pub mod train;

pub use loss::{weighted_bce, weighted_bce_logit_grad, weighted_bce_loss, PROB_EPS};
pub use model::{build_amr_cnn, Architecture, BlockSpec, CnnModel, AMR_BLOCKS};
pub use real::Real;
pub use tensor::{Parameter, Tensor};
pub use train::{evaluate_loss, train, train_step, Adam, TrainConfig, TrainHistory};
