//! Minimal CNN substrate with hand-written backward passes.

pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod model;
mod real;
pub mod stem;
mod tensor;

pub use batchnorm::Mode;
pub use init::{kaiming_bound, kaiming_uniform};
pub use loss::{argmax, softmax_cross_entropy};
pub use model::{
    images_to_tensor, sgd_step, ConvBlockSpec, Fault, ForwardPass, Model, ModelConfig, ModelParams, Param,
};
pub use real::Real;
pub use stem::{guided_stem_backward, guided_stem_forward, GuidedStemConfig, StemVariant};
pub use tensor::Tensor;
