//! Dual-encoder multitask sequence labeling for joint NER and POS tagging.
//!
//! Two small transformer encoders read the same word-level tokens; their
//! hidden states are fused (Hadamard product or sum) into one shared
//! representation that feeds a linear classifier per task. The two task
//! cross-entropies are combined as an unweighted sum or an `alpha`/`beta`
//! weighted sum and optimized jointly with AdamW.
//!
//! All numeric code is generic over [`Real`]; the `*64` aliases below are
//! what the CLI and the acceptance suite use.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod fusion;
pub mod gradcheck;
pub mod heads;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod synthetic;
pub mod trainer;

pub use autograd::{Parameter, Tensor, TensorError, IGNORE};
pub use scalar::Real;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Model64 = model::MtlModel<f64>;
pub type Model32 = model::MtlModel<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
