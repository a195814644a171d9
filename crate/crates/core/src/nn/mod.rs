//! A small transformer encoder in double precision with explicit backward
//! passes, plus the training utilities around it.

pub mod checkpoint;
pub mod config;
pub mod embed;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod params;

pub use config::ModelConfig;
pub use embed::{quantize_bbox, LayoutEmbedding, LayoutIndex, TokenEmbedding};
pub use encoder::{encoder_forward, EncoderInput, TokenEncoder};
pub use gradcheck::{gradcheck, GradCheckReport};
pub use layers::{EncoderStack, Linear, Mode};
pub use loss::{argmax, cross_entropy_loss, LossOutput};
pub use ops::Mat;
pub use optim::{AdamWConfig, OptimState, StepOutcome};
pub use params::{Grads, Init, ParamStore, TensorId};
