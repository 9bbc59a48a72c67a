//! FFT-block encoder with dual-level MLM heads.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod mlm;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, Preset};
pub use encoder::{encoder_forward, forward_with_cache, DropoutRng, ForwardCache, ModelInput};
pub use mlm::{backward, cross_entropy, evaluate_example, mlm_heads, MlmOutput};
pub use params::{EncoderParams, LayerParams};
