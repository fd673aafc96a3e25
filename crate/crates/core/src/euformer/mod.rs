//! Channel-attention U-shaped generator, PatchGAN discriminator, losses and
//! the adversarial trainer.

pub mod blocks;
pub mod checkpoint;
pub mod discriminator;
pub mod flops;
pub mod generator;
pub mod loss;
pub mod params;
pub mod train;

pub use blocks::{AttentionTrace, ChannelNorm, Cmha, Conv, Downsample, Etb, Leff, Projection, Upsample, LEFF_EXPANSION};
pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use flops::{flops_attention, AttentionMode};
pub use generator::{EUFormerConfig, Generator};
pub use loss::{
    generator_loss_value, loss_discriminator, loss_generator, loss_mse, loss_total, mse_value, total_loss_value,
    DEFAULT_LOSS_WEIGHT_G,
};
pub use params::{Bound, Init, Initializer, Loader, ParamId, ParamSet, ParamSource};
pub use train::{train, Adam, LossRecord, TrainConfig, TrainOutcome, TrainingPair};
