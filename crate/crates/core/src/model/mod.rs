//! Sparse-to-dense generator, multi-scale discriminator, losses and training.

pub mod dense;
pub mod discriminator;
pub mod generator;
pub mod loss;
pub mod params;
pub mod sparse;
pub mod train;
pub mod volume;

pub use dense::{avg_pool2, avg_pool2_backward, Conv3d, TransposedConv};
pub use sparse::{Rulebook, SparseConv, SparseFeatures, SparseKind};
pub use volume::{leaky_relu, sigmoid, softplus, Volume};
pub use generator::{model_input, DecoderTrace, EncoderTrace, Generator, GeneratorConfig, INPUT_CHANNELS};
pub use params::{ParamView, Parameters};
pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorTrace, ScaleOutput};
pub use loss::{
    discriminator_term, generator_term, loss_cgan, loss_l1, loss_perceptual, loss_total, CganTerms, GanMode, LossParts, LossWeights,
};
pub use train::{discriminator_objective, generator_objective, Adam, LossReport, TrainConfig, Trainer, TrainingPair};
