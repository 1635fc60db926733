//! Discriminator and generator architectures and the layer engine behind them.

mod conv;
pub mod layers;
pub mod network;
pub mod softmax;
pub mod spec;

pub use layers::{Activation, Mode, Param};
pub use network::{
    build_discriminator, build_generator, discriminator_forward, feature_mean, Discriminator, DiscriminatorBatch, DiscriminatorOutput,
    Generator, Network, NetworkState, NoiseBatch,
};
pub use softmax::{overparam_softmax, softmax};
pub use spec::{ArchitectureSpec, LayerSpec};
