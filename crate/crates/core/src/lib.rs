//! Learning from label proportions with LLP-GAN and DLLP, plus an exact
//! tabular oracle for the adversarial game's equilibria.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the element type for the common cases.

pub mod bagset;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod losses;
pub mod netzoo;
pub mod optim;
pub mod oracle;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Discriminator64 = netzoo::Discriminator<f64>;
pub type Discriminator32 = netzoo::Discriminator<f32>;
pub type Generator64 = netzoo::Generator<f64>;
pub type Generator32 = netzoo::Generator<f32>;
pub type LabeledDataset64 = bagset::LabeledDataset<f64>;
pub type LabeledDataset32 = bagset::LabeledDataset<f32>;
pub type TrainState64 = trainer::TrainState<f64>;
pub type TrainState32 = trainer::TrainState<f32>;
pub type ProportionVector64 = bagset::ProportionVector<f64>;

pub use bagset::{partition_into_bags, BagDataset, LabeledDataset, ProportionVector};
pub use harness::{run_experiment, ExperimentConfig, ExperimentReport};
pub use oracle::TabularWorld;
pub use trainer::{train_dllp, train_llp_gan, TrainConfig, TrainState};
