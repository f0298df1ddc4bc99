//! Learned deviation prediction: voxelized deviation maps, a 3D
//! convolutional autoencoder for shape embeddings, gradient-boosted trees
//! on composite feature vectors, and the cross-validated hybrid ensemble.

pub mod encoder;
pub mod gbt;
pub mod hybrid;
pub mod linear;
pub mod metrics;
pub mod voxel;

pub use encoder::{train_encoder, Autoencoder, EncoderConfig, TrainReport};
pub use gbt::{train_gbt, GbtConfig, GbtModel};
pub use hybrid::{cross_validate, search_hyperparameters, CvReport, HybridModel, ModelInput};
pub use linear::{LinearModel, MeanModel};
pub use metrics::{compute_metrics, MetricsBundle};
pub use voxel::{VoxelGrid, VoxelParams};
