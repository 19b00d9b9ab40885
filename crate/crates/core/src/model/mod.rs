//! Patch regression network: architecture, training and checkpoints.

mod arch;
mod checkpoint;
mod network;
mod tensor;
mod train;

pub use arch::{output_shape, ArchitectureConfig, InputNorm, LayerShape, BLOCK_WIDTHS, FC_WIDTH, OUTPUT_WIDTH};
pub use checkpoint::{sidecar_path, ModelCheckpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use network::Network;
pub use tensor::{Scalar, Tensor};
pub use train::{
    train, train_on, Adam, Convergence, EpochLog, LossKind, OptimizerConfig, OptimizerKind, TrainingConfig,
};

use crate::dataset::{denormalize_labels, Labels};
use crate::error::Result;
use crate::image::Image;
use crate::kernel::BlurParams;

/// Anything that maps same-size patches to normalized `(length, angle)` labels.
/// Implemented by trained checkpoints and by analytic stand-ins in tests.
pub trait Predictor: Sync {
    /// Label normalization range; predictions denormalize against it.
    fn n_max(&self) -> usize;

    /// Smallest patch side accepted by [`Predictor::predict_labels`].
    fn min_patch(&self) -> usize;

    /// One label pair per patch, each component strictly inside (0, 1).
    fn predict_labels(&self, patches: &[Image]) -> Result<Vec<Labels>>;

    /// Short identifier recorded alongside derived artifacts.
    fn id(&self) -> String {
        "predictor".into()
    }

    fn predict_params(&self, patches: &[Image]) -> Result<Vec<BlurParams>> {
        self.predict_labels(patches)?
            .iter()
            .map(|l| denormalize_labels(l, self.n_max()))
            .collect()
    }
}
