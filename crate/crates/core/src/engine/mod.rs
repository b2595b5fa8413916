//! Dense feed-forward networks with exact backpropagation, SGD-momentum and
//! Adam, learning-rate schedules and parameter interpolation.

pub mod arch;
pub mod net;
pub mod optim;
pub mod params;
pub mod schedule;

pub use arch::{init_params, Architecture};
pub use net::{argmax, backward, error_rate, example_losses, forward_loss, predictions, Examples, Workspace};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};
pub use params::{interpolate_params, ParamEntry, ParamSet, Tensor};
pub use schedule::{Milestone, Schedule};

use crate::data::{Dataset, Split};
use crate::error::Result;

/// Error rate of `params` on one split of `dataset`. No augmentation.
pub fn evaluate_error(params: &ParamSet, dataset: &Dataset, split: Split) -> Result<f64> {
    error_rate(params, dataset.split(split))
}
