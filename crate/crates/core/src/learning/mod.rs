//! Max-margin structured learning of category models with the balanced
//! error rate as the structured loss.

mod loss;
pub mod qp;
mod train;

pub use crate::mrf::aggregate_features;
pub use loss::{ber_bias, ber_loss, check_truth, loss_augmented_argmax, loss_augmented_argmax_with_context};
pub use qp::{restricted_qp_solve, Constraint, CuttingPlaneState, QpSolution};
pub use train::{training_objective, 
    default_lambda_grid, select_lambda, train, train_category, train_flat, LambdaSelection,
    TraceRow, TrainConfig, TrainMode, Trained, TrainingTrace,
};
