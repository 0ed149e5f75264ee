//! Loss, initialisation, the Adam optimiser, the epoch loop and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod trainer;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, GradEntry};
pub use init::{glorot_normal, glorot_std};
pub use loss::{categorical_cross_entropy, l2_penalty, softmax_cross_entropy_grad, L2Convention, PROB_FLOOR};
pub use trainer::{
    evaluate, train_run, train_run_with, LogLevel, MetricRow, ParamStats, RunRecord, TrainConfig,
};
