//! Data I/O, initialization, training, evaluation and model files.

pub mod check_grad;
pub mod data;
pub mod eval;
pub mod init;
pub mod model;
pub mod train;

pub use check_grad::{check_grad, GradCheckConfig, GradCheckReport};
pub use data::{load_dataset, DataFormat, Dataset};
pub use eval::{embed, evaluate_1nn, export_features};
pub use init::{init_dictionary, init_projection};
pub use model::Model;
pub use train::{train, TrainConfig, TrainMode, TrainOutcome};
