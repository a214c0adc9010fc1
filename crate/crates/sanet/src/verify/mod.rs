//! Independent oracles and checkers: definitional convolution, an FC-LSTM
//! reference, the set-level Jaccard extension, finite-difference gradient
//! checking, and compute-cost accounting.

pub mod conv_oracle;
pub mod fclstm;
pub mod flops;
pub mod gradcheck;
pub mod lovasz_oracle;
pub mod model_cost;
pub mod suite;

pub use conv_oracle::conv_oracle;
pub use fclstm::{fclstm_reference, FcLstmWeights};
pub use flops::{conv_macs, stack_report, ConvSpec, CostReport, LayerCost};
pub use gradcheck::{check_model_params, check_tape_op, finite_diff_check, CheckReport};
pub use lovasz_oracle::lovasz_oracle;
pub use model_cost::flops_count;
pub use suite::{run_gradcheck_suite, suite_passed};
