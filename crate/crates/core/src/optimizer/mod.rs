//! Regularized least-squares objective, initialization, Adam, and the
//! finite-difference gradient check.

mod adam;
mod gradcheck;
mod init;
mod loss;

pub use adam::{AdamState, TrainingConfig};
pub use gradcheck::{
    check_gradients, gradient_check, relative_error, GradCheckOptions, GradCheckProblem, GradCheckReport, GroupCheck,
};
pub use init::{he_std, init_bias_zero, init_conv_he, init_kernel_he, init_lstm_gaussian, init_params, LSTM_INIT_STD};
pub use loss::{add_weight_decay, loss, regularization, LossValue};
