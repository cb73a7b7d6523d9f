//! Continuous optimization: L1 logistic paths, penalized joint `(beta, sigma)`
//! fits, ridge pilots and (constrained) logistic maximum likelihood.

mod cd;
pub mod joint;
pub mod lasso;
pub mod loss;
pub mod mle;

pub use joint::{
    adaptive_joint_path, fit_adaptive_joint, fit_penalized_joint, fit_ridge_joint, fit_ridge_joint_with,
    joint_loss_sum, penalty_factors, JointFit, JointPath, PenaltyWeights, RidgeOptions,
};
pub use lasso::{lasso_kkt_violation, lasso_path_xy, logistic_lasso_path, support_at_cardinality, LassoOptions, LassoPath};
pub use mle::{log_likelihood, mle_logistic, mle_logistic_constrained, MleFit};
