//! Data-mixture theory: expected input Hessians per dataset, the mixture loss
//! curve `C(q) = Tr(S* (sum_k q_k S_k)^-1)`, its simultaneously-diagonalized
//! rational form `sum_i 1 / (sum_k lambda_ik q_k)`, and the log-linear
//! scaling fit of the extra loss against sample count.

mod hessian;
mod mixture;
mod scaling;

pub use hessian::{
    decode_hessian, encode_hessian, expected_hessian, expected_input_hessian, load_hessian, save_hessian,
    HessianEstimate, InputGradient, NetworkLoss,
};
pub(crate) use mixture::argmin_with_ties;
pub use mixture::{
    absolute_curvature, c_of_q_auto, c_of_q_direct, c_of_q_rational, default_ridge, diagonalize_pair, is_u_shaped,
    lambda_matrix, simplex_grid, sweep_grid, sweep_q, Diagonalization, LambdaMatrix, MixtureCurve,
};
pub use scaling::{extra_loss_empirical, fit_scaling_law, ScalingFit};
