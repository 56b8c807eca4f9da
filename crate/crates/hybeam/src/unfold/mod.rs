//! Deep-unfolded descent network.
//!
//! Layer `l` performs one alternating sweep in which every update
//! `X <- X - alpha_X o grad_X + O_X` has its own trainable step matrix
//! `alpha_X`, offset `O_X` and kernel width `rho_X`. The last layer's
//! analog precoder update uses the plain descent step. Gradients of the
//! end-to-end loss are computed by a hand-written reverse pass through the
//! gradient maps themselves.

mod io;
mod network;
mod params;
mod train;

pub use crate::chain::StateCotangent;
pub use io::{load_network, save_network, NETWORK_MAGIC, NETWORK_VERSION};
pub use network::{backward, forward, forward_layer, network_loss, normalize_cotangent, NetworkGradient, Op, Tape};
pub use params::{
    formula_param_count, two_step_params, ComplexParam, LayerGrad, LayerParams, NetworkShape, PhaseUpdate, RealParam, UnfoldNetwork,
};
pub use train::{evaluate_network, initial_state, train, TrainConfig, TrainOutcome, TrainTracePoint};
