//! Evaluation: Monte-Carlo and analytical SER, finite-difference checks
//! and the experiment runners.

mod experiment;
mod fd;
mod report;
mod ser;

pub use experiment::{
    gd_ser, initial_network, restrict_users, run_experiment, truncate_users, unfold_states, ChannelSpec, ExperimentOutcome, ExperimentSpec,
    Method, Scenario,
};
pub use fd::{finite_diff_gradient, pack_state, unpack_state};
pub use report::{
    read_results_csv, render_svg, series_by_method, write_results_csv, write_svg_plot, ResultRow, Series, XAxis, RESULT_COLUMNS,
};
pub use ser::{
    analytical_ser, monte_carlo_ser, pooled_monte_carlo_ser, MonteCarloConfig, SelectionBatch, SerEstimate, SerSampling, StreamSer,
};
