//! Short-term traffic flow forecasting with a spatio-temporal Bayesian
//! network predictor.
//!
//! The pipeline ranks lagged flows from every site in a network by their
//! Pearson correlation with a target site, keeps the top `k` as cause nodes,
//! fits a Gaussian mixture over (causes, effect), and forecasts the effect as
//! the mixture's conditional mean. Random Walk and Markov Chain baselines and
//! an RMSE harness sit alongside it.

pub mod error;
pub mod evalharness;
pub mod linalg;
pub mod mixture;
pub mod panel;
pub mod predictor;
pub mod ranking;

pub use error::{Error, Result};
pub use evalharness::{random_walk_rmse, rmse, run_experiment, EvaluationReport, ExperimentConfig, Method};
pub use mixture::{bic, fit_gmm, log_density, FitConfig, FitReport, GaussianComponent, GmmModel, Standardizer};
pub use panel::{
    generate_synthetic_network, load_panel_csv, split_chronological, FlowPanel, SyntheticNetwork,
    SyntheticSpec,
};
pub use predictor::{
    conditional_mean, forecast_markov_chain, forecast_stbn, random_walk_forecast, train_markov_chain,
    train_stbn, MarkovChainPredictor, SavedPredictor, StbnPredictor,
};
pub use ranking::{
    build_training_rows, pearson, rank_lagged_variables, select_cause_nodes, CauseNodeSet, LagConfig,
    LaggedVariable, RankingEntry,
};
