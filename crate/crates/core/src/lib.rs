//! Streaming identification and forecasting for time series with exogenous
//! inputs, modelled as a mixture of linear time-delay systems.
//!
//! The pipeline per window of data:
//!
//! 1. [`moments`] folds grouped output–input moments into a fixed-size
//!    order-3 tensor;
//! 2. when the active model stops fitting, [`cpd`] decomposes the tensor,
//!    [`realization`] turns each component into a Markov sequence and a
//!    delay-free state-space model;
//! 3. [`filtering`] picks the best model for the window and forecasts.
//!
//! [`engine`] ties the steps together, [`datagen`] produces synthetic
//! regime-switching streams and brute-force oracles.

pub mod cli;
pub mod cpd;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod filtering;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod moments;
pub mod realization;
pub mod syslin;
pub mod tensor;

pub use cpd::{align_components, cp_als, reconstruct, AlsInit, AlsOptions, AlsOutcome, CpFactors};
pub use engine::{run_stream, EngineConfig, EngineState, RegimeDatabase, StreamOutcome, UpdateReport};
pub use error::{Error, Result};
pub use filtering::{forecast, kalman_forward, rts_smoother, select_regime, window_error, NoiseSpec};
pub use moments::{MomentConfig, SystemTensor};
pub use realization::{factor_to_markov, ho_kalman, realize_all, RealizationOptions, StateDim};
pub use syslin::{
    detect_delay, embed_delay, markov_parameters_delayed, markov_parameters_free, simulate_delay_free,
    simulate_delayed, spectral_norm_profile, DelayFreeModel, MarkovSequence, TimeDelaySystem, Trajectory,
};
pub use tensor::Tensor3;
