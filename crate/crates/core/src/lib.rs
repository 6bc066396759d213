//! Hospital patient-flow simulation for resource-demand forecasting.
//!
//! The crate is organized as a pipeline:
//!
//! - [`scenario`]: state graph, parameter registry, scenario files
//! - [`arrivals`]: daily infection counts (synthetic or ingested)
//! - [`ground_truth`]: windowed incidence and reference demand
//! - [`engine`]: per-patient discrete-event simulation and replication
//! - [`objective`]: weighted RMSE scoring of parameter vectors
//! - [`optimizer`]: Kriging-based sequential optimization within plausible intervals
//! - [`sensitivity`]: stepwise regression, regression tree and contour export

pub mod arrivals;
pub mod engine;
pub mod error;
pub mod ground_truth;
pub mod objective;
pub mod optimizer;
pub mod scenario;
pub mod sensitivity;

pub use error::{Error, Result};
