pub mod autodiff;
pub mod config;
pub mod dair;
pub mod env;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rollout;
pub mod sac;
pub mod train;
pub mod trajectory;

pub use error::{DairError, Result};
