//! Reachability-based safety toolkit for a vision-guided runway taxiing
//! controller.
//!
//! The toolkit closes the loop around a learned pose estimator: it computes
//! ground-truth backward reachable tubes on a dense grid, trains a neural
//! tube approximation by self-supervision on the reachability equation,
//! mines system-level visual failures from the tubes, calibrates a runtime
//! failure detector with a conformal recall bound, evaluates online
//! fallback mitigations, and retrains the estimator on its own failures.

pub mod config;
pub mod error;
pub mod fallback;
pub mod fd;
pub mod io;
pub mod levelset;
pub mod mining;
pub mod nn;
pub mod nrt;
pub mod pipeline;
pub mod plant;
pub mod report;
pub mod sensor;
pub mod vbc;

pub use config::PipelineConfig;
pub use error::{Error, Result};
