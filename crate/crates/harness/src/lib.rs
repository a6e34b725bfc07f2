//! Scenario-driven front end for `rtinv`: JSON scenarios, synthetic data,
//! noise, CSV/JSON outputs and the acceptance battery behind `rtinv validate`.

pub mod acceptance;
pub mod commands;
pub mod error;
pub mod export;
pub mod manifest;
pub mod noise;
pub mod scenario;

pub use commands::{execute, Command, RunOptions};
pub use error::{HarnessError, Result};
pub use manifest::{Diagnostics, RunManifest};
pub use noise::{inject_noise, smooth_in_time};
pub use scenario::{Overrides, Profile, ProfileRef, Scenario};
