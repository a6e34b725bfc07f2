use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rtinv::Smallness;
use serde::{Deserialize, Serialize};

use crate::acceptance::Outcome;
use crate::error::Result;
use crate::export::write_json_atomic;
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub harness: String,
    pub core: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self { harness: env!("CARGO_PKG_VERSION").to_string(), core: rtinv::VERSION.to_string() }
    }
}

/// Every scalar a run can report; entries that do not apply stay `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Illumination margin `min |P_theta sigma_0|` of the reference state.
    pub delta: Option<f64>,
    pub smallness_true: Option<Smallness>,
    pub smallness_reference: Option<Smallness>,
    pub condition: Option<f64>,
    pub regularized: Option<bool>,
    /// `||M x - b|| / ||b||` of the final linear solve.
    pub system_residual: Option<f64>,
    pub max_row_residual: Option<f64>,
    pub flagged_rows: Option<usize>,
    pub steering_residual: Option<f64>,
    pub control_iterations: Option<usize>,
    pub control_epsilon: Option<f64>,
    /// Realized `||noise|| / ||data||`.
    pub noise_level: Option<f64>,
    /// Relative L2 errors against the known truth.
    pub error_f: Option<f64>,
    pub error_u0: Option<f64>,
    pub error_absorption: Option<f64>,
    pub error_w0: Option<f64>,
    pub misfit: Option<f64>,
    pub iterations: Option<usize>,
    pub status: Option<String>,
    pub stability_spread: Option<f64>,
    pub criteria: Option<Vec<Outcome>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub versions: Versions,
    /// The scenario after overrides, enough to repeat the run.
    pub scenario: Scenario,
    pub threads: usize,
    /// Wall-clock seconds per stage; the only field that differs between identical runs.
    pub timings: BTreeMap<String, f64>,
    pub diagnostics: Diagnostics,
    /// Files written next to the manifest.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, scenario: &Scenario, threads: usize) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            versions: Versions::default(),
            scenario: scenario.clone(),
            threads,
            timings: BTreeMap::new(),
            diagnostics: Diagnostics::default(),
            outputs: Vec::new(),
        }
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let r = f();
        *self.timings.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        r
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json_atomic(&dir.join("manifest.json"), self)
    }
}
