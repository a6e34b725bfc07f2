use serde::{Deserialize, Serialize};

use super::assembly::{assemble_with_bank, solve_row_controls, AssemblyConfig, ControlBank};
use super::linear::{solve_linear_inverse, SolveConfig};
use super::trajectory::{build_source_trajectory, TrajectoryConfig};
use crate::error::{Error, Result};
use crate::phase_space::{SpatialField, TraceSeries};
use crate::transport::TransportOperator;
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearConfig {
    pub assembly: AssemblyConfig,
    pub solve: SolveConfig,
    pub trajectory: TrajectoryConfig,
    pub max_iterations: usize,
    /// Stop once `||gamma w - gamma w~|| / ||gamma w||` falls to this level.
    pub tolerance: f64,
    /// Initial step length in `(0, 1]`; halved whenever the misfit grows.
    pub damping: f64,
    /// Rebuild the row controls for every new reference absorption.
    pub refresh_controls: bool,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self {
            assembly: AssemblyConfig::default(),
            solve: SolveConfig::default(),
            trajectory: TrajectoryConfig::default(),
            max_iterations: 8,
            tolerance: 1e-6,
            damping: 1.0,
            refresh_controls: false,
        }
    }
}

impl NonlinearConfig {
    pub fn validate(&self) -> Result<()> {
        self.assembly.validate()?;
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::config("damping", "must lie in (0, 1]"));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::config("tolerance", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearStatus {
    Converged,
    MaxIterations,
    Diverged,
}

/// One evaluation of the reference model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Relative outflow misfit of the reference model at this iterate.
    pub misfit: f64,
    /// Step length that produced this iterate (0 for the starting guess).
    pub damping: f64,
    /// Whether the iterate was kept.
    pub accepted: bool,
    /// Cells where the absorption update was clamped at zero.
    pub clamped: usize,
    pub condition: f64,
    /// `||mu_a - mu~_a||` of the step, in `L^2(Omega)`.
    pub contrast_norm: f64,
    pub regularized: bool,
}

#[derive(Clone, Debug)]
pub struct NonlinearResult<T: Real> {
    pub absorption: SpatialField<T>,
    pub w0: SpatialField<T>,
    pub status: NonlinearStatus,
    /// Accepted updates.
    pub iterations: usize,
    pub misfit: f64,
    pub trace: Vec<IterationRecord>,
}

impl<T: Real> NonlinearResult<T> {
    /// Turns a diverged run into [`Error::Divergence`].
    pub fn into_result(self) -> Result<Self> {
        match self.status {
            NonlinearStatus::Diverged => Err(Error::Divergence { iterations: self.iterations, misfit: self.misfit }),
            _ => Ok(self),
        }
    }
}

/// Recovers `(mu_a, w0)` from one outflow measurement `gamma_+ w`.
///
/// `op` fixes grid, horizon, time step and the known scattering; its absorption is the
/// starting guess `mu~_a`. Each step linearizes about the current reference state
/// `w~`, solves the difference system for `(f, u0)` with `f = mu~_a - mu_a`, and
/// moves `mu~_a <- max(mu~_a - s f, 0)`, `w~0 <- w~0 + s u0`.
pub fn nonlinear_reconstruct<T: Real>(
    measured: &TraceSeries<T>,
    op: &TransportOperator<T>,
    w0_guess: &SpatialField<T>,
    config: &NonlinearConfig,
) -> Result<NonlinearResult<T>> {
    config.validate()?;
    let space = op.space();
    if measured.n_nodes() != op.n_nodes() || measured.n_pairs != space.layout.len() {
        return Err(Error::contract("measurement does not match the operator's time grid or layout"));
    }
    let data_norm = space.norm_series(measured);
    let relative = |m: &TraceSeries<T>| {
        let r = space.norm_series(m);
        if data_norm == T::zero() { r.to_f64_lossy() } else { (r / data_norm).to_f64_lossy() }
    };

    let mut absorption = op.medium().absorption.clone();
    let mut w0 = w0_guess.clone();
    let mut reference = op.clone();
    let mut sigma = build_source_trajectory(&reference, &w0, &config.trajectory)?;
    let mut diff = measured.clone();
    diff.axpy(-T::one(), &sigma.traces);
    let mut misfit = relative(&diff);
    let mut trace = vec![IterationRecord {
        iteration: 0,
        misfit,
        damping: 0.0,
        accepted: true,
        clamped: 0,
        condition: 0.0,
        contrast_norm: 0.0,
        regularized: false,
    }];
    let mut bank: Option<ControlBank<T>> = None;
    let mut accepted = 0;
    while misfit > config.tolerance && accepted < config.max_iterations {
        if bank.is_none() || config.refresh_controls {
            bank = Some(solve_row_controls(&reference, &config.assembly.control)?);
        }
        let mdot = config.assembly.derivative.apply(&diff)?;
        let system = assemble_with_bank(&sigma, &reference, &diff, &mdot, bank.as_ref().expect("bank built"), &config.assembly)?;
        let step = solve_linear_inverse(&system, &config.solve)?;

        let mut s = config.damping;
        let mut rejected = 0;
        loop {
            let mut clamped = 0;
            let mut candidate = absorption.clone();
            for (a, f) in candidate.values.iter_mut().zip(&step.f.values) {
                *a -= T::lit(s) * *f;
                if *a < T::zero() {
                    *a = T::zero();
                    clamped += 1;
                }
            }
            if clamped > 0 {
                log::warn!("absorption update clamped at zero in {clamped} cells");
            }
            let mut w0_next = w0.clone();
            w0_next.axpy(T::lit(s), &step.u0);
            let contrast_norm = space.norm_l2(&(&candidate - &absorption)).to_f64_lossy();
            let next_op = reference.with_medium(reference.medium().with_absorption(candidate.clone())?)?;
            let next_sigma = build_source_trajectory(&next_op, &w0_next, &config.trajectory)?;
            let mut next_diff = measured.clone();
            next_diff.axpy(-T::one(), &next_sigma.traces);
            let next_misfit = relative(&next_diff);
            let improved = next_misfit <= misfit;
            trace.push(IterationRecord {
                iteration: accepted + 1,
                misfit: next_misfit,
                damping: s,
                accepted: improved,
                clamped,
                condition: step.condition,
                contrast_norm,
                regularized: step.regularized,
            });
            if improved {
                absorption = candidate;
                w0 = w0_next;
                reference = next_op;
                sigma = next_sigma;
                diff = next_diff;
                misfit = next_misfit;
                accepted += 1;
                break;
            }
            rejected += 1;
            log::info!("misfit rose to {next_misfit:.3e} at step {s}; halving");
            if rejected >= 2 {
                return Ok(NonlinearResult { absorption, w0, status: NonlinearStatus::Diverged, iterations: accepted, misfit, trace });
            }
            s *= 0.5;
        }
    }
    let status = if misfit <= config.tolerance { NonlinearStatus::Converged } else { NonlinearStatus::MaxIterations };
    Ok(NonlinearResult { absorption, w0, status, iterations: accepted, misfit, trace })
}
