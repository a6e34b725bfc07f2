use serde::{Deserialize, Serialize};

use super::assembly::{assemble_with_bank, solve_row_controls};
use super::linear::solve_linear_inverse;
use super::nonlinear::NonlinearConfig;
use super::trajectory::build_source_trajectory;
use crate::error::{Error, Result};
use crate::phase_space::SpatialField;
use crate::transport::{observe, TransportOperator};
use crate::Real;

/// Which unknown the ladder perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Absorption,
    InitialState,
}

/// One rung: `ratio = size / measurement_difference` estimates the stability constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub amplitude: f64,
    /// `L^2(Omega)` norm of the perturbation.
    pub size: f64,
    /// `H^1(0, tau; T_+)` norm of the change in outflow data.
    pub measurement_difference: f64,
    /// Relative error of the one-step linear reconstruction of the perturbation.
    pub reconstruction_error: Option<f64>,
    pub ratio: Option<f64>,
    /// Zero rungs carry no information and are skipped.
    pub skipped: bool,
}

/// `max ratio / min ratio` over the informative rungs (1 when fewer than two).
pub fn ratio_spread(rows: &[StabilityRow]) -> f64 {
    let r: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    if r.len() < 2 {
        return 1.0;
    }
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// Perturbs the baseline `(op's mu_a, w0)` along `direction` by each amplitude in
/// `ladder`, measuring data change and the linear reconstruction of the change.
pub fn stability_probe<T: Real>(
    op: &TransportOperator<T>,
    w0: &SpatialField<T>,
    direction: &SpatialField<T>,
    kind: Perturbation,
    ladder: &[f64],
    config: &NonlinearConfig,
) -> Result<Vec<StabilityRow>> {
    config.validate()?;
    let space = op.space();
    if direction.len() != space.n_cells() || w0.len() != space.n_cells() {
        return Err(Error::contract("perturbation direction does not match the grid"));
    }
    let derivative = config.assembly.derivative;
    let sigma = build_source_trajectory(op, w0, &config.trajectory)?;
    let base = &sigma.traces;
    let h1 = |m: &crate::phase_space::TraceSeries<T>| -> Result<f64> {
        let d = derivative.apply(m)?;
        let a = space.norm_series(m);
        let b = space.norm_series(&d);
        Ok((a * a + b * b).sqrt().to_f64_lossy())
    };
    let mut bank = None;
    let mut rows = Vec::with_capacity(ladder.len());
    for &amp in ladder {
        let delta = direction.scaled(T::lit(amp));
        let size = space.norm_l2(&delta).to_f64_lossy();
        if size == 0.0 {
            rows.push(StabilityRow { amplitude: amp, size, measurement_difference: 0.0, reconstruction_error: None, ratio: None, skipped: true });
            continue;
        }
        let (perturbed, f_true, u_true) = match kind {
            Perturbation::Absorption => {
                let mut mu = op.medium().absorption.clone();
                mu.axpy(T::one(), &delta);
                if mu.values.iter().any(|v| *v < T::zero()) {
                    return Err(Error::config("ladder", format!("amplitude {amp} makes the absorption negative")));
                }
                let p = op.with_medium(op.medium().with_absorption(mu)?)?;
                (observe(&space.lift_isotropic(w0), &p)?, delta.scaled(-T::one()), space.zero_spatial())
            }
            Perturbation::InitialState => {
                let mut w = w0.clone();
                w.axpy(T::one(), &delta);
                (observe(&space.lift_isotropic(&w), op)?, space.zero_spatial(), delta.clone())
            }
        };
        let mut diff = perturbed;
        diff.axpy(-T::one(), base);
        let measurement_difference = h1(&diff)?;
        if bank.is_none() {
            bank = Some(solve_row_controls(op, &config.assembly.control)?);
        }
        let mdot = derivative.apply(&diff)?;
        let system = assemble_with_bank(&sigma, op, &diff, &mdot, bank.as_ref().expect("bank built"), &config.assembly)?;
        let rec = solve_linear_inverse(&system, &config.solve)?;
        let err = (space.norm_l2(&(&rec.f - &f_true)).powi(2) + space.norm_l2(&(&rec.u0 - &u_true)).powi(2)).sqrt();
        let ratio = (measurement_difference > 0.0).then(|| size / measurement_difference);
        rows.push(StabilityRow {
            amplitude: amp,
            size,
            measurement_difference,
            reconstruction_error: Some(err.to_f64_lossy() / size),
            ratio,
            skipped: false,
        });
    }
    Ok(rows)
}
