use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::medium::OpticalMedium;
use crate::error::{Error, Result};
use crate::phase_space::PhaseSpace;
use crate::Real;

/// Which half of the boundary carries observations. Inflow data are
/// always the homogeneous condition `u = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSide {
    #[default]
    Outflow,
    Inflow,
}

/// Upwind coefficients of one direction.
#[derive(Clone, Copy, Debug)]
pub(crate) struct DirCoeff<T> {
    /// `dt |theta_x| / dx`.
    pub cx: T,
    /// `dt |theta_y| / dy`.
    pub cy: T,
    /// `theta_x > 0`: the upwind neighbour is on the left.
    pub x_pos: bool,
    /// `theta_y > 0`: the upwind neighbour is below.
    pub y_pos: bool,
}

/// Explicit upwind propagator `S = I - dt A_h` on a fixed time grid.
///
/// `t_n = n dt` for `n = 0..=n_steps`, `n_steps dt = tau`.
#[derive(Clone, Debug)]
pub struct TransportOperator<T: Real> {
    space: Arc<PhaseSpace<T>>,
    medium: OpticalMedium<T>,
    dt: T,
    n_steps: usize,
    observed: TraceSide,
    coeffs: Vec<DirCoeff<T>>,
    /// `dt (mu_a + mu_s)` per cell.
    decay: Vec<T>,
    /// `dt mu_s` per cell.
    scatter: Vec<T>,
    trace_dofs: Vec<usize>,
}

impl<T: Real> TransportOperator<T> {
    /// Picks `dt = cfl / (1/dx + 1/dy)`, rounded down so that a whole number of steps reaches `tau`.
    pub fn new(space: Arc<PhaseSpace<T>>, medium: OpticalMedium<T>, tau: T, cfl: T) -> Result<Self> {
        if !(cfl.is_finite() && cfl > T::zero() && cfl <= T::one()) {
            return Err(Error::config("cfl", format!("must lie in (0, 1], got {cfl}")));
        }
        if !(tau.is_finite() && tau > T::zero()) {
            return Err(Error::config("tau", format!("horizon must be positive, got {tau}")));
        }
        let g = &space.grid;
        let dt0 = cfl / (T::one() / g.dx + T::one() / g.dy);
        let steps = (tau / dt0).ceil().to_f64_lossy();
        if !(steps.is_finite() && steps >= 1.0 && steps < 1e9) {
            return Err(Error::config("tau", "step count out of range"));
        }
        Self::with_steps(space, medium, tau, steps as usize)
    }

    /// Uniform grid with exactly `n_steps` steps on `[0, tau]`.
    pub fn with_steps(space: Arc<PhaseSpace<T>>, medium: OpticalMedium<T>, tau: T, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::config("n_steps", "at least one time step is required"));
        }
        if !(tau.is_finite() && tau > T::zero()) {
            return Err(Error::config("tau", format!("horizon must be positive, got {tau}")));
        }
        let dt = tau / T::from_usize_lossy(n_steps);
        Self::build(space, medium, dt, n_steps, TraceSide::Outflow)
    }

    fn build(
        space: Arc<PhaseSpace<T>>,
        medium: OpticalMedium<T>,
        dt: T,
        n_steps: usize,
        observed: TraceSide,
    ) -> Result<Self> {
        if medium.absorption.len() != space.n_cells() {
            return Err(Error::contract("medium does not match the grid"));
        }
        if medium.kernel.n_dirs() != space.n_dirs() {
            return Err(Error::contract("scattering kernel does not match the quadrature"));
        }
        if observed == TraceSide::Inflow {
            return Err(Error::config(
                "observed",
                "inflow values are prescribed (zero); only the outflow side can be observed",
            ));
        }
        let g = &space.grid;
        let cfl = dt * (T::one() / g.dx + T::one() / g.dy);
        if cfl > T::one() + T::lit(8.0) * T::eps() {
            return Err(Error::config("cfl", format!("dt (1/dx + 1/dy) = {cfl} exceeds 1")));
        }
        let mono = dt * (medium.max_absorption() + T::lit(2.0) * medium.max_scattering());
        if mono >= T::one() {
            return Err(Error::config(
                "dt",
                format!("dt (mu_a + 2 mu_s) = {mono} must stay below 1 for a monotone scheme"),
            ));
        }
        let coeffs: Vec<DirCoeff<T>> = space
            .quad
            .directions
            .iter()
            .map(|d| DirCoeff {
                cx: dt * d[0].abs() / g.dx,
                cy: dt * d[1].abs() / g.dy,
                x_pos: d[0] > T::zero(),
                y_pos: d[1] > T::zero(),
            })
            .collect();
        let decay: Vec<T> = medium
            .absorption
            .values
            .iter()
            .zip(&medium.scattering.values)
            .map(|(a, s)| dt * (*a + *s))
            .collect();
        let scatter: Vec<T> = medium.scattering.values.iter().map(|s| dt * *s).collect();
        // Full diagonal of S must stay nonnegative for the maximum principle.
        for (k, c) in coeffs.iter().enumerate() {
            let self_scatter = medium.kernel.weighted(k, k);
            for (i, (d, s)) in decay.iter().zip(&scatter).enumerate() {
                let diag = T::one() - c.cx - c.cy - *d + *s * self_scatter;
                if diag < T::zero() {
                    return Err(Error::config(
                        "dt",
                        format!("negative diagonal {diag} at cell {i}, direction {k}: time step too large"),
                    ));
                }
            }
        }
        let trace_dofs = space.layout.pairs.iter().map(|p| p.dof).collect();
        Ok(Self { space, medium, dt, n_steps, observed, coeffs, decay, scatter, trace_dofs })
    }

    /// Same phase space and time grid with another medium.
    pub fn with_medium(&self, medium: OpticalMedium<T>) -> Result<Self> {
        Self::build(self.space.clone(), medium, self.dt, self.n_steps, self.observed)
    }

    pub fn with_observed(&self, observed: TraceSide) -> Result<Self> {
        Self::build(self.space.clone(), self.medium.clone(), self.dt, self.n_steps, observed)
    }

    #[inline]
    pub fn space(&self) -> &PhaseSpace<T> {
        &self.space
    }

    pub fn space_arc(&self) -> &Arc<PhaseSpace<T>> {
        &self.space
    }

    #[inline]
    pub fn medium(&self) -> &OpticalMedium<T> {
        &self.medium
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.dt
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of time nodes, `n_steps + 1`.
    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn tau(&self) -> T {
        self.dt * T::from_usize_lossy(self.n_steps)
    }

    pub fn observed(&self) -> TraceSide {
        self.observed
    }

    #[inline]
    pub(crate) fn trace_dofs(&self) -> &[usize] {
        &self.trace_dofs
    }

    /// `out = S u` (`transpose = false`) or `out = S^T u`. `scratch` holds `n_dofs` values.
    pub(crate) fn step_into(&self, u: &[T], out: &mut [T], scratch: &mut [T], transpose: bool) {
        let n = self.space.n_cells();
        let nx = self.space.grid.nx;
        let scattering = self.medium.is_scattering();
        if scattering {
            self.medium.kernel.apply_into(u, n, transpose, scratch);
        }
        for (k, c) in self.coeffs.iter().enumerate() {
            let range = k * n..(k + 1) * n;
            let uk = &u[range.clone()];
            let ok = &mut out[range.clone()];
            advect(nx, c, &self.decay, uk, ok, transpose);
            if scattering {
                for ((o, s), m) in ok.iter_mut().zip(&scratch[range.clone()]).zip(&self.scatter) {
                    *o += *m * *s;
                }
            }
        }
    }
}

/// One direction of the upwind update without scattering gain.
///
/// Forward reads the upwind neighbour; the transpose scatters to the downwind one.
#[inline]
fn advect<T: Real>(nx: usize, c: &DirCoeff<T>, decay: &[T], u: &[T], out: &mut [T], transpose: bool) {
    let n = u.len();
    let c0 = T::one() - c.cx - c.cy;
    for ((o, x), d) in out.iter_mut().zip(u).zip(decay) {
        *o = (c0 - *d) * *x;
    }
    let cx = c.cx;
    let from_left = c.x_pos != transpose;
    for r in (0..n).step_by(nx) {
        let o = &mut out[r..r + nx];
        let x = &u[r..r + nx];
        if from_left {
            for ix in 1..nx {
                o[ix] += cx * x[ix - 1];
            }
        } else {
            for ix in 0..nx - 1 {
                o[ix] += cx * x[ix + 1];
            }
        }
    }
    let cy = c.cy;
    if c.y_pos != transpose {
        let (lo, hi) = (&u[..n - nx], &mut out[nx..]);
        for (o, x) in hi.iter_mut().zip(lo) {
            *o += cy * *x;
        }
    } else {
        let (hi, lo) = (&u[nx..], &mut out[..n - nx]);
        for (o, x) in lo.iter_mut().zip(hi) {
            *o += cy * *x;
        }
    }
}
