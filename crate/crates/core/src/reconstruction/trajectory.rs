use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{PhaseSpaceField, SpatialField, TraceSeries};
use crate::transport::{forward_solve_streaming, Forcing, TransportOperator};
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    /// Keep every `stride`-th state (plus the last); others are interpolated linearly.
    pub stride: usize,
    /// Illumination floor relative to `max |P_theta sigma_0|`.
    pub delta_min_rel: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { stride: 1, delta_min_rel: 1e-3 }
    }
}

/// Reference radiance `sigma(t_n)` driving the difference problem.
#[derive(Clone, Debug)]
pub struct SourceTrajectory<T: Real> {
    dt: T,
    n_nodes: usize,
    stride: usize,
    stored: Vec<PhaseSpaceField<T>>,
    /// Outflow traces of the reference solution.
    pub traces: TraceSeries<T>,
    /// `P_theta sigma(0)`.
    pub initial_average: SpatialField<T>,
    /// `min_x |P_theta sigma(0)|`.
    pub delta: T,
    /// Cell attaining `delta`.
    pub worst_cell: usize,
}

impl<T: Real> SourceTrajectory<T> {
    /// Wraps an explicit series of states (stride 1).
    pub fn from_states(states: Vec<PhaseSpaceField<T>>, traces: TraceSeries<T>, average: impl Fn(&PhaseSpaceField<T>) -> SpatialField<T>) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::contract("a trajectory needs at least two time nodes"));
        }
        let initial_average = average(&states[0]);
        let (worst_cell, delta) = min_abs(&initial_average);
        Ok(Self {
            dt: traces.dt,
            n_nodes: states.len(),
            stride: 1,
            stored: states,
            traces,
            initial_average,
            delta,
            worst_cell,
        })
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// `sigma(t_n)`, interpolated between stored nodes when subsampled.
    pub fn state(&self, n: usize) -> Cow<'_, [T]> {
        assert!(n < self.n_nodes, "state index {n} out of range");
        let last = self.n_nodes - 1;
        if self.stride == 1 {
            return Cow::Borrowed(&self.stored[n].values);
        }
        let slot = n / self.stride;
        let a = slot * self.stride;
        if n == a {
            return Cow::Borrowed(&self.stored[slot].values);
        }
        if n == last {
            return Cow::Borrowed(&self.stored[self.stored.len() - 1].values);
        }
        let b = (a + self.stride).min(last);
        let s = T::from_usize_lossy(n - a) / T::from_usize_lossy(b - a);
        let (u, v) = (&self.stored[slot].values, &self.stored[slot + 1].values);
        Cow::Owned(u.iter().zip(v).map(|(x, y)| *x + s * (*y - *x)).collect())
    }

    pub fn sigma0(&self) -> &PhaseSpaceField<T> {
        &self.stored[0]
    }

    /// Centred `sigma'(t_n)`, second-order one-sided at the ends.
    pub fn derivative(&self, n: usize) -> PhaseSpaceField<T> {
        let last = self.n_nodes - 1;
        let h = T::one() / (T::lit(2.0) * self.dt);
        let combo: Vec<(usize, T)> = if self.n_nodes == 2 {
            vec![(1, T::lit(2.0)), (0, -T::lit(2.0))]
        } else if n == 0 {
            vec![(0, -T::lit(3.0)), (1, T::lit(4.0)), (2, -T::one())]
        } else if n == last {
            vec![(last, T::lit(3.0)), (last - 1, -T::lit(4.0)), (last - 2, T::one())]
        } else {
            vec![(n + 1, T::one()), (n - 1, -T::one())]
        };
        let mut out = PhaseSpaceField::zeros(self.stored[0].len());
        for (j, c) in combo {
            let s = self.state(j);
            for (o, v) in out.values.iter_mut().zip(s.iter()) {
                *o += c * h * *v;
            }
        }
        out
    }
}

fn min_abs<T: Real>(g: &SpatialField<T>) -> (usize, T) {
    g.values
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.abs()))
        .fold((0, T::max_value().expect("bounded scalar")), |a, b| if b.1 < a.1 { b } else { a })
}

/// Simulates the reference state from `lift(w0)` without sources and checks illumination.
pub fn build_source_trajectory<T: Real>(
    op: &TransportOperator<T>,
    w0: &SpatialField<T>,
    config: &TrajectoryConfig,
) -> Result<SourceTrajectory<T>> {
    let space = op.space();
    if w0.len() != space.n_cells() {
        return Err(Error::contract("initial reference state does not match the grid"));
    }
    if config.stride == 0 {
        return Err(Error::config("stride", "must be at least 1"));
    }
    if !(config.delta_min_rel >= 0.0 && config.delta_min_rel < 1.0) {
        return Err(Error::config("delta_min_rel", "must lie in [0, 1)"));
    }
    let last = op.n_steps();
    let stride = config.stride;
    let mut stored = Vec::with_capacity(last / stride + 2);
    let (_, traces) = forward_solve_streaming(op, &space.lift_isotropic(w0), None, |n, u| {
        if n % stride == 0 || n == last {
            stored.push(PhaseSpaceField { values: u.to_vec() });
        }
    })?;
    let initial_average = space.angular_average(&stored[0]);
    let (worst_cell, delta) = min_abs(&initial_average);
    let peak = initial_average.values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let minimum = T::lit(config.delta_min_rel) * peak;
    if delta <= T::zero() || delta < minimum {
        return Err(Error::Illumination {
            delta: delta.to_f64_lossy(),
            minimum: minimum.to_f64_lossy(),
            cell: worst_cell,
        });
    }
    Ok(SourceTrajectory {
        dt: op.dt(),
        n_nodes: op.n_nodes(),
        stride,
        stored,
        traces,
        initial_average,
        delta,
        worst_cell,
    })
}

/// `q(t_n) = sigma(t_n) lift(f)`.
pub struct Modulated<'a, T: Real> {
    pub sigma: &'a SourceTrajectory<T>,
    pub f: &'a SpatialField<T>,
}

impl<T: Real> Forcing<T> for Modulated<'_, T> {
    fn add_scaled(&self, n: usize, scale: T, out: &mut [T]) {
        let f = &self.f.values;
        let nc = f.len();
        let s = self.sigma.state(n);
        for (chunk, sk) in out.chunks_mut(nc).zip(s.chunks(nc)) {
            for ((o, sv), fv) in chunk.iter_mut().zip(sk).zip(f) {
                *o += scale * *sv * *fv;
            }
        }
    }
}
