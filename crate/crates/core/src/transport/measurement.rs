use serde::{Deserialize, Serialize};

use super::operator::TransportOperator;
use super::solve::{forward_solve_streaming, Forcing};
use crate::error::{Error, Result};
use crate::phase_space::{SpatialField, TraceSeries};
use crate::reconstruction::{Modulated, SourceTrajectory};
use crate::Real;

/// Finite-difference rule for `m'` on the time nodes.
///
/// Both rules are written as `m'_n = sum_j R[n][j] d_j` over the forward
/// differences `d_j = (m_{j+1} - m_j) / dt`, which is what the assembly transposes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDerivative {
    /// Centred in the interior, second-order one-sided at both ends.
    #[default]
    Centered,
    /// Forward difference, last node repeats the final difference.
    Forward,
}

impl TimeDerivative {
    /// Sparse rows of `R` for `n_nodes` nodes (`n_nodes - 1` differences).
    pub fn stencil(self, n_nodes: usize) -> Result<Vec<Vec<(usize, f64)>>> {
        let min = match self {
            TimeDerivative::Centered => 3,
            TimeDerivative::Forward => 2,
        };
        if n_nodes < min {
            return Err(Error::contract(format!("{self:?} differences need at least {min} time nodes")));
        }
        let last = n_nodes - 1;
        Ok((0..n_nodes)
            .map(|n| match self {
                TimeDerivative::Centered if n == 0 => vec![(0, 1.5), (1, -0.5)],
                TimeDerivative::Centered if n == last => vec![(last - 1, 1.5), (last - 2, -0.5)],
                TimeDerivative::Centered => vec![(n - 1, 0.5), (n, 0.5)],
                TimeDerivative::Forward => vec![(n.min(last - 1), 1.0)],
            })
            .collect())
    }

    pub fn apply<T: Real>(self, m: &TraceSeries<T>) -> Result<TraceSeries<T>> {
        let rows = self.stencil(m.n_nodes())?;
        let mut out = TraceSeries::zeros(m.n_nodes(), m.n_pairs, m.dt);
        let inv_dt = T::one() / m.dt;
        for (n, row) in rows.iter().enumerate() {
            for &(j, c) in row {
                let c = T::lit(c) * inv_dt;
                let (a, b) = (j * m.n_pairs, (j + 1) * m.n_pairs);
                for p in 0..m.n_pairs {
                    let d = m.values[b + p] - m.values[a + p];
                    out.values[n * m.n_pairs + p] += c * d;
                }
            }
        }
        Ok(out)
    }

    /// `c~_j = sum_n R[n][j] c_n`, the transpose of the stencil applied to node weights.
    #[cfg(test)]
    pub(crate) fn transpose_weights<T: Real>(self, weights: &[T]) -> Result<Vec<T>> {
        let rows = self.stencil(weights.len())?;
        let mut out = vec![T::zero(); weights.len() - 1];
        for (n, row) in rows.iter().enumerate() {
            for &(j, c) in row {
                out[j] += T::lit(c) * weights[n];
            }
        }
        Ok(out)
    }
}

/// Synthetic data `(m, m')` for the source `q = sigma lift(f)` and initial state `lift(u0)`.
pub fn measurement_pipeline<T: Real>(
    f: &SpatialField<T>,
    u0: &SpatialField<T>,
    sigma: &SourceTrajectory<T>,
    op: &TransportOperator<T>,
    derivative: TimeDerivative,
) -> Result<(TraceSeries<T>, TraceSeries<T>)> {
    let space = op.space();
    if f.len() != space.n_cells() || u0.len() != space.n_cells() {
        return Err(Error::contract("f and u0 must be cell fields of the operator's grid"));
    }
    if sigma.n_nodes() != op.n_nodes() {
        return Err(Error::contract("source trajectory is on a different time grid"));
    }
    let forcing = Modulated { sigma, f };
    let (_, m) = forward_solve_streaming(op, &space.lift_isotropic(u0), Some(&forcing as &dyn Forcing<T>), |_, _| {})?;
    let mdot = derivative.apply(&m)?;
    Ok((m, mdot))
}
