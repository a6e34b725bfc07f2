use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::assembly::FredholmSystem;
use crate::error::{Error, Result};
use crate::phase_space::SpatialField;
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Condition number above which the direct solve is not trusted.
    pub max_condition: f64,
    /// Tikhonov weight relative to `||M||_2^2` for the fallback; zero disables it.
    pub tikhonov_rel: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { max_condition: 1e6, tikhonov_rel: 1e-8 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct ReconstructionResult<T: Real> {
    pub f: SpatialField<T>,
    pub u0: SpatialField<T>,
    /// `||M x - b|| / ||b||`.
    pub residual: f64,
    pub condition: f64,
    /// Whether the Tikhonov fallback produced the answer.
    pub regularized: bool,
}

/// Solves the assembled system by LU, falling back to Tikhonov normal equations
/// when the system is too ill-conditioned.
pub fn solve_linear_inverse<T: Real>(system: &FredholmSystem<T>, config: &SolveConfig) -> Result<ReconstructionResult<T>> {
    let n = system.n;
    let m = &system.matrix;
    let b = &system.rhs;
    let well_posed = system.condition.is_finite() && system.condition <= config.max_condition;
    let (x, regularized) = if well_posed {
        match m.clone().lu().solve(b) {
            Some(x) => (x, false),
            None => return Err(Error::Solvability { condition: system.condition }),
        }
    } else if config.tikhonov_rel > 0.0 {
        log::warn!("condition {:.3e} exceeds {:.3e}; using Tikhonov fallback", system.condition, config.max_condition);
        (tikhonov(m, b, config.tikhonov_rel)?, true)
    } else {
        return Err(Error::Solvability { condition: system.condition });
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solvability { condition: system.condition });
    }
    let bn = b.norm();
    let rn = (m * &x - b).norm();
    let residual = if bn == T::zero() { rn.to_f64_lossy() } else { (rn / bn).to_f64_lossy() };
    Ok(ReconstructionResult {
        f: SpatialField { values: x.rows(0, n).iter().copied().collect() },
        u0: SpatialField { values: x.rows(n, n).iter().copied().collect() },
        residual,
        condition: system.condition,
        regularized,
    })
}

fn tikhonov<T: Real>(m: &DMatrix<T>, b: &DVector<T>, rel: f64) -> Result<DVector<T>> {
    let mt = m.transpose();
    let mut normal = &mt * m;
    let scale = normal.diagonal().iter().fold(T::zero(), |a, v| a.max(*v));
    let alpha = T::lit(rel) * scale;
    for i in 0..normal.nrows() {
        normal[(i, i)] += alpha;
    }
    let rhs = mt * b;
    normal
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::Solvability { condition: f64::INFINITY })
}
