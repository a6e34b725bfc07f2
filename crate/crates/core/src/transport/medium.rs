use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{AngularQuadrature, PhaseSpace, PhaseSpaceField, SpatialField};
use crate::Real;

/// Spatially homogeneous kernel `kappa(theta_k, theta_k')` on the quadrature.
///
/// Stored pre-multiplied by the quadrature weight: `matrix[k][k'] = kappa(k, k') w_k'`,
/// so each row sums to one (conservativity) and
/// `kappa(k, k') = kappa(-k', -k)` (reciprocity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct ScatteringKernel<T: Real> {
    n: usize,
    matrix: Vec<T>,
    isotropic: bool,
}

impl<T: Real> ScatteringKernel<T> {
    /// `kappa = 1 / |S|`.
    pub fn isotropic(quad: &AngularQuadrature<T>) -> Self {
        let n = quad.len();
        let s = quad.measure();
        let mut matrix = Vec::with_capacity(n * n);
        for _ in 0..n {
            for kp in 0..n {
                matrix.push(quad.weights[kp] / s);
            }
        }
        Self { n, matrix, isotropic: true }
    }

    /// Builds a kernel from raw values `raw(k, k')`, then enforces
    /// reciprocity by symmetrization and conservativity by row scaling,
    /// alternating until both hold to rounding.
    pub fn from_raw(quad: &AngularQuadrature<T>, raw: impl Fn(usize, usize) -> T) -> Result<Self> {
        let n = quad.len();
        let mut kappa = vec![T::zero(); n * n];
        for k in 0..n {
            for kp in 0..n {
                let v = raw(k, kp);
                if !(v.is_finite() && v >= T::zero()) {
                    return Err(Error::config("kernel", format!("raw kernel value {v} at ({k},{kp})")));
                }
                kappa[k * n + kp] = v;
            }
        }
        let neg = &quad.antipode;
        let half = T::lit(0.5);
        let tol = T::lit(64.0) * T::eps();
        for _ in 0..200 {
            let mut sym = kappa.clone();
            for k in 0..n {
                for kp in 0..n {
                    sym[k * n + kp] = half * (kappa[k * n + kp] + kappa[neg[kp] * n + neg[k]]);
                }
            }
            kappa = sym;
            let mut worst = T::zero();
            for k in 0..n {
                let row: T = (0..n).map(|kp| kappa[k * n + kp] * quad.weights[kp]).sum();
                if row <= T::zero() {
                    return Err(Error::config("kernel", format!("row {k} of the kernel integrates to zero")));
                }
                worst = worst.max((row - T::one()).abs());
                for kp in 0..n {
                    kappa[k * n + kp] /= row;
                }
            }
            let mut asym = T::zero();
            for k in 0..n {
                for kp in 0..n {
                    asym = asym.max((kappa[k * n + kp] - kappa[neg[kp] * n + neg[k]]).abs());
                }
            }
            if worst <= tol && asym <= tol {
                break;
            }
        }
        let mut matrix = vec![T::zero(); n * n];
        for k in 0..n {
            for kp in 0..n {
                matrix[k * n + kp] = kappa[k * n + kp] * quad.weights[kp];
            }
        }
        let first = matrix[0];
        let isotropic = matrix.iter().all(|v| *v == first);
        Ok(Self { n, matrix, isotropic })
    }

    /// Henyey-Greenstein profile in 2D with asymmetry `g` in (-1, 1), normalized on the quadrature.
    pub fn henyey_greenstein(quad: &AngularQuadrature<T>, g: f64) -> Result<Self> {
        if !(g > -1.0 && g < 1.0) {
            return Err(Error::config("kernel.g", format!("asymmetry must lie in (-1, 1), got {g}")));
        }
        let g = T::lit(g);
        let one = T::one();
        Self::from_raw(quad, |k, kp| {
            let a = quad.directions[k];
            let b = quad.directions[kp];
            let c = a[0] * b[0] + a[1] * b[1];
            (one - g * g) / (T::two_pi() * (one + g * g - T::lit(2.0) * g * c))
        })
    }

    #[inline]
    pub fn n_dirs(&self) -> usize {
        self.n
    }

    /// Kernel value `kappa(k, k')` (weight removed).
    pub fn value(&self, quad: &AngularQuadrature<T>, k: usize, kp: usize) -> T {
        self.matrix[k * self.n + kp] / quad.weights[kp]
    }

    /// Weighted entry `kappa(k, k') w_k'`.
    #[inline]
    pub fn weighted(&self, k: usize, kp: usize) -> T {
        self.matrix[k * self.n + kp]
    }

    pub fn is_isotropic(&self) -> bool {
        self.isotropic
    }

    /// Largest `|sum_k' kappa(k,k') w_k' - 1|`.
    pub fn conservativity_error(&self) -> T {
        (0..self.n)
            .map(|k| {
                let row: T = (0..self.n).map(|kp| self.weighted(k, kp)).sum();
                (row - T::one()).abs()
            })
            .fold(T::zero(), |a, b| a.max(b))
    }

    /// Largest `|kappa(k,k') - kappa(-k',-k)|`.
    pub fn reciprocity_error(&self, quad: &AngularQuadrature<T>) -> T {
        let neg = &quad.antipode;
        let mut worst = T::zero();
        for k in 0..self.n {
            for kp in 0..self.n {
                let d = self.value(quad, k, kp) - self.value(quad, neg[kp], neg[k]);
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    /// `out(i, k) = sum_k' kappa(k,k') w_k' u(i, k')`, or the adjoint
    /// `out(i, k') = sum_k kappa(k,k') w_k u(i, k)` when `adjoint` is set.
    ///
    /// The adjoint is taken with respect to the V0 inner product; with
    /// equal angular weights it is the plain transpose of the weighted matrix.
    pub(crate) fn apply_into(&self, u: &[T], n_cells: usize, adjoint: bool, out: &mut [T]) {
        let n = self.n;
        if self.isotropic {
            // Every output direction sees the same weighted mean.
            let c = self.matrix[0];
            let mean = &mut out[..n_cells];
            mean.iter_mut().for_each(|v| *v = T::zero());
            for k in 0..n {
                for (m, x) in mean.iter_mut().zip(&u[k * n_cells..(k + 1) * n_cells]) {
                    *m += *x;
                }
            }
            mean.iter_mut().for_each(|v| *v *= c);
            for k in 1..n {
                out.copy_within(0..n_cells, k * n_cells);
            }
            return;
        }
        out.iter_mut().for_each(|v| *v = T::zero());
        for k in 0..n {
            let dst = k * n_cells;
            for kp in 0..n {
                let c = if adjoint { self.matrix[kp * n + k] } else { self.matrix[k * n + kp] };
                if c == T::zero() {
                    continue;
                }
                let src = kp * n_cells;
                for i in 0..n_cells {
                    out[dst + i] += c * u[src + i];
                }
            }
        }
    }
}

/// Absorption and scattering fields plus the (homogeneous) scattering kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct OpticalMedium<T: Real> {
    pub absorption: SpatialField<T>,
    pub scattering: SpatialField<T>,
    pub kernel: ScatteringKernel<T>,
    max_absorption: T,
    max_scattering: T,
}

impl<T: Real> OpticalMedium<T> {
    pub fn new(
        absorption: SpatialField<T>,
        scattering: SpatialField<T>,
        kernel: ScatteringKernel<T>,
    ) -> Result<Self> {
        if absorption.len() != scattering.len() {
            return Err(Error::contract("absorption and scattering fields differ in size"));
        }
        if let Some(i) = absorption.values.iter().position(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(Error::config("absorption", format!("must be finite and >= 0 (cell {i})")));
        }
        if let Some(i) = scattering.values.iter().position(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(Error::config("scattering", format!("must be finite and >= 0 (cell {i})")));
        }
        let max_absorption = absorption.values.iter().fold(T::zero(), |m, v| m.max(*v));
        let max_scattering = scattering.values.iter().fold(T::zero(), |m, v| m.max(*v));
        Ok(Self { absorption, scattering, kernel, max_absorption, max_scattering })
    }

    /// Non-absorbing, non-scattering medium.
    pub fn vacuum(space: &PhaseSpace<T>) -> Self {
        let n = space.n_cells();
        Self::new(
            SpatialField::zeros(n),
            SpatialField::zeros(n),
            ScatteringKernel::isotropic(&space.quad),
        )
        .expect("vacuum medium is valid")
    }

    /// Constant coefficients with an isotropic kernel.
    pub fn homogeneous(space: &PhaseSpace<T>, absorption: T, scattering: T) -> Result<Self> {
        let n = space.n_cells();
        Self::new(
            SpatialField::constant(n, absorption),
            SpatialField::constant(n, scattering),
            ScatteringKernel::isotropic(&space.quad),
        )
    }

    /// Same scattering data, different absorption.
    pub fn with_absorption(&self, absorption: SpatialField<T>) -> Result<Self> {
        Self::new(absorption, self.scattering.clone(), self.kernel.clone())
    }

    /// `||mu_a||_inf`.
    pub fn max_absorption(&self) -> T {
        self.max_absorption
    }

    /// `||mu_s||_inf`.
    pub fn max_scattering(&self) -> T {
        self.max_scattering
    }

    pub fn is_scattering(&self) -> bool {
        self.max_scattering > T::zero()
    }
}

/// Applies `K` (or `K*` when `adjoint`) cell by cell.
pub fn apply_scattering<T: Real>(
    space: &PhaseSpace<T>,
    u: &PhaseSpaceField<T>,
    medium: &OpticalMedium<T>,
    adjoint: bool,
) -> PhaseSpaceField<T> {
    assert_eq!(u.len(), space.n_dofs(), "apply_scattering: field size mismatch");
    let mut out = space.zero_field();
    medium.kernel.apply_into(&u.values, space.n_cells(), adjoint, &mut out.values);
    out
}
