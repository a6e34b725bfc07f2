use crate::phase_space::{PhaseSpace, PhaseSpaceField};
use crate::Real;

/// `out = D u`: first-order upwind `theta . grad u` with zero inflow ghosts.
pub(crate) fn streaming_into<T: Real>(space: &PhaseSpace<T>, u: &[T], out: &mut [T]) {
    let g = &space.grid;
    let n = g.n_cells();
    let nx = g.nx;
    for (k, d) in space.quad.directions.iter().enumerate() {
        let ax = d[0].abs() / g.dx;
        let ay = d[1].abs() / g.dy;
        let uk = &u[k * n..(k + 1) * n];
        let ok = &mut out[k * n..(k + 1) * n];
        for (o, x) in ok.iter_mut().zip(uk) {
            *o = (ax + ay) * *x;
        }
        for r in (0..n).step_by(nx) {
            if d[0] > T::zero() {
                for ix in 1..nx {
                    ok[r + ix] -= ax * uk[r + ix - 1];
                }
            } else {
                for ix in 0..nx - 1 {
                    ok[r + ix] -= ax * uk[r + ix + 1];
                }
            }
        }
        if d[1] > T::zero() {
            for i in nx..n {
                ok[i] -= ay * uk[i - nx];
            }
        } else {
            for i in 0..n - nx {
                ok[i] -= ay * uk[i + nx];
            }
        }
    }
}

/// `out = D' v = -D^T v + C v`: the downwind difference, closed by a
/// zero-gradient ghost on the outflow side. `C` is the outflow boundary mass.
pub(crate) fn downwind_into<T: Real>(space: &PhaseSpace<T>, v: &[T], out: &mut [T]) {
    let g = &space.grid;
    let n = g.n_cells();
    let nx = g.nx;
    for (k, d) in space.quad.directions.iter().enumerate() {
        let ax = d[0].abs() / g.dx;
        let ay = d[1].abs() / g.dy;
        let vk = &v[k * n..(k + 1) * n];
        let ok = &mut out[k * n..(k + 1) * n];
        ok.iter_mut().for_each(|o| *o = T::zero());
        for r in (0..n).step_by(nx) {
            if d[0] > T::zero() {
                for ix in 0..nx - 1 {
                    ok[r + ix] += ax * (vk[r + ix + 1] - vk[r + ix]);
                }
            } else {
                for ix in 1..nx {
                    ok[r + ix] += ax * (vk[r + ix - 1] - vk[r + ix]);
                }
            }
        }
        if d[1] > T::zero() {
            for i in 0..n - nx {
                ok[i] += ay * (vk[i + nx] - vk[i]);
            }
        } else {
            for i in nx..n {
                ok[i] += ay * (vk[i - nx] - vk[i]);
            }
        }
    }
}

/// The three terms of the discrete integration-by-parts formula.
#[derive(Clone, Copy, Debug)]
pub struct GreenTerms<T> {
    /// `<D u, v>` in V0.
    pub forward: T,
    /// `<D' v, u>` in V0.
    pub backward: T,
    /// `sum over outflow pairs of (nu . theta) ds w_k u v`.
    pub boundary: T,
}

impl<T: Real> GreenTerms<T> {
    pub fn residual(&self) -> T {
        (self.forward + self.backward - self.boundary).abs()
    }

    /// Residual over the sum of the magnitudes of the terms (0 if all vanish).
    pub fn relative(&self) -> T {
        let scale = self.forward.abs() + self.backward.abs() + self.boundary.abs();
        if scale == T::zero() {
            T::zero()
        } else {
            self.residual() / scale
        }
    }
}

pub fn green_terms<T: Real>(space: &PhaseSpace<T>, u: &PhaseSpaceField<T>, v: &PhaseSpaceField<T>) -> GreenTerms<T> {
    assert_eq!(u.len(), space.n_dofs(), "green_terms: field size mismatch");
    assert_eq!(v.len(), space.n_dofs(), "green_terms: field size mismatch");
    let mut buf = vec![T::zero(); space.n_dofs()];
    streaming_into(space, &u.values, &mut buf);
    let forward = space.inner_v0_raw(&buf, &v.values);
    downwind_into(space, &v.values, &mut buf);
    let backward = space.inner_v0_raw(&buf, &u.values);
    let boundary = space
        .layout
        .pairs
        .iter()
        .map(|p| {
            let e = &space.grid.edges[p.edge];
            p.cosine * e.length * space.quad.weights[p.dir] * u.values[p.dof] * v.values[p.dof]
        })
        .sum();
    GreenTerms { forward, backward, boundary }
}

/// `|<theta.grad u, v> + <theta.grad v, u> - boundary term|` for the upwind/downwind pair.
pub fn discrete_green_residual<T: Real>(space: &PhaseSpace<T>, u: &PhaseSpaceField<T>, v: &PhaseSpaceField<T>) -> T {
    green_terms(space, u, v).residual()
}
