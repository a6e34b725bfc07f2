use super::operator::TransportOperator;
use crate::error::{Error, Result};
use crate::phase_space::{PhaseSpaceField, TraceSeries};
use crate::Real;

/// Time-indexed source `q(t_n)`.
pub trait Forcing<T: Real>: Sync {
    /// `out += scale * q(t_n)`.
    fn add_scaled(&self, n: usize, scale: T, out: &mut [T]);
}

/// A stored source series, one field per time node (or per step).
impl<T: Real> Forcing<T> for [PhaseSpaceField<T>] {
    fn add_scaled(&self, n: usize, scale: T, out: &mut [T]) {
        for (o, q) in out.iter_mut().zip(&self[n].values) {
            *o += scale * *q;
        }
    }
}

impl<T: Real> Forcing<T> for Vec<PhaseSpaceField<T>> {
    fn add_scaled(&self, n: usize, scale: T, out: &mut [T]) {
        self.as_slice().add_scaled(n, scale, out)
    }
}

/// Result of a forward march.
#[derive(Clone, Debug)]
pub struct ForwardOutput<T: Real> {
    pub final_state: PhaseSpaceField<T>,
    /// `gamma_+ u` at every time node.
    pub traces: TraceSeries<T>,
    /// Every state `u(t_n)` when storage was requested.
    pub trajectory: Option<Vec<PhaseSpaceField<T>>>,
}

/// Marches `u' + A u = q`, `u(0) = u0`, zero inflow, from `t_0` to `t_{n_steps}`.
///
/// `forcing` must provide at least `n_steps` nodes; `q(t_n)` drives the step from `t_n`.
pub fn forward_solve<T: Real>(
    op: &TransportOperator<T>,
    u0: &PhaseSpaceField<T>,
    forcing: Option<&dyn Forcing<T>>,
    store: bool,
) -> Result<ForwardOutput<T>> {
    let mut trajectory = store.then(|| Vec::with_capacity(op.n_nodes()));
    let (final_state, traces) = forward_solve_streaming(op, u0, forcing, |_, u| {
        if let Some(t) = trajectory.as_mut() {
            t.push(PhaseSpaceField { values: u.to_vec() });
        }
    })?;
    Ok(ForwardOutput { final_state, traces, trajectory })
}

/// As [`forward_solve`], handing each state `(n, u(t_n))` to `hook` instead of storing it.
pub fn forward_solve_streaming<T: Real>(
    op: &TransportOperator<T>,
    u0: &PhaseSpaceField<T>,
    forcing: Option<&dyn Forcing<T>>,
    mut hook: impl FnMut(usize, &[T]),
) -> Result<(PhaseSpaceField<T>, TraceSeries<T>)> {
    let space = op.space();
    let n_dofs = space.n_dofs();
    if u0.len() != n_dofs {
        return Err(Error::contract(format!("initial state has {} values, expected {n_dofs}", u0.len())));
    }
    if !u0.is_finite() {
        return Err(Error::Blowup { step: 0 });
    }
    let dofs = op.trace_dofs();
    let mut traces = TraceSeries::zeros(op.n_nodes(), dofs.len(), op.dt());
    let mut u = u0.values.clone();
    let mut next = vec![T::zero(); n_dofs];
    let mut scratch = vec![T::zero(); n_dofs];
    record(&u, dofs, traces.node_mut(0));
    hook(0, &u);
    for n in 0..op.n_steps() {
        op.step_into(&u, &mut next, &mut scratch, false);
        if let Some(q) = forcing {
            q.add_scaled(n, op.dt(), &mut next);
        }
        let probe: T = next.iter().copied().sum();
        if !probe.is_finite() {
            return Err(Error::Blowup { step: n + 1 });
        }
        std::mem::swap(&mut u, &mut next);
        record(&u, dofs, traces.node_mut(n + 1));
        hook(n + 1, &u);
    }
    Ok((PhaseSpaceField { values: u }, traces))
}

#[inline]
fn record<T: Real>(u: &[T], dofs: &[usize], out: &mut [T]) {
    for (o, d) in out.iter_mut().zip(dofs) {
        *o = u[*d];
    }
}

/// `B u0 = gamma_+ u` for the homogeneous problem.
pub fn observe<T: Real>(u0: &PhaseSpaceField<T>, op: &TransportOperator<T>) -> Result<TraceSeries<T>> {
    Ok(forward_solve_streaming(op, u0, None, |_, _| {})?.1)
}

/// Reverse sweep `lambda_n = S^T lambda_{n+1} + load_n` over nodes `0..n_nodes`, in coordinates.
///
/// `load(n, lambda)` adds the node-`n` load in place. `hook(n, psi)` sees the
/// V0-normalized state `psi_n = W^{-1} lambda_n`, for `n` from `n_nodes - 1` down to 0.
/// Returns `psi_0`.
pub(crate) fn adjoint_sweep<T: Real>(
    op: &TransportOperator<T>,
    n_nodes: usize,
    mut load: impl FnMut(usize, &mut [T]),
    mut hook: Option<&mut dyn FnMut(usize, &[T])>,
) -> Result<Vec<T>> {
    let space = op.space();
    let n_dofs = space.n_dofs();
    let nc = space.n_cells();
    assert!(n_nodes >= 1 && n_nodes <= op.n_nodes(), "adjoint_sweep: node count out of range");
    let inv_w: Vec<T> = (0..space.n_dirs()).map(|k| T::one() / space.dof_weight(k)).collect();
    let normalize = |lam: &[T], psi: &mut [T]| {
        for (k, w) in inv_w.iter().enumerate() {
            for (p, l) in psi[k * nc..(k + 1) * nc].iter_mut().zip(&lam[k * nc..(k + 1) * nc]) {
                *p = *l * *w;
            }
        }
    };
    let mut lam = vec![T::zero(); n_dofs];
    let mut next = vec![T::zero(); n_dofs];
    let mut scratch = vec![T::zero(); n_dofs];
    let mut psi = vec![T::zero(); n_dofs];
    let last = n_nodes - 1;
    load(last, &mut lam);
    for n in (0..=last).rev() {
        if n < last {
            op.step_into(&lam, &mut next, &mut scratch, true);
            std::mem::swap(&mut lam, &mut next);
            load(n, &mut lam);
            let probe: T = lam.iter().copied().sum();
            if !probe.is_finite() {
                return Err(Error::Blowup { step: n });
            }
        }
        if let Some(h) = hook.as_deref_mut() {
            normalize(&lam, &mut psi);
            h(n, &psi);
        }
    }
    normalize(&lam, &mut psi);
    Ok(psi)
}

/// Adds `E^T z_n` with `z_n = c_n w_p eta_n(p)`, the trapezoid-weighted trace load.
pub(crate) fn trace_load<T: Real>(
    op: &TransportOperator<T>,
    eta: &TraceSeries<T>,
    n: usize,
    time_weight: T,
    lam: &mut [T],
) {
    for ((d, p), e) in op.trace_dofs().iter().zip(&op.space().layout.pairs).zip(eta.node(n)) {
        lam[*d] += time_weight * p.weight * *e;
    }
}

/// `B* eta = psi(0)`, the V0/trace-weighted transpose of [`observe`].
///
/// `hook(n, psi(t_n))` receives every adjoint state in reverse time order.
pub fn observe_transpose<T: Real>(
    eta: &TraceSeries<T>,
    op: &TransportOperator<T>,
    hook: Option<&mut dyn FnMut(usize, &[T])>,
) -> Result<PhaseSpaceField<T>> {
    if eta.n_nodes() != op.n_nodes() || eta.n_pairs != op.space().layout.len() {
        return Err(Error::contract("trace series does not match the operator's time grid or layout"));
    }
    let psi = adjoint_sweep(op, op.n_nodes(), |n, lam| trace_load(op, eta, n, eta.time_weight(n), lam), hook)?;
    Ok(PhaseSpaceField { values: psi })
}
