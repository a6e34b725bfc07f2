//! Minimum-norm outflow controls through a regularized Gramian `B* B + eps I`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{PhaseSpaceField, SpatialGrid, TraceSeries};
use crate::transport::{observe, observe_transpose, OpticalMedium, TransportOperator};
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// Steering horizon in units of the diameter, `tau = c_tau l`.
    pub tau_factor: f64,
    /// `eps = epsilon_rel * trace(G) / dim`.
    pub epsilon_rel: f64,
    /// Absolute shift; overrides `epsilon_rel` when set.
    pub epsilon_abs: Option<f64>,
    /// Relative CG residual at which the iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Rademacher probes for the trace estimate.
    pub trace_probes: usize,
    pub seed: u64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            tau_factor: 3.0,
            epsilon_rel: 1e-8,
            epsilon_abs: None,
            tolerance: 1e-3,
            max_iterations: 200,
            trace_probes: 4,
            seed: 0x5eed,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_factor.is_finite() && self.tau_factor >= 1.0) {
            return Err(Error::config("tau_factor", format!("must be >= 1, got {}", self.tau_factor)));
        }
        if !(self.epsilon_rel.is_finite() && self.epsilon_rel >= 0.0) {
            return Err(Error::config("epsilon_rel", "must be finite and >= 0"));
        }
        if let Some(e) = self.epsilon_abs {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::config("epsilon_abs", "must be finite and >= 0"));
            }
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::config("tolerance", format!("must lie in (0, 1), got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations", "must be positive"));
        }
        if self.trace_probes == 0 && self.epsilon_abs.is_none() {
            return Err(Error::config("trace_probes", "at least one probe is needed to scale epsilon"));
        }
        Ok(())
    }

    /// `tau = c_tau l` for the given grid.
    pub fn horizon<T: Real>(&self, grid: &SpatialGrid<T>) -> T {
        T::lit(self.tau_factor) * grid.diameter
    }
}

/// JSON-facing diagnostics of one control solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    /// `||B* eta - phi|| / ||phi||`.
    pub residual: f64,
    pub iterations: usize,
    pub epsilon: f64,
    pub gramian_eig_lo: f64,
    pub gramian_eig_hi: f64,
    /// `||eta||` in `L^2([0, tau]; T_+)`.
    pub control_norm: f64,
    #[serde(skip)]
    pub converged: bool,
    /// CG objective `J(g_k) / ||phi||^2`, `J(g) = <g, (G + eps) g>/2 - <phi, g>`;
    /// entry 0 is the zero start. Non-increasing by construction of CG.
    #[serde(skip)]
    pub history: Vec<f64>,
    /// Relative residual `||phi - (G + eps) g_k|| / ||phi||` per iteration.
    #[serde(skip)]
    pub residual_history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ControlSolution<T: Real> {
    /// The control `eta = B g`.
    pub eta: TraceSeries<T>,
    /// Gramian solution `g`.
    pub g: PhaseSpaceField<T>,
    pub report: ControlReport,
}

/// `v = l mu_s exp(l (mu_a + mu_s))` against the threshold `1/e`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smallness {
    pub value: f64,
    pub satisfied: bool,
}

pub fn smallness_condition<T: Real>(medium: &OpticalMedium<T>, grid: &SpatialGrid<T>) -> Smallness {
    let l = grid.diameter.to_f64_lossy();
    let a = medium.max_absorption().to_f64_lossy();
    let s = medium.max_scattering().to_f64_lossy();
    let value = l * s * (l * (a + s)).exp();
    Smallness { value, satisfied: value < (-1.0f64).exp() }
}

/// `G + eps I` with `G = B* B` on a fixed operator.
#[derive(Clone, Debug)]
pub struct Gramian<'a, T: Real> {
    op: &'a TransportOperator<T>,
    epsilon: T,
    trace: Option<T>,
}

impl<'a, T: Real> Gramian<'a, T> {
    /// Estimates `trace(G)` and sets the shift from `config`.
    pub fn new(op: &'a TransportOperator<T>, config: &ControlConfig) -> Result<Self> {
        config.validate()?;
        if let Some(e) = config.epsilon_abs {
            return Ok(Self { op, epsilon: T::lit(e), trace: None });
        }
        let trace = estimate_trace(op, config.trace_probes, config.seed)?;
        let dim = T::from_usize_lossy(op.space().n_dofs());
        Ok(Self { op, epsilon: T::lit(config.epsilon_rel) * trace / dim, trace: Some(trace) })
    }

    pub fn with_epsilon(op: &'a TransportOperator<T>, epsilon: T) -> Self {
        Self { op, epsilon, trace: None }
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn trace_estimate(&self) -> Option<T> {
        self.trace
    }

    pub fn operator(&self) -> &'a TransportOperator<T> {
        self.op
    }

    /// `(G + eps I) g`.
    pub fn apply(&self, g: &PhaseSpaceField<T>) -> Result<PhaseSpaceField<T>> {
        Ok(self.apply_with_trace(g)?.0)
    }

    /// `((G + eps I) g, B g)`.
    pub fn apply_with_trace(&self, g: &PhaseSpaceField<T>) -> Result<(PhaseSpaceField<T>, TraceSeries<T>)> {
        let bg = observe(g, self.op)?;
        let mut out = observe_transpose(&bg, self.op, None)?;
        out.axpy(self.epsilon, g);
        Ok((out, bg))
    }
}

/// Hutchinson estimate of `trace(B* B)` with Rademacher probes.
fn estimate_trace<T: Real>(op: &TransportOperator<T>, probes: usize, seed: u64) -> Result<T> {
    let n = op.space().n_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = T::zero();
    for _ in 0..probes {
        let z = PhaseSpaceField { values: (0..n).map(|_| if rng.gen::<bool>() { T::one() } else { -T::one() }).collect() };
        let gz = observe_transpose(&observe(&z, op)?, op, None)?;
        total += z.values.iter().zip(&gz.values).map(|(a, b)| *a * *b).sum::<T>();
    }
    Ok(total / T::from_usize_lossy(probes))
}

/// `(B* B + eps I) g`.
pub fn gramian_apply<T: Real>(g: &PhaseSpaceField<T>, op: &TransportOperator<T>, epsilon: T) -> Result<PhaseSpaceField<T>> {
    Gramian::with_epsilon(op, epsilon).apply(g)
}

/// Solves `(G + eps) g = phi` by CG in V0 and returns `eta = B g`,
/// with the steering residual from one extra adjoint application.
pub fn control_solve<T: Real>(phi: &PhaseSpaceField<T>, op: &TransportOperator<T>, config: &ControlConfig) -> Result<ControlSolution<T>> {
    let gram = Gramian::new(op, config)?;
    control_solve_with(&gram, phi, config)
}

/// [`control_solve`] against a prebuilt Gramian.
pub fn control_solve_with<T: Real>(gram: &Gramian<'_, T>, phi: &PhaseSpaceField<T>, config: &ControlConfig) -> Result<ControlSolution<T>> {
    let mut sol = cg_solve(gram, phi, config)?;
    if sol.report.iterations > 0 {
        let psi0 = observe_transpose(&sol.eta, gram.op, None)?;
        sol.report.residual = steering_residual(gram.op, &psi0.values, phi);
    }
    Ok(sol)
}

/// `||psi0 - phi|| / ||phi||` in V0.
pub(crate) fn steering_residual<T: Real>(op: &TransportOperator<T>, psi0: &[T], phi: &PhaseSpaceField<T>) -> f64 {
    let space = op.space();
    let diff: Vec<T> = psi0.iter().zip(&phi.values).map(|(a, b)| *a - *b).collect();
    let num = space.inner_v0_raw(&diff, &diff).sqrt();
    let den = space.norm_v0(phi);
    if den == T::zero() {
        0.0
    } else {
        (num / den).to_f64_lossy()
    }
}

/// CG without the verification sweep; `report.residual` holds the CG residual.
///
/// Returns the last iterate: CG minimizes the error in the energy norm, so
/// the last iterate is the best one even when the Euclidean residual stalls
/// (rough targets whose energy sits in the damped part of the spectrum).
pub(crate) fn cg_solve<T: Real>(gram: &Gramian<'_, T>, phi: &PhaseSpaceField<T>, config: &ControlConfig) -> Result<ControlSolution<T>> {
    config.validate()?;
    let op = gram.op;
    let space = op.space();
    if phi.len() != space.n_dofs() {
        return Err(Error::contract("control target does not match the phase space"));
    }
    if !phi.is_finite() {
        return Err(Error::contract("control target has non-finite values"));
    }
    let eps = gram.epsilon.to_f64_lossy();
    let zero_eta = TraceSeries::zeros(op.n_nodes(), space.layout.len(), op.dt());
    let norm_phi = space.norm_v0(phi);
    if norm_phi == T::zero() {
        return Ok(ControlSolution {
            eta: zero_eta,
            g: space.zero_field(),
            report: ControlReport {
                epsilon: eps,
                converged: true,
                history: vec![0.0],
                residual_history: vec![0.0],
                ..Default::default()
            },
        });
    }
    let mut x = space.zero_field();
    let mut eta = zero_eta;
    let mut r = phi.clone();
    let mut p = r.clone();
    let mut rr = space.inner_v0(&r, &r);
    let phi2 = rr;
    let mut objective = T::zero();
    let mut history = vec![0.0];
    let mut residual_history = vec![1.0];
    let mut alphas: Vec<T> = Vec::new();
    let mut betas: Vec<T> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut rel = T::one();
    while iterations < config.max_iterations {
        let (ap, bp) = gram.apply_with_trace(&p)?;
        let pap = space.inner_v0(&p, &ap);
        if !(pap > T::zero()) {
            log::warn!("CG breakdown: <p, G p> = {pap}");
            break;
        }
        iterations += 1;
        let alpha = rr / pap;
        x.axpy(alpha, &p);
        eta.axpy(alpha, &bp);
        r.axpy(-alpha, &ap);
        objective -= T::lit(0.5) * alpha * rr;
        let rr_new = space.inner_v0(&r, &r);
        rel = rr_new.sqrt() / norm_phi;
        alphas.push(alpha);
        history.push((objective / phi2).to_f64_lossy());
        residual_history.push(rel.to_f64_lossy());
        if rel <= T::lit(config.tolerance) {
            converged = true;
            break;
        }
        let beta = rr_new / rr;
        betas.push(beta);
        rr = rr_new;
        for (pv, rv) in p.values.iter_mut().zip(&r.values) {
            *pv = *rv + beta * *pv;
        }
    }
    let (lo, hi) = lanczos_extremes(&alphas, &betas);
    let (res, g) = (rel, x);
    let control_norm = space.norm_series(&eta).to_f64_lossy();
    Ok(ControlSolution {
        eta,
        g,
        report: ControlReport {
            residual: res.to_f64_lossy(),
            iterations,
            epsilon: eps,
            gramian_eig_lo: lo - eps,
            gramian_eig_hi: hi - eps,
            control_norm,
            converged,
            history,
            residual_history,
        },
    })
}

/// Extreme Ritz values of `G + eps` from the CG coefficients.
fn lanczos_extremes<T: Real>(alphas: &[T], betas: &[T]) -> (f64, f64) {
    let m = alphas.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let a: Vec<f64> = alphas.iter().map(|v| v.to_f64_lossy()).collect();
    let b: Vec<f64> = betas.iter().map(|v| v.to_f64_lossy()).collect();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        t[(j, j)] = 1.0 / a[j] + if j > 0 { b[j - 1] / a[j - 1] } else { 0.0 };
        if j + 1 < m {
            let off = b[j].sqrt() / a[j];
            t[(j, j + 1)] = off;
            t[(j + 1, j)] = off;
        }
    }
    let eig = t.symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Solves for the control of `phi`, then replays `B* eta`, streaming every
/// adjoint state `psi(t_n)` (reverse time order) to `hook`. Returns `psi(0)`.
pub fn solution_operator<T: Real>(
    phi: &PhaseSpaceField<T>,
    op: &TransportOperator<T>,
    config: &ControlConfig,
    hook: Option<&mut dyn FnMut(usize, &[T])>,
) -> Result<(PhaseSpaceField<T>, ControlSolution<T>)> {
    let gram = Gramian::new(op, config)?;
    let mut sol = cg_solve(&gram, phi, config)?;
    let psi0 = observe_transpose(&sol.eta, op, hook)?;
    if sol.report.iterations > 0 {
        sol.report.residual = steering_residual(op, &psi0.values, phi);
    }
    Ok((psi0, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::{build_phase_space, PhaseSpaceConfig};
    use std::sync::Arc;

    #[test]
    fn smallness_examples() {
        let ps = build_phase_space::<f64>(&PhaseSpaceConfig::unit_square(4, 8)).unwrap();
        let vac = OpticalMedium::vacuum(&ps);
        assert_eq!(smallness_condition(&vac, &ps.grid), Smallness { value: 0.0, satisfied: true });
        let weak = OpticalMedium::homogeneous(&ps, 0.0, 0.1).unwrap();
        let s = smallness_condition(&weak, &ps.grid);
        let l = 2f64.sqrt();
        assert!((s.value - l * 0.1 * (l * 0.1).exp()).abs() < 1e-15);
        assert!((s.value - 0.163).abs() < 1e-3 && s.satisfied);
        let strong = OpticalMedium::homogeneous(&ps, 0.0, 1.0).unwrap();
        let s = smallness_condition(&strong, &ps.grid);
        assert!((s.value - 5.8).abs() < 0.05 && !s.satisfied);
    }

    #[test]
    fn zero_target_needs_no_iterations() {
        let ps = Arc::new(build_phase_space::<f64>(&PhaseSpaceConfig::unit_square(6, 8)).unwrap());
        let op = TransportOperator::new(ps.clone(), OpticalMedium::vacuum(&ps), 3.0 * ps.grid.diameter, 0.5).unwrap();
        let sol = control_solve(&ps.zero_field(), &op, &ControlConfig::default()).unwrap();
        assert_eq!(sol.report.iterations, 0);
        assert_eq!(sol.report.residual, 0.0);
        assert!(sol.eta.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn report_serializes_to_six_keys() {
        let r = ControlReport { residual: 0.01, iterations: 3, ..Default::default() };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["control_norm", "epsilon", "gramian_eig_hi", "gramian_eig_lo", "iterations", "residual"]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = ControlConfig { tau_factor: 0.5, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        let bad = ControlConfig { tolerance: 1.0, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
    }
}
