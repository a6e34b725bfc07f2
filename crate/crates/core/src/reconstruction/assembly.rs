use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trajectory::SourceTrajectory;
use crate::controllability::{cg_solve, steering_residual, ControlConfig, ControlReport, Gramian};
use crate::error::{Error, Result};
use crate::phase_space::{PhaseSpace, PhaseSpaceField, SpatialField, TraceSeries};
use crate::transport::{adjoint_sweep, observe, streaming_into, trace_load, TimeDerivative, TransportOperator};
use crate::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyConfig {
    /// Control solver settings for the row targets.
    pub control: ControlConfig,
    /// Rule used for `m'`; the pairing with `m'` is transposed exactly.
    pub derivative: TimeDerivative,
    pub rows: RowModel,
    /// Where the upwind streaming defect `H = P_theta D lift` enters (ideal rows only).
    pub defect: DefectTreatment,
    /// Largest tolerated share of rows whose control solve missed its tolerance.
    pub max_flagged_fraction: f64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            control: ControlConfig { epsilon_rel: 0.3, tolerance: 1e-4, max_iterations: 200, ..ControlConfig::default() },
            derivative: TimeDerivative::Centered,
            rows: RowModel::Exact,
            defect: DefectTreatment::Eliminated,
            max_flagged_fraction: 0.0,
        }
    }
}

impl AssemblyConfig {
    pub fn validate(&self) -> Result<()> {
        self.control.validate()?;
        if !(0.0..=1.0).contains(&self.max_flagged_fraction) {
            return Err(Error::config("max_flagged_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// How the pairings at `t = 0` enter the rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowModel {
    /// Pair with the computed `psi_j(0)`: every row holds to round-off at the true unknowns.
    #[default]
    Exact,
    /// Replace `psi_j(0)` by its target `phi_j`: identity and diagonal blocks,
    /// with a consistency error set by how well the grid-scale targets are steered.
    Ideal,
}

/// Placement of `H u0` in the `m'` rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectTreatment {
    /// Dropped; exact only in the continuum limit.
    Off,
    /// Substituted through the `m` rows: `H u0 = H (b2 - A f)`; keeps the coupling block diagonal.
    #[default]
    Eliminated,
    /// Kept on the unknown: the coupling block becomes `-(diag(mu_a) + H)`.
    Coupled,
}

/// Controls `g_j` of the row targets for one assembly medium.
#[derive(Clone, Debug)]
pub struct ControlBank<T: Real> {
    pub epsilon: T,
    pub controls: Vec<PhaseSpaceField<T>>,
    pub reports: Vec<ControlReport>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AssemblyTimings {
    pub controls_s: f64,
    pub rows_s: f64,
    pub conditioning_s: f64,
}

/// Dense system in the unknowns `(f, u0)`, both indexed by cell:
///
/// ```text
/// [ S0 + Adot   C  ] [f ]   [b1]
/// [ A           I0 ] [u0] = [b2]
/// ```
///
/// Row `j` pairs the data with the control `eta_j` steering towards
/// `lift(e_j / sqrt(dx dy))`, divided by `|S| sqrt(dx dy)`. `A` and `Adot` hold
/// `sqrt(dx dy) P_theta` of the time sums of `sigma psi_j` and `sigma' psi~_j`.
/// With [`RowModel::Exact`], `I0`, `S0`, `C` are the pairings with the computed
/// `psi_j(0)`, `psi~_j(0)`; with [`RowModel::Ideal`] they are `I`, `diag(P_theta sigma0)`
/// and `-diag(mu_a)` (plus the defect `H = P_theta D lift` as configured).
#[derive(Clone, Debug)]
pub struct FredholmSystem<T: Real> {
    pub n: usize,
    pub model: RowModel,
    pub matrix: DMatrix<T>,
    pub rhs: DVector<T>,
    /// `A`: `sqrt(dx dy) P_theta P_t (sigma psi_j)` rows.
    pub a_block: DMatrix<T>,
    /// `Adot`: `sqrt(dx dy) P_theta P_t (sigma' psi~_j)` rows.
    pub adot_block: DMatrix<T>,
    pub sigma0_average: SpatialField<T>,
    pub absorption: SpatialField<T>,
    /// `<m', eta_j>` and `<m, eta_j>` after scaling.
    pub b1: DVector<T>,
    pub b2: DVector<T>,
    /// Per-row control reports (steering residual from the assembly sweep).
    pub reports: Vec<ControlReport>,
    pub flagged: Vec<usize>,
    pub condition: f64,
    pub timings: AssemblyTimings,
}

impl<T: Real> FredholmSystem<T> {
    pub fn block(&self, r: usize, c: usize) -> DMatrix<T> {
        self.matrix.view((r * self.n, c * self.n), (self.n, self.n)).into_owned()
    }

    /// `||M x - b||` at a candidate `(f, u0)`.
    pub fn residual_at(&self, f: &SpatialField<T>, u0: &SpatialField<T>) -> T {
        let x = stack(f, u0);
        (&self.matrix * x - &self.rhs).norm()
    }

    /// Largest steering residual among the rows.
    pub fn max_row_residual(&self) -> f64 {
        self.reports.iter().map(|r| r.residual).fold(0.0, f64::max)
    }
}

pub(crate) fn stack<T: Real>(f: &SpatialField<T>, u0: &SpatialField<T>) -> DVector<T> {
    DVector::from_iterator(f.len() + u0.len(), f.values.iter().chain(&u0.values).copied())
}

/// Cell-indicator target `lift(e_j / sqrt(dx dy))`.
fn row_target<T: Real>(space: &PhaseSpace<T>, j: usize) -> PhaseSpaceField<T> {
    let mut e = space.zero_spatial();
    e.values[j] = T::one() / space.grid.cell_area().sqrt();
    space.lift_isotropic(&e)
}

/// Solves the control problem for every row target.
pub fn solve_row_controls<T: Real>(op: &TransportOperator<T>, config: &ControlConfig) -> Result<ControlBank<T>> {
    let gram = Gramian::new(op, config)?;
    let space = op.space();
    let rows: Vec<Result<(PhaseSpaceField<T>, ControlReport)>> = (0..space.n_cells())
        .into_par_iter()
        .map(|j| {
            let sol = cg_solve(&gram, &row_target(space, j), config)?;
            Ok((sol.g, sol.report))
        })
        .collect();
    let mut controls = Vec::with_capacity(rows.len());
    let mut reports = Vec::with_capacity(rows.len());
    for r in rows {
        let (g, rep) = r?;
        controls.push(g);
        reports.push(rep);
    }
    Ok(ControlBank { epsilon: gram.epsilon(), controls, reports })
}

/// Assembles the system for data `(m, m')` with fresh controls for `op`.
pub fn assemble_fredholm<T: Real>(
    sigma: &SourceTrajectory<T>,
    op: &TransportOperator<T>,
    m: &TraceSeries<T>,
    mdot: &TraceSeries<T>,
    config: &AssemblyConfig,
) -> Result<FredholmSystem<T>> {
    config.validate()?;
    let start = Instant::now();
    let bank = solve_row_controls(op, &config.control)?;
    let controls_s = start.elapsed().as_secs_f64();
    let mut sys = assemble_with_bank(sigma, op, m, mdot, &bank, config)?;
    sys.timings.controls_s = controls_s;
    Ok(sys)
}

struct Row<T> {
    a: Vec<T>,
    adot: Vec<T>,
    /// `<lift e_i, psi_j(0)>`, `<sigma(0) lift e_i, psi~_j(0)>`, `-<A lift e_i, psi~_j(0)>`, scaled.
    initial: Vec<T>,
    source: Vec<T>,
    coupling: Vec<T>,
    b1: T,
    b2: T,
    residual: f64,
}

/// Assembles with precomputed controls; `op` must be the operator the bank was built for.
pub fn assemble_with_bank<T: Real>(
    sigma: &SourceTrajectory<T>,
    op: &TransportOperator<T>,
    m: &TraceSeries<T>,
    mdot: &TraceSeries<T>,
    bank: &ControlBank<T>,
    config: &AssemblyConfig,
) -> Result<FredholmSystem<T>> {
    config.validate()?;
    let space = op.space();
    let n = space.n_cells();
    let nodes = op.n_nodes();
    if sigma.n_nodes() != nodes || m.n_nodes() != nodes || mdot.n_nodes() != nodes {
        return Err(Error::contract("trajectory, data and operator use different time grids"));
    }
    if m.n_pairs != space.layout.len() || mdot.n_pairs != space.layout.len() {
        return Err(Error::contract("data do not match the outflow layout"));
    }
    if bank.controls.len() != n {
        return Err(Error::contract("control bank does not match the grid"));
    }
    let start = Instant::now();
    let sqrt_area = space.grid.cell_area().sqrt();
    let scale = T::one() / (space.quad.measure() * sqrt_area);
    let dt = op.dt();
    // sigma(t_{n+1}) - sigma(t_n) for the derivative pairing, computed once.
    let dsigma: Vec<Vec<T>> = (0..nodes - 1)
        .map(|k| sigma.state(k + 1).iter().zip(sigma.state(k).iter()).map(|(a, b)| *a - *b).collect())
        .collect();
    let sigma0 = sigma.state(0).into_owned();
    let time_weights: Vec<T> = (0..nodes).map(|k| m.time_weight(k)).collect();
    let stencil = config.derivative.stencil(nodes)?;

    let rows: Vec<Result<Row<T>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let eta = observe(&bank.controls[j], op)?;
            let b2 = space.inner_series(m, &eta) * scale;
            let b1 = space.inner_series(mdot, &eta) * scale;

            let mut a = vec![T::zero(); n];
            let mut initial = vec![T::zero(); n];
            let mut prod = vec![T::zero(); space.n_dofs()];
            let mut hook = |k: usize, psi: &[T]| {
                if k >= 1 {
                    let s = sigma.state(k - 1);
                    for ((p, x), y) in prod.iter_mut().zip(s.iter()).zip(psi) {
                        *p = *x * *y;
                    }
                    space.angular_average_into(&prod, dt, &mut a);
                } else {
                    space.angular_average_into(psi, T::one(), &mut initial);
                }
            };
            let psi0 = adjoint_sweep(op, nodes, |k, lam| trace_load(op, &eta, k, time_weights[k], lam), Some(&mut hook))?;
            let residual = steering_residual(op, &psi0, &row_target(space, j));

            // Loads of the time-mixed control reproduce <m', eta> exactly.
            let mixed = mix_control(&eta, &stencil, &time_weights);
            let mut adot = vec![T::zero(); n];
            let mut source = vec![T::zero(); n];
            let mut hook = |k: usize, psi: &[T]| {
                let (ds, out): (&[T], &mut Vec<T>) = if k >= 1 { (&dsigma[k - 1], &mut adot) } else { (&sigma0, &mut source) };
                for ((p, x), y) in prod.iter_mut().zip(ds).zip(psi) {
                    *p = *x * *y;
                }
                space.angular_average_into(&prod, T::one(), out);
            };
            let psi0_mixed = adjoint_sweep(op, nodes - 1, |k, lam| trace_load(op, &mixed, k, T::one(), lam), Some(&mut hook))?;
            let coupling = streaming_pairing(op, &psi0_mixed, scale);
            for v in a.iter_mut().chain(adot.iter_mut()).chain(initial.iter_mut()).chain(source.iter_mut()) {
                *v *= sqrt_area;
            }
            Ok(Row { a, adot, initial, source, coupling, b1, b2, residual })
        })
        .collect();

    let mut a_block = DMatrix::<T>::zeros(n, n);
    let mut adot_block = DMatrix::<T>::zeros(n, n);
    let mut initial = DMatrix::<T>::zeros(n, n);
    let mut source = DMatrix::<T>::zeros(n, n);
    let mut coupling = DMatrix::<T>::zeros(n, n);
    let mut b1 = DVector::<T>::zeros(n);
    let mut b2 = DVector::<T>::zeros(n);
    let mut reports = bank.reports.clone();
    for (j, row) in rows.into_iter().enumerate() {
        let row = row?;
        for i in 0..n {
            a_block[(j, i)] = row.a[i];
            adot_block[(j, i)] = row.adot[i];
            initial[(j, i)] = row.initial[i];
            source[(j, i)] = row.source[i];
            coupling[(j, i)] = row.coupling[i];
        }
        b1[j] = row.b1;
        b2[j] = row.b2;
        reports[j].residual = row.residual;
    }
    let flagged: Vec<usize> = reports.iter().enumerate().filter(|(_, r)| !r.converged).map(|(j, _)| j).collect();
    let allowed = config.max_flagged_fraction;
    if flagged.len() as f64 > allowed * n as f64 {
        return Err(Error::Assembly { flagged: flagged.len(), rows: n, allowed });
    }
    let rows_s = start.elapsed().as_secs_f64();

    let sigma0_average = sigma.initial_average.clone();
    let absorption = op.medium().absorption.clone();
    let mut rhs1 = b1.clone();
    if config.rows == RowModel::Ideal {
        initial = DMatrix::identity(n, n);
        source = DMatrix::from_diagonal(&DVector::from_column_slice(&sigma0_average.values));
        coupling = -DMatrix::from_diagonal(&DVector::from_column_slice(&absorption.values));
        match config.defect {
            DefectTreatment::Off => {}
            DefectTreatment::Eliminated => {
                source += streaming_defect_columns(space, &a_block);
                rhs1 += streaming_defect_columns(space, &DMatrix::from_column_slice(n, 1, b2.as_slice())).column(0);
            }
            DefectTreatment::Coupled => coupling -= streaming_defect_columns(space, &DMatrix::identity(n, n)),
        }
    }

    let mut matrix = DMatrix::<T>::zeros(2 * n, 2 * n);
    matrix.view_mut((0, 0), (n, n)).copy_from(&(source + &adot_block));
    matrix.view_mut((0, n), (n, n)).copy_from(&coupling);
    matrix.view_mut((n, 0), (n, n)).copy_from(&a_block);
    matrix.view_mut((n, n), (n, n)).copy_from(&initial);
    let mut rhs = DVector::<T>::zeros(2 * n);
    rhs.rows_mut(0, n).copy_from(&rhs1);
    rhs.rows_mut(n, n).copy_from(&b2);
    if matrix.iter().any(|v| !v.is_finite()) || rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("assembled system has non-finite entries"));
    }
    let start = Instant::now();
    let condition = condition_number(&matrix);
    let conditioning_s = start.elapsed().as_secs_f64();
    Ok(FredholmSystem {
        n,
        model: config.rows,
        matrix,
        rhs,
        a_block,
        adot_block,
        sigma0_average,
        absorption,
        b1,
        b2,
        reports,
        flagged,
        condition,
        timings: AssemblyTimings { controls_s: 0.0, rows_s, conditioning_s },
    })
}

/// `-<A lift e_i, psi>` for every cell `i`, times `scale`, with `A = (I - S) / dt`.
fn streaming_pairing<T: Real>(op: &TransportOperator<T>, psi: &[T], scale: T) -> Vec<T> {
    let space = op.space();
    let nc = space.n_cells();
    let mut lam = psi.to_vec();
    for (k, chunk) in lam.chunks_mut(nc).enumerate() {
        let w = space.dof_weight(k);
        chunk.iter_mut().for_each(|v| *v *= w);
    }
    let mut next = vec![T::zero(); lam.len()];
    let mut scratch = vec![T::zero(); lam.len()];
    op.step_into(&lam, &mut next, &mut scratch, true);
    let c = scale / op.dt();
    let mut out = vec![T::zero(); nc];
    for (chunk_l, chunk_s) in lam.chunks(nc).zip(next.chunks(nc)) {
        for ((o, l), t) in out.iter_mut().zip(chunk_l).zip(chunk_s) {
            *o -= c * (*l - *t);
        }
    }
    out
}

/// `eta~_j = sum_n R_nj c_n eta_n`, so that `<R d, eta> = sum_j <d_j, eta~_j>` with unit time weights.
fn mix_control<T: Real>(eta: &TraceSeries<T>, stencil: &[Vec<(usize, f64)>], time_weights: &[T]) -> TraceSeries<T> {
    let mut mixed = TraceSeries::zeros(eta.n_nodes() - 1, eta.n_pairs, eta.dt);
    for (n, row) in stencil.iter().enumerate() {
        let src = eta.node(n);
        for &(j, c) in row {
            let w = T::lit(c) * time_weights[n];
            for (d, s) in mixed.node_mut(j).iter_mut().zip(src) {
                *d += w * *s;
            }
        }
    }
    mixed
}

/// `H x = P_theta D lift(x)` applied to every column of `x`.
pub(crate) fn streaming_defect_columns<T: Real>(space: &PhaseSpace<T>, x: &DMatrix<T>) -> DMatrix<T> {
    let n = space.n_cells();
    let mut out = DMatrix::<T>::zeros(n, x.ncols());
    let mut d = vec![T::zero(); space.n_dofs()];
    for c in 0..x.ncols() {
        let g = SpatialField { values: x.column(c).iter().copied().collect() };
        streaming_into(space, &space.lift_isotropic(&g).values, &mut d);
        let mut avg = vec![T::zero(); n];
        space.angular_average_into(&d, T::one(), &mut avg);
        for (i, v) in avg.into_iter().enumerate() {
            out[(i, c)] = v;
        }
    }
    out
}

/// `sigma_max / sigma_min` from a full SVD (infinite when singular).
pub(crate) fn condition_number<T: Real>(m: &DMatrix<T>) -> f64 {
    let sv = m.clone().singular_values();
    let hi = sv.iter().fold(T::zero(), |a, b| a.max(*b)).to_f64_lossy();
    let lo = sv.iter().fold(T::max_value().expect("bounded scalar"), |a, b| a.min(*b)).to_f64_lossy();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}
