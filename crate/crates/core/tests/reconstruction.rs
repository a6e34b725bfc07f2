use std::sync::Arc;

use nalgebra::DVector;
use rtinv::reconstruction::{
    assemble_with_bank, load_system, ratio_spread, solve_row_controls, ControlBank, Perturbation, TrajectoryConfig,
};
use rtinv::{
    assemble_fredholm, build_phase_space, build_source_trajectory, measurement_pipeline, nonlinear_reconstruct,
    observe, solve_linear_inverse, stability_probe, AssemblyConfig, Error, FredholmSystem, NonlinearConfig,
    OpticalMedium, PhaseSpace, PhaseSpaceConfig, PhaseSpaceField, RowModel, ScatteringKernel, SolveConfig,
    SourceTrajectory, SpatialField, TimeDerivative, TraceSeries, TransportOperator,
};

fn space(n: usize, dirs: usize) -> Arc<PhaseSpace<f64>> {
    Arc::new(build_phase_space(&PhaseSpaceConfig::unit_square(n, dirs)).unwrap())
}

fn bump(cx: f64, cy: f64, w: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| (-((x - cx).powi(2) + (y - cy).powi(2)) / (w * w)).exp()
}

fn compact_bump(cx: f64, cy: f64, r: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| {
        let s = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() / r;
        if s < 1.0 { (std::f64::consts::FRAC_PI_2 * s).cos().powi(2) } else { 0.0 }
    }
}

struct Case {
    ps: Arc<PhaseSpace<f64>>,
    op: TransportOperator<f64>,
    sigma: SourceTrajectory<f64>,
    f: SpatialField<f64>,
    u0: SpatialField<f64>,
    m: TraceSeries<f64>,
    mdot: TraceSeries<f64>,
}

fn case(ps: Arc<PhaseSpace<f64>>, medium: OpticalMedium<f64>) -> Case {
    let op = TransportOperator::new(ps.clone(), medium, 3.0 * ps.grid.diameter, 0.5).unwrap();
    let w0 = ps.spatial_from_fn(|x, y| 1.0 + 0.5 * x + 0.3 * y);
    let sigma = build_source_trajectory(&op, &w0, &TrajectoryConfig::default()).unwrap();
    let f = ps.spatial_from_fn(bump(0.55, 0.45, 0.25)).scaled(0.1);
    let u0 = ps.spatial_from_fn(|x, y| 0.5 + bump(0.35, 0.6, 0.3)(x, y));
    let (m, mdot) = measurement_pipeline(&f, &u0, &sigma, &op, TimeDerivative::Centered).unwrap();
    Case { ps, op, sigma, f, u0, m, mdot }
}

fn scattering_medium(ps: &PhaseSpace<f64>) -> OpticalMedium<f64> {
    OpticalMedium::new(
        ps.spatial_from_fn(|x, y| 0.1 + 0.1 * x * y),
        SpatialField::constant(ps.n_cells(), 0.1),
        ScatteringKernel::henyey_greenstein(&ps.quad, 0.5).unwrap(),
    )
    .unwrap()
}

fn ideal() -> AssemblyConfig {
    AssemblyConfig { rows: RowModel::Ideal, ..AssemblyConfig::default() }
}

fn rel(ps: &PhaseSpace<f64>, a: &SpatialField<f64>, b: &SpatialField<f64>) -> f64 {
    ps.norm_l2(&(a - b)) / ps.norm_l2(b)
}

#[test]
fn exact_rows_hold_at_the_true_unknowns() {
    for scattering in [false, true] {
        let ps = space(8, 8);
        let medium = if scattering { scattering_medium(&ps) } else { OpticalMedium::vacuum(&ps) };
        let c = case(ps, medium);
        let sys = assemble_fredholm(&c.sigma, &c.op, &c.m, &c.mdot, &AssemblyConfig::default()).unwrap();
        let r = sys.residual_at(&c.f, &c.u0);
        assert!(r <= 1e-12 * sys.rhs.norm(), "scattering {scattering}: residual {r:e}");
        // A sign error in the source pairing is visible at once.
        let wrong = sys.residual_at(&c.f.scaled(-1.0), &c.u0);
        assert!(wrong >= 1e-3 * sys.rhs.norm(), "flipped source still consistent: {wrong:e}");
    }
}

#[test]
fn ideal_rows_are_consistent_up_to_the_control_residual() {
    let ps = space(8, 8);
    let c = case(ps, OpticalMedium::vacuum(&space(8, 8)));
    let sys = assemble_fredholm(&c.sigma, &c.op, &c.m, &c.mdot, &ideal()).unwrap();
    let r = sys.residual_at(&c.f, &c.u0);
    let bound = (sys.max_row_residual() + 10.0 * c.op.dt().powi(2)) * sys.rhs.norm();
    assert!(r <= bound, "residual {r:e} above {bound:e}");
}

#[test]
fn ideal_blocks_are_identity_and_absorption() {
    let ps = space(6, 8);
    let c = case(ps.clone(), scattering_medium(&ps));
    let sys = assemble_fredholm(&c.sigma, &c.op, &c.m, &c.mdot, &ideal()).unwrap();
    let n = ps.n_cells();
    let b22 = sys.block(1, 1);
    let b12 = sys.block(0, 1);
    for j in 0..n {
        for i in 0..n {
            assert_eq!(b22[(j, i)], if i == j { 1.0 } else { 0.0 });
            let mu = if i == j { -c.op.medium().absorption.values[j] } else { 0.0 };
            assert_eq!(b12[(j, i)], mu);
        }
    }
}

#[test]
fn constant_isotropic_source_gives_a_triangular_system() {
    let ps = space(8, 8);
    let op = TransportOperator::new(ps.clone(), OpticalMedium::vacuum(&ps), 3.0 * ps.grid.diameter, 0.5).unwrap();
    let w = ps.spatial_from_fn(|x, y| 1.0 + 0.4 * x - 0.2 * y);
    let state = ps.lift_isotropic(&w);
    let probe = observe(&state, &op).unwrap();
    let sigma = SourceTrajectory::from_states(vec![state; op.n_nodes()], probe, |u| ps.angular_average(u)).unwrap();
    let f = ps.spatial_from_fn(bump(0.5, 0.5, 0.3));
    let u0 = ps.spatial_from_fn(|x, _| 1.0 + x);
    let (m, mdot) = measurement_pipeline(&f, &u0, &sigma, &op, TimeDerivative::Centered).unwrap();
    let sys = assemble_fredholm(&sigma, &op, &m, &mdot, &ideal()).unwrap();
    let n = ps.n_cells();
    assert!(sys.adot_block.iter().all(|v| *v == 0.0));
    assert!(sys.block(0, 1).iter().all(|v| *v == 0.0));

    let full = sys.matrix.clone().lu().solve(&sys.rhs).unwrap();
    let f_short = sys.block(0, 0).lu().solve(&sys.rhs.rows(0, n).into_owned()).unwrap();
    let u_short = sys.rhs.rows(n, n) - &sys.a_block * &f_short;
    let short = DVector::from_iterator(2 * n, f_short.iter().chain(u_short.iter()).copied());
    assert!((&full - &short).norm() <= 1e-10 * full.norm());
    // With H off the first block is diag(P sigma0) and f is b1 / P sigma0 cellwise.
    let plain = AssemblyConfig { defect: rtinv::reconstruction::DefectTreatment::Off, ..ideal() };
    let sys = assemble_fredholm(&sigma, &op, &m, &mdot, &plain).unwrap();
    let f_direct: Vec<f64> = (0..n).map(|j| sys.b1[j] / w.values[j]).collect();
    let f_solve = solve_linear_inverse(&sys, &SolveConfig { max_condition: f64::INFINITY, ..SolveConfig::default() }).unwrap().f;
    for (a, b) in f_direct.iter().zip(&f_solve.values) {
        assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
    }
}

#[test]
fn zero_data_give_zero_system_and_solution() {
    let ps = space(6, 8);
    let c = case(ps.clone(), OpticalMedium::vacuum(&ps));
    let zero = c.m.scaled(0.0);
    let sys = assemble_fredholm(&c.sigma, &c.op, &zero, &zero, &AssemblyConfig::default()).unwrap();
    assert!(sys.rhs.iter().all(|v| *v == 0.0));
    let sol = solve_linear_inverse(&sys, &SolveConfig::default()).unwrap();
    assert!(sol.f.values.iter().chain(&sol.u0.values).all(|v| *v == 0.0));
}

fn bank_and_system(c: &Case) -> (ControlBank<f64>, FredholmSystem<f64>) {
    let config = AssemblyConfig::default();
    let bank = solve_row_controls(&c.op, &config.control).unwrap();
    let sys = assemble_with_bank(&c.sigma, &c.op, &c.m, &c.mdot, &bank, &config).unwrap();
    (bank, sys)
}

#[test]
fn exact_data_are_recovered_and_solutions_are_linear() {
    let ps = space(8, 8);
    let c = case(ps.clone(), scattering_medium(&ps));
    let (bank, sys) = bank_and_system(&c);
    let config = SolveConfig::default();
    let sol = solve_linear_inverse(&sys, &config).unwrap();
    assert!(rel(&ps, &sol.f, &c.f) <= 0.10 && rel(&ps, &sol.u0, &c.u0) <= 0.10);

    let g = ps.spatial_from_fn(|x, y| x * (1.0 - y)).scaled(0.05);
    let v0 = ps.spatial_from_fn(|x, _| 1.0 - x);
    let (m2, mdot2) = measurement_pipeline(&g, &v0, &c.sigma, &c.op, TimeDerivative::Centered).unwrap();
    let sys2 = assemble_with_bank(&c.sigma, &c.op, &m2, &mdot2, &bank, &AssemblyConfig::default()).unwrap();
    let mut m12 = c.m.clone();
    m12.axpy(1.0, &m2);
    let mut mdot12 = c.mdot.clone();
    mdot12.axpy(1.0, &mdot2);
    let sys12 = assemble_with_bank(&c.sigma, &c.op, &m12, &mdot12, &bank, &AssemblyConfig::default()).unwrap();
    let (s1, s2, s12) = (
        solve_linear_inverse(&sys, &config).unwrap(),
        solve_linear_inverse(&sys2, &config).unwrap(),
        solve_linear_inverse(&sys12, &config).unwrap(),
    );
    let sum_f = &s1.f + &s2.f;
    let sum_u = &s1.u0 + &s2.u0;
    // Roundoff through the regularized normal equations grows like eps / tikhonov_rel.
    let tol = 100.0 * f64::EPSILON / config.tikhonov_rel;
    assert!(ps.norm_l2(&(&s12.f - &sum_f)) <= tol * ps.norm_l2(&sum_f));
    assert!(ps.norm_l2(&(&s12.u0 - &sum_u)) <= tol * ps.norm_l2(&sum_u));
}

#[test]
fn scaling_the_data_scales_the_solution() {
    let ps = space(6, 8);
    let c = case(ps.clone(), OpticalMedium::vacuum(&ps));
    let (bank, sys) = bank_and_system(&c);
    let k = 3.5;
    let scaled =
        assemble_with_bank(&c.sigma, &c.op, &c.m.scaled(k), &c.mdot.scaled(k), &bank, &AssemblyConfig::default()).unwrap();
    assert!((&scaled.rhs - &sys.rhs * k).norm() <= 1e-13 * scaled.rhs.norm());
    let a = solve_linear_inverse(&sys, &SolveConfig::default()).unwrap();
    let b = solve_linear_inverse(&scaled, &SolveConfig::default()).unwrap();
    let tol = 100.0 * f64::EPSILON / SolveConfig::default().tikhonov_rel;
    assert!(ps.norm_l2(&(&b.f - &a.f.scaled(k))) <= tol * ps.norm_l2(&b.f));
    assert!(ps.norm_l2(&(&b.u0 - &a.u0.scaled(k))) <= tol * ps.norm_l2(&b.u0));
}

#[test]
fn off_blocks_show_fast_singular_value_decay() {
    let ps = space(8, 8);
    let c = case(ps.clone(), OpticalMedium::vacuum(&ps));
    let (_, sys) = bank_and_system(&c);
    let spectrum = |m: &nalgebra::DMatrix<f64>| {
        let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    };
    let n = ps.n_cells();
    for (name, block) in [("A", sys.a_block.clone()), ("Adot", sys.adot_block.clone()), ("B22", sys.block(1, 1)), ("B11", sys.block(0, 0))] {
        let s = spectrum(&block);
        let total: f64 = s.iter().map(|v| v * v).sum();
        let head: f64 = s[..n / 4].iter().map(|v| v * v).sum();
        let (tail, share) = (s[n - 1] / s[0], head / total);
        println!("{name}: tail {tail:.2e} top-quarter energy {share:.4}");
        if name.starts_with('A') {
            assert!(tail <= 1e-4 && share >= 0.9, "{name} is not compact-like");
        } else {
            assert!(share <= 0.8, "{name} concentrates like a compact block");
        }
    }
}

#[test]
fn illumination_is_checked() {
    let ps = space(8, 8);
    let op = TransportOperator::new(ps.clone(), OpticalMedium::vacuum(&ps), 3.0 * ps.grid.diameter, 0.5).unwrap();
    let ones = SpatialField::constant(ps.n_cells(), 1.0);
    let sigma = build_source_trajectory(&op, &ones, &TrajectoryConfig::default()).unwrap();
    assert_eq!(sigma.delta, 1.0);
    let err = build_source_trajectory(&op, &ps.zero_spatial(), &TrajectoryConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Illumination { delta, .. } if delta == 0.0));
    let corner = ps.spatial_from_fn(compact_bump(0.0, 0.0, 0.3));
    let err = build_source_trajectory(&op, &corner, &TrajectoryConfig::default()).unwrap_err();
    let brute = ps.angular_average(&ps.lift_isotropic(&corner)).values.iter().fold(f64::INFINITY, |a, b| a.min(b.abs()));
    match err {
        Error::Illumination { delta, cell, .. } => {
            assert_eq!(delta, brute);
            assert_eq!(corner.values[cell].abs(), brute);
        }
        other => panic!("expected an illumination error, got {other}"),
    }
}

#[test]
fn trajectory_derivative_is_second_order_and_stride_interpolates() {
    let ps = space(4, 8);
    let dt = 0.1;
    let n_nodes = 7;
    let states: Vec<PhaseSpaceField<f64>> =
        (0..n_nodes).map(|k| ps.field_from_fn(|x, _, d| { let t = k as f64 * dt; 1.0 + x + t * d[0] + 2.0 * t * t })).collect();
    let traces = TraceSeries::zeros(n_nodes, ps.layout.len(), dt);
    let sigma = SourceTrajectory::from_states(states, traces, |u| ps.angular_average(u)).unwrap();
    for k in 0..n_nodes {
        let t = k as f64 * dt;
        let expect = ps.field_from_fn(|_, _, d| d[0] + 4.0 * t);
        assert!((&sigma.derivative(k) - &expect).max_abs() <= 1e-12, "node {k}");
    }

    let op = TransportOperator::new(ps.clone(), OpticalMedium::homogeneous(&ps, 0.2, 0.3).unwrap(), 1.0, 0.5).unwrap();
    let w0 = ps.spatial_from_fn(|x, y| 1.0 + x * y);
    let full = build_source_trajectory(&op, &w0, &TrajectoryConfig::default()).unwrap();
    let coarse = build_source_trajectory(&op, &w0, &TrajectoryConfig { stride: 3, ..TrajectoryConfig::default() }).unwrap();
    let last = op.n_nodes() - 1;
    for k in [0, 3, 6, last] {
        assert_eq!(coarse.state(k), full.state(k), "stored node {k}");
    }
    let (a, b) = (full.state(3), full.state(6));
    let mid: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x + (y - x) / 3.0).collect();
    let got = coarse.state(4);
    assert!(got.iter().zip(&mid).all(|(x, y)| (x - y).abs() <= 1e-15));
}

#[test]
fn data_start_from_rest_for_interior_sources() {
    let ps = space(16, 8);
    let op = TransportOperator::new(ps.clone(), OpticalMedium::vacuum(&ps), 1.0, 0.5).unwrap();
    let w = SpatialField::constant(ps.n_cells(), 1.0);
    let state = ps.lift_isotropic(&w);
    let sigma = SourceTrajectory::from_states(vec![state; op.n_nodes()], observe(&ps.zero_field(), &op).unwrap(), |u| ps.angular_average(u)).unwrap();
    let f = ps.spatial_from_fn(compact_bump(0.5, 0.5, 0.25));
    let (m, mdot) = measurement_pipeline(&f, &ps.zero_spatial(), &sigma, &op, TimeDerivative::Centered).unwrap();
    // Nothing reaches the boundary before the support is a cell away from it.
    assert!(mdot.node(0).iter().all(|v| *v == 0.0));
    assert!(m.node(1).iter().all(|v| *v == 0.0));
    // A source touching the boundary cells lights up the first steps at once.
    let g = SpatialField::constant(ps.n_cells(), 1.0);
    let (_, mdot) = measurement_pipeline(&g, &ps.zero_spatial(), &sigma, &op, TimeDerivative::Centered).unwrap();
    assert!(mdot.node(0).iter().any(|v| *v != 0.0));
}

#[test]
fn matching_reference_needs_no_iterations() {
    let ps = space(6, 8);
    let op = TransportOperator::new(ps.clone(), OpticalMedium::homogeneous(&ps, 0.1, 0.1).unwrap(), 3.0 * ps.grid.diameter, 0.5).unwrap();
    let w0 = ps.spatial_from_fn(|x, _| 1.0 + x);
    let measured = observe(&ps.lift_isotropic(&w0), &op).unwrap();
    let res = nonlinear_reconstruct(&measured, &op, &w0, &NonlinearConfig::default()).unwrap();
    assert_eq!(res.iterations, 0);
    assert_eq!(res.misfit, 0.0);
    assert_eq!(res.absorption, op.medium().absorption);
    assert_eq!(res.w0, w0);
}

#[test]
fn nonlinear_loop_recovers_a_small_contrast() {
    let ps = space(8, 8);
    let base = 0.1;
    let mu = ps.spatial_from_fn(|x, y| base * (1.0 + 0.1 * bump(0.55, 0.45, 0.22)(x, y)));
    let w_ref = ps.spatial_from_fn(|x, y| 1.0 + 0.3 * x + 0.2 * y);
    let w_true = ps.spatial_from_fn(|x, y| 1.05 + 0.3 * x + 0.2 * y);
    let medium = OpticalMedium::homogeneous(&ps, base, 0.1).unwrap();
    let reference = TransportOperator::new(ps.clone(), medium.clone(), 3.0 * ps.grid.diameter, 0.5).unwrap();
    let truth = reference.with_medium(medium.with_absorption(mu.clone()).unwrap()).unwrap();
    let measured = observe(&ps.lift_isotropic(&w_true), &truth).unwrap();
    let res = nonlinear_reconstruct(&measured, &reference, &w_ref, &NonlinearConfig::default()).unwrap().into_result().unwrap();
    let contrast = ps.norm_l2(&(&mu - &SpatialField::constant(ps.n_cells(), base)));
    assert!(res.iterations <= 8);
    assert!(ps.norm_l2(&(&res.absorption - &mu)) <= 0.1 * contrast);
    assert!(ps.norm_l2(&(&res.w0 - &w_true)) <= 0.1 * ps.norm_l2(&(&w_true - &w_ref)));
    assert!(res.trace.windows(2).all(|w| !w[1].accepted || w[1].misfit <= w[0].misfit));
}

#[test]
fn probe_skips_zero_rungs_and_reports_ratios() {
    let ps = space(6, 8);
    let op = TransportOperator::new(ps.clone(), OpticalMedium::homogeneous(&ps, 0.1, 0.1).unwrap(), 3.0 * ps.grid.diameter, 0.5).unwrap();
    let w0 = ps.spatial_from_fn(|x, y| 1.0 + 0.3 * x + 0.2 * y);
    let dir = ps.spatial_from_fn(bump(0.5, 0.5, 0.25));
    let rows = stability_probe(&op, &w0, &dir, Perturbation::Absorption, &[0.0, 1e-3, 4e-3, 1.6e-2], &NonlinearConfig::default()).unwrap();
    assert!(rows[0].skipped && rows[0].ratio.is_none());
    assert!(rows[1..].iter().all(|r| !r.skipped && r.ratio.unwrap() > 0.0));
    let spread = ratio_spread(&rows);
    assert!(spread <= 2.0, "{rows:?}");
}

#[test]
fn system_files_round_trip() {
    let ps = space(4, 8);
    let c = case(ps.clone(), OpticalMedium::vacuum(&ps));
    let sys = assemble_fredholm(&c.sigma, &c.op, &c.m, &c.mdot, &AssemblyConfig::default()).unwrap();
    let dir = std::env::temp_dir().join(format!("rtinv-system-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    sys.save(&ps, &dir, "system").unwrap();
    let (m, side) = load_system(&dir, "system").unwrap();
    assert_eq!(m, sys.matrix);
    assert_eq!(side.rhs, sys.rhs.as_slice());
    assert_eq!(side.reports.len(), ps.n_cells());
    assert_eq!((side.grid.nx, side.grid.ny, side.grid.n_dirs), (4, 4, 8));
    std::fs::remove_dir_all(&dir).unwrap();
}
