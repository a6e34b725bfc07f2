use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtinv::transport::{apply_scattering, forward_solve, observe, observe_transpose, green_terms};
use rtinv::{
    build_phase_space, characteristics_oracle, OpticalMedium, PhaseSpace, PhaseSpaceConfig, PhaseSpaceField,
    ScatteringKernel, SpatialField, TraceSeries, TransportOperator,
};

fn space(n: usize, dirs: usize) -> Arc<PhaseSpace<f64>> {
    Arc::new(build_phase_space(&PhaseSpaceConfig::unit_square(n, dirs)).unwrap())
}

fn random_field(ps: &PhaseSpace<f64>, rng: &mut ChaCha8Rng) -> PhaseSpaceField<f64> {
    PhaseSpaceField { values: (0..ps.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}

fn random_series(op: &TransportOperator<f64>, rng: &mut ChaCha8Rng) -> TraceSeries<f64> {
    let mut s = TraceSeries::zeros(op.n_nodes(), op.space().layout.len(), op.dt());
    s.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    s
}

fn bump(cx: f64, cy: f64, w: f64) -> impl Fn(f64, f64, [f64; 2]) -> f64 {
    move |x, y, _| {
        let r2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (w * w);
        if r2 < 1.0 {
            (std::f64::consts::FRAC_PI_2 * r2.sqrt()).cos().powi(4)
        } else {
            0.0
        }
    }
}

fn dot_test(op: &TransportOperator<f64>, seed: u64, pairs: usize) -> f64 {
    let ps = op.space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let u0 = random_field(ps, &mut rng);
        let eta = random_series(op, &mut rng);
        let lhs = ps.inner_series(&observe(&u0, op).unwrap(), &eta);
        let rhs = ps.inner_v0(&u0, &observe_transpose(&eta, op, None).unwrap());
        let scale = ps.norm_v0(&u0) * ps.norm_series(&eta);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    worst
}

#[test]
fn adjoint_dot_test_vacuum_and_scattering() {
    let ps = space(12, 16);
    let vac = TransportOperator::new(ps.clone(), OpticalMedium::vacuum(&ps), 1.5, 0.5).unwrap();
    assert!(dot_test(&vac, 1, 5) <= 1e-12);
    let n = ps.n_cells();
    let medium = OpticalMedium::new(
        ps.spatial_from_fn(|x, y| 0.2 + 0.3 * x * y),
        ps.spatial_from_fn(|x, _| 0.5 + x),
        ScatteringKernel::henyey_greenstein(&ps.quad, 0.6).unwrap(),
    )
    .unwrap();
    assert_eq!(medium.absorption.len(), n);
    let op = TransportOperator::new(ps.clone(), medium, 1.5, 0.5).unwrap();
    assert!(dot_test(&op, 2, 5) <= 1e-12);
}

#[test]
fn zero_data_gives_zero_output() {
    let ps = space(8, 8);
    let op = TransportOperator::new(ps.clone(), OpticalMedium::homogeneous(&ps, 0.1, 0.2).unwrap(), 1.0, 0.5).unwrap();
    let out = forward_solve(&op, &ps.zero_field(), None, true).unwrap();
    assert!(out.traces.values.iter().all(|v| *v == 0.0));
    assert!(out.trajectory.unwrap().iter().all(|u| u.max_abs() == 0.0));
    let eta = TraceSeries::zeros(op.n_nodes(), ps.layout.len(), op.dt());
    assert_eq!(observe_transpose(&eta, &op, None).unwrap().max_abs(), 0.0);
}

#[test]
fn observation_is_linear() {
    let ps = space(10, 8);
    let op = TransportOperator::new(ps.clone(), OpticalMedium::homogeneous(&ps, 0.3, 0.4).unwrap(), 1.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_field(&ps, &mut rng);
    let b = random_field(&ps, &mut rng);
    let sum = observe(&(&a + &b), &op).unwrap();
    let mut parts = observe(&a, &op).unwrap();
    parts.axpy(1.0, &observe(&b, &op).unwrap());
    for (x, y) in sum.values.iter().zip(&parts.values) {
        assert!((x - y).abs() <= 1e-14 * (1.0 + x.abs()));
    }
}

#[test]
fn constant_absorption_commutes_with_streaming() {
    // S_a = S_0 - dt a I with commuting terms, so
    // u_a(n) = sum_j C(n, j) (-dt a)^(n - j) u_0(j) holds exactly;
    // the continuous factor e^(-a t) is reached at first order in dt.
    let ps = space(16, 8);
    let a = 0.7;
    let vac = TransportOperator::new(ps.clone(), OpticalMedium::vacuum(&ps), 0.5, 0.5).unwrap();
    let abs = vac.with_medium(OpticalMedium::homogeneous(&ps, a, 0.0).unwrap()).unwrap();
    let u0 = ps.field_from_fn(|x, y, d| bump(0.5, 0.5, 0.3)(x, y, d) * (1.0 + 0.5 * d[0]));
    let uv = forward_solve(&vac, &u0, None, true).unwrap().trajectory.unwrap();
    let ua = forward_solve(&abs, &u0, None, true).unwrap().trajectory.unwrap();
    let c = -vac.dt() * a;
    for n in [1, 7, uv.len() - 1] {
        let mut expect = ps.zero_field();
        let mut binom = 1.0;
        for j in 0..=n {
            expect.axpy(binom * c.powi((n - j) as i32), &uv[j]);
            binom = binom * (n - j) as f64 / (j + 1) as f64;
        }
        let diff = (&expect - &ua[n]).max_abs();
        assert!(diff <= 1e-13 * uv[n].max_abs().max(1.0), "step {n}: {diff}");
    }
    let t = vac.tau();
    let err = (&uv.last().unwrap().scaled((-a * t).exp()) - ua.last().unwrap()).max_abs();
    assert!(err <= 4.0 * a * vac.dt() * uv.last().unwrap().max_abs());
}

#[test]
fn maximum_principle_and_mass_dissipation() {
    let ps = space(16, 16);
    let medium = OpticalMedium::new(
        SpatialField::zeros(ps.n_cells()),
        ps.spatial_from_fn(|x, y| 1.0 + 2.0 * x * y),
        ScatteringKernel::henyey_greenstein(&ps.quad, 0.8).unwrap(),
    )
    .unwrap();
    let op = TransportOperator::new(ps.clone(), medium, 2.0, 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u0 = PhaseSpaceField { values: (0..ps.n_dofs()).map(|_| rng.gen_range(0.0..1.0)).collect() };
    let traj = forward_solve(&op, &u0, None, true).unwrap().trajectory.unwrap();
    let one = ps.field_from_fn(|_, _, _| 1.0);
    let mut prev = f64::INFINITY;
    for u in &traj {
        assert!(u.values.iter().all(|v| *v >= 0.0));
        let mass = ps.inner_v0(u, &one);
        assert!(mass <= prev * (1.0 + 1e-14));
        prev = mass;
    }
}

#[test]
fn scattering_preserves_isotropic_fields_and_pairs() {
    let ps = space(6, 16);
    let medium = OpticalMedium::new(
        SpatialField::zeros(ps.n_cells()),
        SpatialField::constant(ps.n_cells(), 1.0),
        ScatteringKernel::henyey_greenstein(&ps.quad, 0.3).unwrap(),
    )
    .unwrap();
    assert!(medium.kernel.conservativity_error() <= 1e-14);
    let iso = ps.lift_isotropic(&ps.spatial_from_fn(|x, y| x - 2.0 * y));
    assert_eq!(apply_scattering(&ps, &iso, &medium, false).values.len(), iso.values.len());
    for (a, b) in apply_scattering(&ps, &iso, &medium, false).values.iter().zip(&iso.values) {
        assert!((a - b).abs() <= 1e-14);
    }
}

#[test]
fn green_identity_random_pairs() {
    let ps = space(16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let u = random_field(&ps, &mut rng);
        let v = random_field(&ps, &mut rng);
        assert!(green_terms(&ps, &u, &u).relative() <= 1e-12);
        assert!(green_terms(&ps, &u, &v).relative() <= 1e-12);
    }
}

fn vacuum_error(n: usize, t: f64) -> f64 {
    let ps = space(n, 16);
    let h = 1.0 / n as f64;
    let dt0 = 0.5 / (2.0 / h);
    let steps = (t / dt0).ceil() as usize;
    let op = TransportOperator::with_steps(ps.clone(), OpticalMedium::vacuum(&ps), t, steps).unwrap();
    let u0 = bump(0.4, 0.5, 0.4);
    let out = forward_solve(&op, &ps.field_from_fn(&u0), None, false).unwrap();
    let exact = characteristics_oracle(&u0, t, &ps);
    ps.norm_v0(&(&out.final_state - &exact))
}

#[test]
fn vacuum_convergence_is_first_order() {
    let start = Instant::now();
    let e: Vec<f64> = [16, 32, 64].iter().map(|n| vacuum_error(*n, 0.15)).collect();
    let o1 = (e[0] / e[1]).log2();
    let o2 = (e[1] / e[2]).log2();
    println!("vacuum errors {e:?}, orders {o1:.3} {o2:.3}, {:?}", start.elapsed());
    assert!((o1 - 1.0).abs() <= 0.3 && (o2 - 1.0).abs() <= 0.3);
}

#[test]
fn sweep_timing_report() {
    for (n, dirs) in [(16, 16), (32, 16)] {
        let ps = space(n, dirs);
        let medium = OpticalMedium::homogeneous(&ps, 0.1, 0.1).unwrap();
        let op = TransportOperator::new(ps.clone(), medium, 3.0 * ps.grid.diameter, 0.5).unwrap();
        let u0 = ps.field_from_fn(|x, y, _| x * y);
        let start = Instant::now();
        let m = observe(&u0, &op).unwrap();
        let fwd = start.elapsed();
        let start = Instant::now();
        observe_transpose(&m, &op, None).unwrap();
        println!("{n}x{n}x{dirs}: {} steps, forward {fwd:?}, adjoint {:?}", op.n_steps(), start.elapsed());
    }
}
