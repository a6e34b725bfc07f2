use std::fs;
use std::path::{Path, PathBuf};

use rtinv::reconstruction::NonlinearStatus;
use rtinv::{
    assemble_fredholm, build_source_trajectory, control_solve, forward_solve, measurement_pipeline,
    nonlinear_reconstruct, observe, smallness_condition, solve_linear_inverse, stability_probe, PhaseSpace64,
    Series64, Spatial64,
};

use crate::acceptance;
use crate::error::{HarnessError, Result};
use crate::export::{write_series, write_spatial};
use crate::manifest::RunManifest;
use crate::noise::{inject_noise, smooth_in_time};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Control,
    InvertLinear,
    InvertNonlinear,
    Validate,
    ConditionCheck,
    StabilityProbe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Control => "control",
            Command::InvertLinear => "invert-linear",
            Command::InvertNonlinear => "invert-nonlinear",
            Command::Validate => "validate",
            Command::ConditionCheck => "condition-check",
            Command::StabilityProbe => "stability-probe",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Output directory; falls back to the scenario's, then `runs/<name>/<subcommand>`.
    pub out: Option<PathBuf>,
    pub quiet: bool,
    /// Criteria run by `validate`.
    pub criteria: Vec<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { out: None, quiet: true, criteria: acceptance::ALL.to_vec() }
    }
}

struct Run<'a> {
    scenario: &'a Scenario,
    dir: PathBuf,
    manifest: RunManifest,
    quiet: bool,
}

impl Run<'_> {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn path(&mut self, file: &str) -> PathBuf {
        self.manifest.outputs.push(file.to_string());
        self.dir.join(file)
    }

    fn spatial(&mut self, file: &str, space: &PhaseSpace64, f: &Spatial64) -> Result<()> {
        let p = self.path(file);
        write_spatial(&p, space, f)
    }

    fn series(&mut self, file: &str, space: &PhaseSpace64, s: &Series64) -> Result<()> {
        let p = self.path(file);
        write_series(&p, space, s)
    }

    /// Adds the scenario's noise to `m` (and smooths it when asked), recording the realized level.
    fn noisy(&mut self, space: &PhaseSpace64, m: &Series64) -> Series64 {
        let spec = &self.scenario.noise;
        if spec.amplitude == 0.0 {
            return m.clone();
        }
        let noisy = inject_noise(space, m, spec.amplitude, spec.seed.expect("validated: seed present"));
        let mut diff = noisy.clone();
        diff.axpy(-1.0, m);
        let norm = space.norm_series(m);
        self.manifest.diagnostics.noise_level = Some(if norm > 0.0 { space.norm_series(&diff) / norm } else { 0.0 });
        match spec.smoothing {
            Some(b) => smooth_in_time(&noisy, b),
            None => noisy,
        }
    }

    fn finish(self) -> Result<RunManifest> {
        self.manifest.write(&self.dir)?;
        Ok(self.manifest)
    }
}

/// Relative error `||a - b|| / ||b||`, or the absolute norm when `b` vanishes.
fn error(space: &PhaseSpace64, a: &Spatial64, b: &Spatial64) -> f64 {
    let d = space.norm_l2(&(a - b));
    let n = space.norm_l2(b);
    if n > 0.0 { d / n } else { d }
}

/// Runs one subcommand and writes its manifest into the output directory.
pub fn execute(cmd: Command, scenario: &Scenario, opts: &RunOptions) -> Result<RunManifest> {
    let dir = opts
        .out
        .clone()
        .or_else(|| scenario.output.clone())
        .unwrap_or_else(|| Path::new("runs").join(&scenario.name).join(cmd.name()));
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let manifest = RunManifest::new(cmd.name(), scenario, rayon::current_num_threads());
    let mut run = Run { scenario, dir, manifest, quiet: opts.quiet };
    match cmd {
        Command::Simulate => simulate(&mut run)?,
        Command::Control => control(&mut run)?,
        Command::ConditionCheck => return condition_check(run),
        Command::InvertLinear => invert_linear(&mut run)?,
        Command::InvertNonlinear => return invert_nonlinear(run),
        Command::StabilityProbe => probe(&mut run)?,
        Command::Validate => return validate(run, &opts.criteria),
    }
    run.finish()
}

fn simulate(run: &mut Run) -> Result<()> {
    let s = run.scenario.setup()?;
    let ps = s.space.clone();
    run.manifest.diagnostics.smallness_true = Some(smallness_condition(s.truth.medium(), &ps.grid));
    let out = run.manifest.time("forward", || forward_solve(&s.truth, &ps.lift_isotropic(&s.w0), None, false))?;
    let traces = run.noisy(&ps, &out.traces);
    run.series("traces.csv", &ps, &traces)?;
    run.spatial("absorption.csv", &ps, &s.truth.medium().absorption)?;
    run.spatial("w0.csv", &ps, &s.w0)?;
    run.say(format!(
        "simulated {} steps of dt {:.4e} on {}x{}x{}; {} outflow pairs",
        s.truth.n_steps(),
        s.truth.dt(),
        ps.grid.nx,
        ps.grid.ny,
        ps.n_dirs(),
        ps.layout.len()
    ));
    Ok(())
}

fn control(run: &mut Run) -> Result<()> {
    let s = run.scenario.setup()?;
    let ps = s.space.clone();
    let target = ps.lift_isotropic(&s.w0);
    let sol = run.manifest.time("control", || control_solve(&target, &s.truth, &run.scenario.control))?;
    let d = &mut run.manifest.diagnostics;
    d.steering_residual = Some(sol.report.residual);
    d.control_iterations = Some(sol.report.iterations);
    d.control_epsilon = Some(sol.report.epsilon);
    d.smallness_true = Some(smallness_condition(s.truth.medium(), &ps.grid));
    run.series("control.csv", &ps, &sol.eta)?;
    run.say(format!(
        "steering residual {:.3e} after {} iterations (epsilon {:.3e}, control norm {:.3e})",
        sol.report.residual, sol.report.iterations, sol.report.epsilon, sol.report.control_norm
    ));
    Ok(())
}

fn condition_check(mut run: Run) -> Result<RunManifest> {
    let s = run.scenario.setup()?;
    let grid = &s.space.grid;
    let truth = smallness_condition(s.truth.medium(), grid);
    let reference = smallness_condition(s.reference.medium(), grid);
    run.manifest.diagnostics.smallness_true = Some(truth);
    run.manifest.diagnostics.smallness_reference = Some(reference);
    run.say(format!("smallness value {} satisfied={}", truth.value, truth.satisfied));
    run.say(format!("reference smallness value {} satisfied={}", reference.value, reference.satisfied));
    let traj = run.scenario.reconstruction.trajectory.clone();
    match run.manifest.time("trajectory", || build_source_trajectory(&s.reference, &s.w0_guess, &traj)) {
        Ok(sigma) => {
            run.manifest.diagnostics.delta = Some(sigma.delta);
            run.say(format!("illumination delta {:.4e} at cell {}", sigma.delta, sigma.worst_cell));
            run.finish()
        }
        Err(e) => {
            if let rtinv::Error::Illumination { delta, .. } = e {
                run.manifest.diagnostics.delta = Some(delta);
            }
            run.say(format!("illumination check failed: {e}"));
            run.manifest.write(&run.dir)?;
            Err(e.into())
        }
    }
}

fn invert_linear(run: &mut Run) -> Result<()> {
    let sc = run.scenario;
    let s = sc.setup()?;
    let ps = s.space.clone();
    let cfg = &sc.reconstruction;
    let sigma = run.manifest.time("trajectory", || build_source_trajectory(&s.reference, &s.w0_guess, &cfg.trajectory))?;
    run.manifest.diagnostics.delta = Some(sigma.delta);
    // Synthetic linear data when a truth is given; otherwise the outflow difference
    // between the true and the reference experiment, whose linearized unknowns are
    // f = mu~_a - mu_a and u0 = w0 - w~0.
    let (f_true, u_true, clean) = match &sc.linear {
        Some(l) => {
            let (f, u0) = (sc.field(&ps, &l.f), sc.field(&ps, &l.u0));
            let (m, _) = run.manifest.time("data", || measurement_pipeline(&f, &u0, &sigma, &s.reference, cfg.assembly.derivative))?;
            (f, u0, m)
        }
        None => {
            let mut m = run.manifest.time("data", || observe(&ps.lift_isotropic(&s.w0), &s.truth))?;
            m.axpy(-1.0, &sigma.traces);
            (&s.reference.medium().absorption - &s.truth.medium().absorption, &s.w0 - &s.w0_guess, m)
        }
    };
    let m = run.noisy(&ps, &clean);
    let mdot = cfg.assembly.derivative.apply(&m)?;
    let system = run.manifest.time("assembly", || assemble_fredholm(&sigma, &s.reference, &m, &mdot, &cfg.assembly))?;
    let stem = "system";
    system.save(&ps, &run.dir, stem)?;
    run.manifest.outputs.push(format!("{stem}.bin"));
    run.manifest.outputs.push(format!("{stem}.json"));
    let res = run.manifest.time("solve", || solve_linear_inverse(&system, &cfg.solve))?;
    run.manifest.timings.insert("controls".into(), system.timings.controls_s);
    run.manifest.timings.insert("rows".into(), system.timings.rows_s);
    run.manifest.timings.insert("conditioning".into(), system.timings.conditioning_s);
    let d = &mut run.manifest.diagnostics;
    d.condition = Some(res.condition);
    d.regularized = Some(res.regularized);
    d.system_residual = Some(res.residual);
    d.max_row_residual = Some(system.max_row_residual());
    d.flagged_rows = Some(system.flagged.len());
    d.error_f = Some(error(&ps, &res.f, &f_true));
    d.error_u0 = Some(error(&ps, &res.u0, &u_true));
    run.spatial("f.csv", &ps, &res.f)?;
    run.spatial("u0.csv", &ps, &res.u0)?;
    run.say(format!(
        "condition {:.3e} (regularized {}), residual {:.3e}; error f {:.3e}, u0 {:.3e}",
        res.condition,
        res.regularized,
        res.residual,
        run.manifest.diagnostics.error_f.unwrap_or(f64::NAN),
        run.manifest.diagnostics.error_u0.unwrap_or(f64::NAN)
    ));
    Ok(())
}

fn invert_nonlinear(mut run: Run) -> Result<RunManifest> {
    let sc = run.scenario;
    let s = sc.setup()?;
    let ps = s.space.clone();
    let clean = run.manifest.time("data", || observe(&ps.lift_isotropic(&s.w0), &s.truth))?;
    let measured = run.noisy(&ps, &clean);
    let d = &mut run.manifest.diagnostics;
    d.smallness_true = Some(smallness_condition(s.truth.medium(), &ps.grid));
    d.smallness_reference = Some(smallness_condition(s.reference.medium(), &ps.grid));
    let res = run.manifest.time("outer", || nonlinear_reconstruct(&measured, &s.reference, &s.w0_guess, &sc.reconstruction))?;
    let mu_true = &s.truth.medium().absorption;
    let mu_ref = &s.reference.medium().absorption;
    let contrast = ps.norm_l2(&(mu_true - mu_ref));
    let offset = ps.norm_l2(&(&s.w0 - &s.w0_guess));
    let scaled = |e: f64, by: f64| if by > 0.0 { e / by } else { e };
    let d = &mut run.manifest.diagnostics;
    d.error_absorption = Some(scaled(ps.norm_l2(&(&res.absorption - mu_true)), contrast));
    d.error_w0 = Some(scaled(ps.norm_l2(&(&res.w0 - &s.w0)), offset));
    d.misfit = Some(res.misfit);
    d.iterations = Some(res.iterations);
    d.status = Some(format!("{:?}", res.status).to_lowercase());
    if let Some(last) = res.trace.iter().rev().find(|r| r.iteration > 0) {
        d.condition = Some(last.condition);
        d.regularized = Some(last.regularized);
    }
    run.spatial("absorption.csv", &ps, &res.absorption)?;
    run.spatial("w0.csv", &ps, &res.w0)?;
    let p = run.path("iterations.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|source| HarnessError::Csv { path: p.clone(), source })?;
    for r in &res.trace {
        w.serialize(r).map_err(|source| HarnessError::Csv { path: p.clone(), source })?;
    }
    w.flush().map_err(|e| HarnessError::io(&p, e))?;
    run.say(format!(
        "{:?} after {} iterations, misfit {:.3e}; absorption error {:.3e} of the contrast, w0 error {:.3e} of the offset",
        res.status,
        res.iterations,
        res.misfit,
        run.manifest.diagnostics.error_absorption.unwrap_or(f64::NAN),
        run.manifest.diagnostics.error_w0.unwrap_or(f64::NAN)
    ));
    let status = res.status;
    let manifest = run.finish()?;
    if status == NonlinearStatus::Diverged {
        return Err(rtinv::Error::Divergence { iterations: res.iterations, misfit: res.misfit }.into());
    }
    Ok(manifest)
}

fn probe(run: &mut Run) -> Result<()> {
    let sc = run.scenario;
    let spec = sc.probe.as_ref().ok_or_else(|| HarnessError::scenario("stability-probe needs a `probe` section"))?;
    let s = sc.setup()?;
    let ps = s.space.clone();
    let direction = sc.field(&ps, &spec.direction);
    let rows = run
        .manifest
        .time("probe", || stability_probe(&s.reference, &s.w0_guess, &direction, spec.kind, &spec.ladder, &sc.reconstruction))?;
    let spread = rtinv::reconstruction::ratio_spread(&rows);
    run.manifest.diagnostics.stability_spread = Some(spread);
    let p = run.path("probe.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|source| HarnessError::Csv { path: p.clone(), source })?;
    for r in &rows {
        w.serialize(r).map_err(|source| HarnessError::Csv { path: p.clone(), source })?;
        run.say(match r.ratio {
            Some(c) => format!("amplitude {:.3e}: size {:.3e}, data change {:.3e}, ratio {c:.4e}", r.amplitude, r.size, r.measurement_difference),
            None => format!("amplitude {:.3e}: skipped", r.amplitude),
        });
    }
    w.flush().map_err(|e| HarnessError::io(&p, e))?;
    run.say(format!("ratio spread {spread:.3}"));
    Ok(())
}

fn validate(mut run: Run, criteria: &[usize]) -> Result<RunManifest> {
    let quiet = run.quiet;
    let outcomes = acceptance::run(run.scenario, criteria, |o| {
        if !quiet {
            println!("{}", o.line());
        }
    })?;
    for o in &outcomes {
        run.manifest.timings.insert(format!("criterion_{}", o.id), o.seconds);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    let total = outcomes.len();
    // Per-criterion wall time lives in `timings`, keeping the diagnostics reproducible.
    let mut stripped = outcomes;
    stripped.iter_mut().for_each(|o| o.seconds = 0.0);
    run.manifest.diagnostics.criteria = Some(stripped);
    let manifest = run.finish()?;
    if failed > 0 {
        return Err(HarnessError::Acceptance { failed, total });
    }
    Ok(manifest)
}
