//! JSON scenarios: geometry, media, initial states and solver settings, with
//! spatial inputs drawn from a small profile library.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rtinv::reconstruction::Perturbation;
use rtinv::{
    build_phase_space, ControlConfig, NonlinearConfig, OpticalMedium, Operator64, PhaseSpace64, PhaseSpaceConfig,
    ScatteringKernel, Spatial64, TransportOperator,
};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// A spatial function built from the library shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `value + gradient . (x, y)`.
    Affine { value: f64, gradient: [f64; 2] },
    /// `amplitude exp(-|x - center|^2 / width^2)`.
    Gaussian {
        center: [f64; 2],
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude cos^2(pi r / (2 radius))` inside `radius`, zero outside.
    CosineBump {
        center: [f64; 2],
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Sum { terms: Vec<ProfileRef> },
}

fn one() -> f64 {
    1.0
}

/// Either a profile written in place or the name of an entry in `profiles`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Named(String),
    Inline(Box<Profile>),
}

impl From<Profile> for ProfileRef {
    fn from(p: Profile) -> Self {
        ProfileRef::Inline(Box::new(p))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Isotropic,
    HenyeyGreenstein { g: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Isotropic
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    /// Horizon in units of the domain diameter.
    pub tau_factor: f64,
    pub cfl: f64,
}

impl Default for TimeSpec {
    fn default() -> Self {
        Self { tau_factor: 3.0, cfl: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSpec {
    pub absorption: ProfileRef,
    #[serde(default = "zero_profile")]
    pub scattering: ProfileRef,
    #[serde(default)]
    pub kernel: KernelSpec,
}

fn zero_profile() -> ProfileRef {
    Profile::Constant { value: 0.0 }.into()
}

/// The model the reconstruction starts from; scattering is shared with the true medium.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    /// Starting absorption guess; the true absorption when absent.
    pub absorption: Option<ProfileRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// True initial state of the measured experiment.
    pub w0: ProfileRef,
    /// Starting guess; the true state when absent.
    pub w0_guess: Option<ProfileRef>,
}

/// Synthetic truth for the linear problem, in the solver's source convention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub f: ProfileRef,
    pub u0: ProfileRef,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Relative trace-norm amplitude of the added perturbation.
    pub amplitude: f64,
    pub seed: Option<u64>,
    /// Standard deviation, in time units, of the Gaussian smoothing applied to noisy data.
    pub smoothing: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub kind: Perturbation,
    pub direction: ProfileRef,
    pub ladder: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub geometry: PhaseSpaceConfig,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub profiles: BTreeMap<String, Profile>,
    pub medium: MediumSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub linear: Option<LinearSpec>,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub reconstruction: NonlinearConfig,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub probe: Option<ProbeSpec>,
    /// Output directory used when `--out` is not given.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Command-line overrides applied on top of a parsed scenario.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub tau_factor: Option<f64>,
}

/// Everything a run needs, built from a validated scenario.
#[derive(Clone, Debug)]
pub struct Setup {
    pub space: Arc<PhaseSpace64>,
    /// Operator with the true medium.
    pub truth: Operator64,
    /// Operator with the reference absorption and the true scattering.
    pub reference: Operator64,
    pub w0: Spatial64,
    pub w0_guess: Spatial64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut s: Scenario = serde_json::from_str(text).map_err(|e| HarnessError::scenario(e.to_string()))?;
        s.sync_horizon();
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Scenario(m) => HarnessError::scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.noise.seed = Some(seed);
        }
        if let Some(eps) = o.epsilon {
            self.control.epsilon_rel = eps;
            self.reconstruction.assembly.control.epsilon_rel = eps;
        }
        if let Some(t) = o.tau_factor {
            self.time.tau_factor = t;
        }
        self.sync_horizon();
        self.validate()
    }

    /// The horizon lives in `time`; the control configs carry a copy.
    fn sync_horizon(&mut self) {
        self.control.tau_factor = self.time.tau_factor;
        self.reconstruction.assembly.control.tau_factor = self.time.tau_factor;
    }

    pub fn validate(&self) -> Result<()> {
        build_phase_space::<f64>(&self.geometry)?;
        if !(self.time.tau_factor.is_finite() && self.time.tau_factor >= 1.0) {
            return Err(HarnessError::scenario(format!("time.tau_factor must be >= 1, got {}", self.time.tau_factor)));
        }
        if !(self.time.cfl > 0.0 && self.time.cfl <= 1.0) {
            return Err(HarnessError::scenario(format!("time.cfl must lie in (0, 1], got {}", self.time.cfl)));
        }
        for (name, p) in &self.profiles {
            self.check_profile(p, &mut BTreeSet::from([name.clone()]))
                .map_err(|e| HarnessError::scenario(format!("profile `{name}`: {e}")))?;
        }
        let mut refs: Vec<(&str, &ProfileRef)> = vec![
            ("medium.absorption", &self.medium.absorption),
            ("medium.scattering", &self.medium.scattering),
            ("initial.w0", &self.initial.w0),
        ];
        if let Some(r) = &self.reference.absorption {
            refs.push(("reference.absorption", r));
        }
        if let Some(r) = &self.initial.w0_guess {
            refs.push(("initial.w0_guess", r));
        }
        if let Some(l) = &self.linear {
            refs.push(("linear.f", &l.f));
            refs.push(("linear.u0", &l.u0));
        }
        if let Some(p) = &self.probe {
            refs.push(("probe.direction", &p.direction));
            if p.ladder.iter().any(|a| !a.is_finite()) {
                return Err(HarnessError::scenario("probe.ladder entries must be finite"));
            }
        }
        for (key, r) in refs {
            self.check_ref(r, &mut BTreeSet::new()).map_err(|e| HarnessError::scenario(format!("{key}: {e}")))?;
        }
        if let KernelSpec::HenyeyGreenstein { g } = self.medium.kernel {
            if !(g.abs() < 1.0) {
                return Err(HarnessError::scenario(format!("medium.kernel.g must lie in (-1, 1), got {g}")));
            }
        }
        let n = &self.noise;
        if !(n.amplitude.is_finite() && n.amplitude >= 0.0) {
            return Err(HarnessError::scenario(format!("noise.amplitude must be finite and >= 0, got {}", n.amplitude)));
        }
        if n.amplitude > 0.0 && n.seed.is_none() {
            return Err(HarnessError::scenario("noise.seed is required when noise.amplitude > 0"));
        }
        if let Some(s) = n.smoothing {
            if !(s.is_finite() && s > 0.0) {
                return Err(HarnessError::scenario("noise.smoothing must be positive when given"));
            }
        }
        self.control.validate()?;
        self.reconstruction.validate()?;
        Ok(())
    }

    fn check_ref(&self, r: &ProfileRef, stack: &mut BTreeSet<String>) -> Result<(), String> {
        match r {
            ProfileRef::Named(name) => {
                let p = self.profiles.get(name).ok_or_else(|| format!("undefined profile `{name}`"))?;
                if !stack.insert(name.clone()) {
                    return Err(format!("profile `{name}` refers to itself"));
                }
                self.check_profile(p, stack)?;
                stack.remove(name);
                Ok(())
            }
            ProfileRef::Inline(p) => self.check_profile(p, stack),
        }
    }

    fn check_profile(&self, p: &Profile, stack: &mut BTreeSet<String>) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match p {
            Profile::Constant { value } if !value.is_finite() => Err("constant must be finite".into()),
            Profile::Affine { value, gradient } if !finite(&[*value, gradient[0], gradient[1]]) => {
                Err("affine coefficients must be finite".into())
            }
            Profile::Gaussian { center, width, amplitude } => {
                if !(finite(&[center[0], center[1], *amplitude]) && *width > 0.0 && width.is_finite()) {
                    return Err("gaussian needs a finite center and amplitude and a positive width".into());
                }
                Ok(())
            }
            Profile::CosineBump { center, radius, amplitude } => {
                if !(finite(&[center[0], center[1], *amplitude]) && *radius > 0.0 && radius.is_finite()) {
                    return Err("cosine_bump needs a finite center and amplitude and a positive radius".into());
                }
                Ok(())
            }
            Profile::Sum { terms } => terms.iter().try_for_each(|t| self.check_ref(t, stack)),
            _ => Ok(()),
        }
    }

    fn eval_ref(&self, r: &ProfileRef, x: f64, y: f64) -> f64 {
        match r {
            ProfileRef::Named(name) => self.eval(&self.profiles[name], x, y),
            ProfileRef::Inline(p) => self.eval(p, x, y),
        }
    }

    fn eval(&self, p: &Profile, x: f64, y: f64) -> f64 {
        match p {
            Profile::Constant { value } => *value,
            Profile::Affine { value, gradient } => value + gradient[0] * x + gradient[1] * y,
            Profile::Gaussian { center, width, amplitude } => {
                amplitude * (-((x - center[0]).powi(2) + (y - center[1]).powi(2)) / (width * width)).exp()
            }
            Profile::CosineBump { center, radius, amplitude } => {
                let s = ((x - center[0]).powi(2) + (y - center[1]).powi(2)).sqrt() / radius;
                if s < 1.0 {
                    amplitude * (std::f64::consts::FRAC_PI_2 * s).cos().powi(2)
                } else {
                    0.0
                }
            }
            Profile::Sum { terms } => terms.iter().map(|t| self.eval_ref(t, x, y)).sum(),
        }
    }

    /// Samples a validated profile at the cell centres.
    pub fn field(&self, space: &PhaseSpace64, r: &ProfileRef) -> Spatial64 {
        space.spatial_from_fn(|x, y| self.eval_ref(r, x, y))
    }

    pub fn phase_space(&self) -> Result<Arc<PhaseSpace64>> {
        Ok(Arc::new(build_phase_space(&self.geometry)?))
    }

    pub fn medium(&self, space: &PhaseSpace64, absorption: &ProfileRef) -> Result<OpticalMedium<f64>> {
        let kernel = match self.medium.kernel {
            KernelSpec::Isotropic => ScatteringKernel::isotropic(&space.quad),
            KernelSpec::HenyeyGreenstein { g } => ScatteringKernel::henyey_greenstein(&space.quad, g)?,
        };
        Ok(OpticalMedium::new(self.field(space, absorption), self.field(space, &self.medium.scattering), kernel)?)
    }

    pub fn operator(&self, space: &Arc<PhaseSpace64>, medium: OpticalMedium<f64>) -> Result<Operator64> {
        let tau = self.time.tau_factor * space.grid.diameter;
        Ok(TransportOperator::new(space.clone(), medium, tau, self.time.cfl)?)
    }

    pub fn setup(&self) -> Result<Setup> {
        let space = self.phase_space()?;
        let truth = self.operator(&space, self.medium(&space, &self.medium.absorption)?)?;
        let reference_abs = self.reference.absorption.as_ref().unwrap_or(&self.medium.absorption);
        let reference = truth.with_medium(self.medium(&space, reference_abs)?)?;
        let w0 = self.field(&space, &self.initial.w0);
        let w0_guess = self.field(&space, self.initial.w0_guess.as_ref().unwrap_or(&self.initial.w0));
        Ok(Setup { space, truth, reference, w0, w0_guess })
    }
}
