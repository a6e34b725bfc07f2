//! Discrete-ordinates toolkit for transient radiative transport on a
//! rectangle: forward/adjoint solvers, minimum-norm outflow controls, and
//! reconstruction of an absorption contrast together with an unknown
//! isotropic initial state from a single outflow measurement.
//!
//! Everything numerical is generic over a [`Real`] scalar (`f32` or `f64`);
//! the `*64` aliases at the bottom of this file are what the harness uses.

pub mod controllability;
pub mod error;
pub mod phase_space;
pub mod reconstruction;
pub mod transport;

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use controllability::{
    control_solve, gramian_apply, smallness_condition, solution_operator, ControlConfig,
    ControlReport, ControlSolution, Gramian, Smallness,
};
pub use error::{Error, Result};
pub use phase_space::{
    build_phase_space, AngularQuadrature, BoundaryTrace, PhaseSpace, PhaseSpaceConfig,
    PhaseSpaceField, SpatialField, SpatialGrid, TraceLayout, TraceSeries,
};
pub use reconstruction::{
    assemble_fredholm, build_source_trajectory, nonlinear_reconstruct, solve_linear_inverse,
    stability_probe, AssemblyConfig, FredholmSystem, NonlinearConfig, NonlinearResult,
    ReconstructionResult, RowModel, SolveConfig, SourceTrajectory, StabilityRow,
};
pub use transport::{
    characteristics_oracle, discrete_green_residual, forward_solve, measurement_pipeline, observe,
    observe_transpose, OpticalMedium, ScatteringKernel, TimeDerivative, TraceSide,
    TransportOperator,
};

/// Version of this crate, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Scalar type for every field and operator in the crate.
///
/// Arithmetic and elementary functions come from [`nalgebra::RealField`]
/// (needed anyway for the dense solves); conversions come from num-traits.
pub trait Real:
    nalgebra::RealField
    + Copy
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + Sum
    + Debug
    + Display
    + LowerExp
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("f64 literal fits the scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }

    /// Machine epsilon of the scalar.
    fn eps() -> Self;
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

pub type Grid64 = SpatialGrid<f64>;
pub type Quadrature64 = AngularQuadrature<f64>;
pub type PhaseSpace64 = PhaseSpace<f64>;
pub type Field64 = PhaseSpaceField<f64>;
pub type Spatial64 = SpatialField<f64>;
pub type Trace64 = BoundaryTrace<f64>;
pub type Series64 = TraceSeries<f64>;
pub type Medium64 = OpticalMedium<f64>;
pub type Operator64 = TransportOperator<f64>;
pub type Trajectory64 = SourceTrajectory<f64>;
pub type System64 = FredholmSystem<f64>;

pub type Field32 = PhaseSpaceField<f32>;
pub type Medium32 = OpticalMedium<f32>;
pub type Operator32 = TransportOperator<f32>;
