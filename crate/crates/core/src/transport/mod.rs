//! Explicit upwind discrete-ordinates solver, its exact transpose, and oracles.

mod green;
mod measurement;
mod medium;
mod operator;
mod oracle;
mod solve;

pub use green::{discrete_green_residual, green_terms, GreenTerms};
pub use measurement::{measurement_pipeline, TimeDerivative};
pub use medium::{apply_scattering, OpticalMedium, ScatteringKernel};
pub use operator::{TraceSide, TransportOperator};
pub use oracle::characteristics_oracle;
pub use solve::{forward_solve, forward_solve_streaming, observe, observe_transpose, Forcing, ForwardOutput};

pub(crate) use green::streaming_into;
pub(crate) use solve::{adjoint_sweep, trace_load};
