//! Linear and nonlinear reconstruction of `(f, u0)` and `(mu_a, w0)`.

mod assembly;
mod io;
mod linear;
mod nonlinear;
mod probe;
mod trajectory;

pub use assembly::{
    assemble_fredholm, assemble_with_bank, solve_row_controls, AssemblyConfig, AssemblyTimings, ControlBank,
    DefectTreatment, RowModel,
    FredholmSystem,
};
pub use io::{load_system, read_matrix, write_matrix, FredholmSidecar, GridMeta};
pub use linear::{solve_linear_inverse, ReconstructionResult, SolveConfig};
pub use nonlinear::{nonlinear_reconstruct, IterationRecord, NonlinearConfig, NonlinearResult, NonlinearStatus};
pub use probe::{ratio_spread, stability_probe, Perturbation, StabilityRow};
pub use trajectory::{build_source_trajectory, Modulated, SourceTrajectory, TrajectoryConfig};
