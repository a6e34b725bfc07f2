use crate::phase_space::{PhaseSpace, PhaseSpaceField};
use crate::Real;

/// Exact vacuum solution with zero inflow: `u(t, x, theta) = u0(x - t theta, theta)`
/// while the foot of the characteristic stays in the closed rectangle, else 0.
pub fn characteristics_oracle<T: Real>(
    u0: impl Fn(T, T, [T; 2]) -> T,
    t: T,
    space: &PhaseSpace<T>,
) -> PhaseSpaceField<T> {
    let g = &space.grid;
    space.field_from_fn(|x, y, d| {
        let foot = [x - t * d[0], y - t * d[1]];
        if g.contains(foot) {
            u0(foot[0], foot[1], d)
        } else {
            T::zero()
        }
    })
}
