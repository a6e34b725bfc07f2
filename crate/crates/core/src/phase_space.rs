//! Discretization of `[0, tau] x Omega x S` for a rectangle `Omega` and the
//! unit circle `S`: cell-centred grid, equal-weight angular quadrature, the
//! outflow index set, and the inner products every other module works in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

/// Raw discretization parameters, validated by [`build_phase_space`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceConfig {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub n_dirs: usize,
}

impl PhaseSpaceConfig {
    pub fn unit_square(n: usize, n_dirs: usize) -> Self {
        Self { lx: 1.0, ly: 1.0, nx: n, ny: n, n_dirs }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

/// One boundary face of one boundary cell.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryEdge<T: Real> {
    pub side: Side,
    /// Index of the adjacent (interior) cell.
    pub cell: usize,
    pub normal: [T; 2],
    pub length: T,
    pub midpoint: [T; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct SpatialGrid<T: Real> {
    pub lx: T,
    pub ly: T,
    pub nx: usize,
    pub ny: usize,
    pub dx: T,
    pub dy: T,
    /// `diam(Omega) = sqrt(lx^2 + ly^2)`.
    pub diameter: T,
    pub edges: Vec<BoundaryEdge<T>>,
}

impl<T: Real> SpatialGrid<T> {
    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn cell_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn cell_center(&self, cell: usize) -> [T; 2] {
        let ix = cell % self.nx;
        let iy = cell / self.nx;
        [
            (T::from_usize_lossy(ix) + T::lit(0.5)) * self.dx,
            (T::from_usize_lossy(iy) + T::lit(0.5)) * self.dy,
        ]
    }

    #[inline]
    pub fn cell_area(&self) -> T {
        self.dx * self.dy
    }

    pub fn area(&self) -> T {
        self.lx * self.ly
    }

    pub fn perimeter(&self) -> T {
        T::lit(2.0) * (self.lx + self.ly)
    }

    pub fn contains(&self, p: [T; 2]) -> bool {
        p[0] >= T::zero() && p[0] <= self.lx && p[1] >= T::zero() && p[1] <= self.ly
    }
}

/// Equal-weight quadrature on the unit circle with half-offset nodes
/// `alpha_k = 2 pi (k + 1/2) / n`.
#[derive(Clone, Debug, Serialize)]
pub struct AngularQuadrature<T: Real> {
    pub angles: Vec<T>,
    pub directions: Vec<[T; 2]>,
    pub weights: Vec<T>,
    /// `antipode[k]` is the index of `-theta_k`.
    pub antipode: Vec<usize>,
}

impl<T: Real> AngularQuadrature<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `|S|` as seen by the quadrature (sum of weights, `2 pi` up to rounding).
    pub fn measure(&self) -> T {
        self.weights.iter().copied().sum()
    }
}

/// Outflow pair `(edge, direction)` with `nu . theta > 0`.
#[derive(Clone, Debug, Serialize)]
pub struct OutflowPair<T: Real> {
    pub edge: usize,
    pub dir: usize,
    /// Flat index into a [`PhaseSpaceField`] of the upwind cell value.
    pub dof: usize,
    /// `nu . theta`, strictly positive.
    pub cosine: T,
    /// Full quadrature weight `l^2 |nu . theta| ds w_k` of the trace norm.
    pub weight: T,
}

/// The ordered outflow index set `(dOmega x S)_+`.
#[derive(Clone, Debug, Serialize)]
pub struct TraceLayout<T: Real> {
    pub pairs: Vec<OutflowPair<T>>,
}

impl<T: Real> TraceLayout<T> {
    #[inline]
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Grid, quadrature and outflow layout bundled together; shared read-only
/// by every operator.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseSpace<T: Real> {
    pub grid: SpatialGrid<T>,
    pub quad: AngularQuadrature<T>,
    pub layout: TraceLayout<T>,
    pub config: PhaseSpaceConfig,
}

/// Builds the grid and quadrature, failing fast on any invalid parameter.
pub fn build_phase_space<T: Real>(config: &PhaseSpaceConfig) -> Result<PhaseSpace<T>> {
    if !(config.lx.is_finite() && config.lx > 0.0) {
        return Err(Error::config("lx", format!("extent must be positive, got {}", config.lx)));
    }
    if !(config.ly.is_finite() && config.ly > 0.0) {
        return Err(Error::config("ly", format!("extent must be positive, got {}", config.ly)));
    }
    if config.nx < 4 {
        return Err(Error::config("nx", format!("need at least 4 cells, got {}", config.nx)));
    }
    if config.ny < 4 {
        return Err(Error::config("ny", format!("need at least 4 cells, got {}", config.ny)));
    }
    let n = config.n_dirs;
    if n < 8 {
        return Err(Error::config("n_dirs", format!("need at least 8 directions, got {n}")));
    }
    if n % 2 != 0 {
        return Err(Error::config(
            "n_dirs",
            format!("direction count must be even for antipodal closure, got {n}"),
        ));
    }
    // alpha_k hits an axis exactly when n = 2 (mod 4).
    if n % 4 != 0 {
        return Err(Error::config(
            "n_dirs",
            format!("{n} directions put a node on a grid axis; use a multiple of 4"),
        ));
    }

    let lx = T::lit(config.lx);
    let ly = T::lit(config.ly);
    let dx = lx / T::from_usize_lossy(config.nx);
    let dy = ly / T::from_usize_lossy(config.ny);
    let diameter = (lx * lx + ly * ly).sqrt();

    let mut edges = Vec::with_capacity(2 * (config.nx + config.ny));
    let half = T::lit(0.5);
    for ix in 0..config.nx {
        let xm = (T::from_usize_lossy(ix) + half) * dx;
        edges.push(BoundaryEdge {
            side: Side::Bottom,
            cell: ix,
            normal: [T::zero(), -T::one()],
            length: dx,
            midpoint: [xm, T::zero()],
        });
    }
    for iy in 0..config.ny {
        let ym = (T::from_usize_lossy(iy) + half) * dy;
        edges.push(BoundaryEdge {
            side: Side::Right,
            cell: iy * config.nx + config.nx - 1,
            normal: [T::one(), T::zero()],
            length: dy,
            midpoint: [lx, ym],
        });
    }
    for ix in 0..config.nx {
        let xm = (T::from_usize_lossy(ix) + half) * dx;
        edges.push(BoundaryEdge {
            side: Side::Top,
            cell: (config.ny - 1) * config.nx + ix,
            normal: [T::zero(), T::one()],
            length: dx,
            midpoint: [xm, ly],
        });
    }
    for iy in 0..config.ny {
        let ym = (T::from_usize_lossy(iy) + half) * dy;
        edges.push(BoundaryEdge {
            side: Side::Left,
            cell: iy * config.nx,
            normal: [-T::one(), T::zero()],
            length: dy,
            midpoint: [T::zero(), ym],
        });
    }

    let grid = SpatialGrid { lx, ly, nx: config.nx, ny: config.ny, dx, dy, diameter, edges };

    let w = T::two_pi() / T::from_usize_lossy(n);
    let mut angles = Vec::with_capacity(n);
    let mut directions = Vec::with_capacity(n);
    for k in 0..n {
        // Angles are formed in f64 so that antipodes are exact negations
        // after rounding to T.
        let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
        angles.push(T::lit(a));
        directions.push([T::lit(a.cos()), T::lit(a.sin())]);
    }
    // Enforce exact closure theta_{k + n/2} = -theta_k.
    for k in n / 2..n {
        let d = directions[k - n / 2];
        directions[k] = [-d[0], -d[1]];
    }
    let antipode = (0..n).map(|k| (k + n / 2) % n).collect();
    let tol = T::lit(1e-8);
    for d in &directions {
        if d[0].abs() < tol || d[1].abs() < tol {
            return Err(Error::config("n_dirs", "a direction is parallel to a grid axis"));
        }
    }
    let quad = AngularQuadrature { angles, directions, weights: vec![w; n], antipode };

    let n_cells = grid.n_cells();
    let l2 = diameter * diameter;
    let mut pairs = Vec::new();
    for (e, edge) in grid.edges.iter().enumerate() {
        for (k, d) in quad.directions.iter().enumerate() {
            let c = edge.normal[0] * d[0] + edge.normal[1] * d[1];
            if c > T::zero() {
                pairs.push(OutflowPair {
                    edge: e,
                    dir: k,
                    dof: k * n_cells + edge.cell,
                    cosine: c,
                    weight: l2 * c * edge.length * quad.weights[k],
                });
            }
        }
    }

    Ok(PhaseSpace { grid, quad, layout: TraceLayout { pairs }, config: config.clone() })
}

impl<T: Real> PhaseSpace<T> {
    #[inline]
    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    #[inline]
    pub fn n_dirs(&self) -> usize {
        self.quad.len()
    }

    #[inline]
    pub fn n_dofs(&self) -> usize {
        self.n_cells() * self.n_dirs()
    }

    /// V0 weight of a single degree of freedom in direction `k`.
    #[inline]
    pub fn dof_weight(&self, k: usize) -> T {
        self.grid.cell_area() * self.quad.weights[k]
    }

    /// `<a, b>` in `L^2(Omega x S)`: `sum a b dx dy w_k`.
    pub fn inner_v0(&self, a: &PhaseSpaceField<T>, b: &PhaseSpaceField<T>) -> T {
        assert_eq!(a.values.len(), self.n_dofs(), "inner_v0: field size mismatch");
        assert_eq!(b.values.len(), self.n_dofs(), "inner_v0: field size mismatch");
        self.inner_v0_raw(&a.values, &b.values)
    }

    pub(crate) fn inner_v0_raw(&self, a: &[T], b: &[T]) -> T {
        let n = self.n_cells();
        let mut total = T::zero();
        for k in 0..self.n_dirs() {
            let s: T = a[k * n..(k + 1) * n]
                .iter()
                .zip(&b[k * n..(k + 1) * n])
                .map(|(x, y)| *x * *y)
                .sum();
            total += s * self.quad.weights[k];
        }
        total * self.grid.cell_area()
    }

    pub fn norm_v0(&self, a: &PhaseSpaceField<T>) -> T {
        self.inner_v0(a, a).sqrt()
    }

    /// `<a, b>` in `L^2(Omega)`.
    pub fn inner_l2(&self, a: &SpatialField<T>, b: &SpatialField<T>) -> T {
        assert_eq!(a.values.len(), self.n_cells(), "inner_l2: field size mismatch");
        assert_eq!(b.values.len(), self.n_cells(), "inner_l2: field size mismatch");
        let s: T = a.values.iter().zip(&b.values).map(|(x, y)| *x * *y).sum();
        s * self.grid.cell_area()
    }

    pub fn norm_l2(&self, a: &SpatialField<T>) -> T {
        self.inner_l2(a, a).sqrt()
    }

    /// Trace inner product `l^2 sum a b |nu . theta| ds w_k` on `T_+`.
    pub fn inner_trace(&self, a: &BoundaryTrace<T>, b: &BoundaryTrace<T>) -> T {
        assert_eq!(a.values.len(), self.layout.len(), "inner_trace: trace size mismatch");
        assert_eq!(b.values.len(), self.layout.len(), "inner_trace: trace size mismatch");
        self.inner_trace_raw(&a.values, &b.values)
    }

    pub(crate) fn inner_trace_raw(&self, a: &[T], b: &[T]) -> T {
        self.layout.pairs.iter().zip(a.iter().zip(b)).map(|(p, (x, y))| p.weight * (*x * *y)).sum()
    }

    /// `L^2([0, tau]; T_+)` inner product with the trapezoidal rule in time.
    pub fn inner_series(&self, a: &TraceSeries<T>, b: &TraceSeries<T>) -> T {
        assert_eq!(a.n_nodes(), b.n_nodes(), "inner_series: node count mismatch");
        assert_eq!(a.n_pairs, self.layout.len(), "inner_series: trace size mismatch");
        assert_eq!(b.n_pairs, self.layout.len(), "inner_series: trace size mismatch");
        let mut total = T::zero();
        for n in 0..a.n_nodes() {
            total += a.time_weight(n) * self.inner_trace_raw(a.node(n), b.node(n));
        }
        total
    }

    pub fn norm_series(&self, a: &TraceSeries<T>) -> T {
        self.inner_series(a, a).sqrt()
    }

    /// Angular average `(1/|S|) sum_k u(., k) w_k` per cell.
    pub fn angular_average(&self, u: &PhaseSpaceField<T>) -> SpatialField<T> {
        assert_eq!(u.values.len(), self.n_dofs(), "angular_average: field size mismatch");
        let mut out = SpatialField::zeros(self.n_cells());
        self.angular_average_into(&u.values, T::one(), &mut out.values);
        out
    }

    /// `out += scale * P_theta(u)`.
    pub(crate) fn angular_average_into(&self, u: &[T], scale: T, out: &mut [T]) {
        let n = self.n_cells();
        let s = self.quad.measure();
        for k in 0..self.n_dirs() {
            let c = scale * self.quad.weights[k] / s;
            for (o, x) in out.iter_mut().zip(&u[k * n..(k + 1) * n]) {
                *o += c * *x;
            }
        }
    }

    /// Replicates `g(x)` over every direction.
    pub fn lift_isotropic(&self, g: &SpatialField<T>) -> PhaseSpaceField<T> {
        assert_eq!(g.values.len(), self.n_cells(), "lift_isotropic: field size mismatch");
        let mut values = Vec::with_capacity(self.n_dofs());
        for _ in 0..self.n_dirs() {
            values.extend_from_slice(&g.values);
        }
        PhaseSpaceField { values }
    }

    pub fn zero_field(&self) -> PhaseSpaceField<T> {
        PhaseSpaceField::zeros(self.n_dofs())
    }

    pub fn zero_spatial(&self) -> SpatialField<T> {
        SpatialField::zeros(self.n_cells())
    }

    pub fn zero_trace(&self) -> BoundaryTrace<T> {
        BoundaryTrace { values: vec![T::zero(); self.layout.len()] }
    }

    /// Samples `f(x, y, theta)` at cell centres and quadrature nodes.
    pub fn field_from_fn(&self, f: impl Fn(T, T, [T; 2]) -> T) -> PhaseSpaceField<T> {
        let n = self.n_cells();
        let mut values = Vec::with_capacity(self.n_dofs());
        for d in &self.quad.directions {
            for i in 0..n {
                let c = self.grid.cell_center(i);
                values.push(f(c[0], c[1], *d));
            }
        }
        PhaseSpaceField { values }
    }

    pub fn spatial_from_fn(&self, f: impl Fn(T, T) -> T) -> SpatialField<T> {
        let values = (0..self.n_cells())
            .map(|i| {
                let c = self.grid.cell_center(i);
                f(c[0], c[1])
            })
            .collect();
        SpatialField { values }
    }
}

/// Trapezoidal `P_t v = int_0^tau v dt` of a uniformly sampled series.
pub fn time_integral<T: Real>(series: &[PhaseSpaceField<T>], dt: T) -> Result<PhaseSpaceField<T>> {
    let Some(first) = series.first() else {
        return Err(Error::contract("time_integral of an empty series"));
    };
    let len = first.values.len();
    let mut out = PhaseSpaceField::zeros(len);
    if series.len() == 1 {
        return Ok(out);
    }
    let last = series.len() - 1;
    for (n, s) in series.iter().enumerate() {
        if s.values.len() != len {
            return Err(Error::contract("time_integral: fields of different sizes"));
        }
        let w = if n == 0 || n == last { dt * T::lit(0.5) } else { dt };
        out.axpy(w, s);
    }
    Ok(out)
}

/// Radiance on `(cell, direction)` pairs, direction-major: `values[k * n_cells + i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct PhaseSpaceField<T: Real> {
    pub values: Vec<T>,
}

impl<T: Real> PhaseSpaceField<T> {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![T::zero(); len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: T, x: &Self) {
        assert_eq!(self.values.len(), x.values.len(), "axpy: size mismatch");
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * *v;
        }
    }

    pub fn scale(&mut self, a: T) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T: Real> std::ops::Add for &PhaseSpaceField<T> {
    type Output = PhaseSpaceField<T>;
    fn add(self, rhs: Self) -> PhaseSpaceField<T> {
        let mut out = self.clone();
        out.axpy(T::one(), rhs);
        out
    }
}

impl<T: Real> std::ops::Sub for &PhaseSpaceField<T> {
    type Output = PhaseSpaceField<T>;
    fn sub(self, rhs: Self) -> PhaseSpaceField<T> {
        let mut out = self.clone();
        out.axpy(-T::one(), rhs);
        out
    }
}

/// Isotropic function of position, one value per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct SpatialField<T: Real> {
    pub values: Vec<T>,
}

impl<T: Real> SpatialField<T> {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![T::zero(); len] }
    }

    pub fn constant(len: usize, c: T) -> Self {
        Self { values: vec![c; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn axpy(&mut self, a: T, x: &Self) {
        assert_eq!(self.values.len(), x.values.len(), "axpy: size mismatch");
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * *v;
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        Self { values: self.values.iter().map(|v| *v * a).collect() }
    }

    /// Largest value; panics on an empty field.
    pub fn max(&self) -> T {
        self.values.iter().copied().reduce(|m, v| m.max(v)).expect("max of an empty field")
    }

    /// Smallest value; panics on an empty field.
    pub fn min(&self) -> T {
        self.values.iter().copied().reduce(|m, v| m.min(v)).expect("min of an empty field")
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl<T: Real> std::ops::Sub for &SpatialField<T> {
    type Output = SpatialField<T>;
    fn sub(self, rhs: Self) -> SpatialField<T> {
        let mut out = self.clone();
        out.axpy(-T::one(), rhs);
        out
    }
}

impl<T: Real> std::ops::Add for &SpatialField<T> {
    type Output = SpatialField<T>;
    fn add(self, rhs: Self) -> SpatialField<T> {
        let mut out = self.clone();
        out.axpy(T::one(), rhs);
        out
    }
}

/// Element of `T_+`: one value per outflow pair of a [`TraceLayout`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct BoundaryTrace<T: Real> {
    pub values: Vec<T>,
}

/// Element of `L^2([0, tau]; T_+)` on the uniform grid `t_n = n dt`, node-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = ""))]
pub struct TraceSeries<T: Real> {
    pub dt: T,
    pub n_pairs: usize,
    pub values: Vec<T>,
}

impl<T: Real> TraceSeries<T> {
    pub fn zeros(n_nodes: usize, n_pairs: usize, dt: T) -> Self {
        Self { dt, n_pairs, values: vec![T::zero(); n_nodes * n_pairs] }
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        if self.n_pairs == 0 {
            0
        } else {
            self.values.len() / self.n_pairs
        }
    }

    /// Final time `(n_nodes - 1) dt`.
    pub fn horizon(&self) -> T {
        T::from_usize_lossy(self.n_nodes().saturating_sub(1)) * self.dt
    }

    #[inline]
    pub fn node(&self, n: usize) -> &[T] {
        &self.values[n * self.n_pairs..(n + 1) * self.n_pairs]
    }

    #[inline]
    pub fn node_mut(&mut self, n: usize) -> &mut [T] {
        &mut self.values[n * self.n_pairs..(n + 1) * self.n_pairs]
    }

    pub fn trace(&self, n: usize) -> BoundaryTrace<T> {
        BoundaryTrace { values: self.node(n).to_vec() }
    }

    /// Trapezoidal weight of node `n`.
    #[inline]
    pub fn time_weight(&self, n: usize) -> T {
        let last = self.n_nodes() - 1;
        if last == 0 {
            T::zero()
        } else if n == 0 || n == last {
            self.dt * T::lit(0.5)
        } else {
            self.dt
        }
    }

    pub fn axpy(&mut self, a: T, x: &Self) {
        assert_eq!(self.values.len(), x.values.len(), "axpy: series size mismatch");
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * *v;
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        Self { dt: self.dt, n_pairs: self.n_pairs, values: self.values.iter().map(|v| *v * a).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit(n: usize, dirs: usize) -> PhaseSpace<f64> {
        build_phase_space(&PhaseSpaceConfig::unit_square(n, dirs)).unwrap()
    }

    #[test]
    fn unit_square_diameter_and_measure() {
        let ps = unit(8, 16);
        assert!((ps.grid.diameter - 2f64.sqrt()).abs() < 1e-15);
        assert!((ps.quad.measure() - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn rectangle_diameter() {
        let ps: PhaseSpace<f64> =
            build_phase_space(&PhaseSpaceConfig { lx: 2.0, ly: 1.0, nx: 8, ny: 4, n_dirs: 8 }).unwrap();
        assert!((ps.grid.diameter - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = |c: PhaseSpaceConfig, key: &str| match build_phase_space::<f64>(&c) {
            Err(Error::Config { key: k, .. }) => assert_eq!(k, key),
            other => panic!("expected config error for {key}, got {other:?}"),
        };
        bad(PhaseSpaceConfig::unit_square(8, 7), "n_dirs");
        bad(PhaseSpaceConfig::unit_square(8, 6), "n_dirs");
        bad(PhaseSpaceConfig::unit_square(8, 10), "n_dirs");
        bad(PhaseSpaceConfig::unit_square(3, 8), "nx");
        bad(PhaseSpaceConfig { lx: 1.0, ly: 1.0, nx: 8, ny: 2, n_dirs: 8 }, "ny");
        bad(PhaseSpaceConfig { lx: 0.0, ly: 1.0, nx: 8, ny: 8, n_dirs: 8 }, "lx");
        bad(PhaseSpaceConfig { lx: 1.0, ly: -1.0, nx: 8, ny: 8, n_dirs: 8 }, "ly");
    }

    #[test]
    fn antipodal_closure_is_exact() {
        let ps = unit(4, 24);
        for k in 0..ps.n_dirs() {
            let a = ps.quad.antipode[k];
            assert_eq!(ps.quad.directions[a][0], -ps.quad.directions[k][0]);
            assert_eq!(ps.quad.directions[a][1], -ps.quad.directions[k][1]);
        }
    }

    #[test]
    fn edge_normals_are_unit() {
        let ps = unit(5, 8);
        for e in &ps.grid.edges {
            let n = (e.normal[0] * e.normal[0] + e.normal[1] * e.normal[1]).sqrt();
            assert_eq!(n, 1.0);
        }
        assert_eq!(ps.grid.edges.len(), 20);
        // Half of the directions leave through every edge.
        assert_eq!(ps.layout.len(), 20 * 4);
    }

    #[test]
    fn inner_v0_of_constant_is_area_times_measure() {
        let ps = unit(8, 16);
        let one = ps.field_from_fn(|_, _, _| 1.0);
        assert!((ps.inner_v0(&one, &one) - 2.0 * PI).abs() < 1e-13);
    }

    #[test]
    fn even_and_odd_fields_are_orthogonal() {
        let ps = unit(8, 16);
        let even = ps.field_from_fn(|x, y, d| 1.0 + x * y + d[0] * d[0]);
        let odd = ps.field_from_fn(|x, _, d| (1.0 + x) * d[0]);
        assert!(ps.inner_v0(&even, &odd).abs() < 1e-14);
    }

    #[test]
    fn constant_trace_norm_approaches_16() {
        // l^2 * perimeter * int_{cos > 0} cos = 2 * 4 * 2 on the outflow half.
        let mut prev = f64::INFINITY;
        for dirs in [8, 16, 32, 64] {
            let ps = unit(8, dirs);
            let one = BoundaryTrace { values: vec![1.0; ps.layout.len()] };
            let err = (ps.inner_trace(&one, &one) - 16.0).abs();
            if prev.is_finite() {
                // O(n^-2): each doubling cuts the error by ~4.
                assert!(err < prev / 3.5, "dirs {dirs}: {err} vs {prev}");
            }
            prev = err;
        }
        assert!(prev < 0.02);
    }

    #[test]
    fn trace_bilinearity() {
        let ps = unit(6, 8);
        let a = BoundaryTrace { values: (0..ps.layout.len()).map(|i| (i as f64).sin()).collect() };
        let half = BoundaryTrace { values: a.values.iter().map(|v| v * 0.5).collect() };
        let zero = ps.zero_trace();
        assert_eq!(ps.inner_trace(&zero, &zero), 0.0);
        let r = ps.inner_trace(&half, &half) / ps.inner_trace(&a, &a);
        assert!((r - 0.25).abs() < 1e-15);
    }

    #[test]
    fn angular_average_examples() {
        let ps = unit(6, 16);
        let c = ps.field_from_fn(|_, _, _| 3.5);
        for v in ps.angular_average(&c).values {
            assert!((v - 3.5).abs() < 1e-14);
        }
        let cos = ps.field_from_fn(|_, _, d| d[0]);
        for v in ps.angular_average(&cos).values {
            assert!(v.abs() < 1e-15);
        }
        let g = ps.spatial_from_fn(|x, y| (3.0 * x).sin() + y * y);
        let back = ps.angular_average(&ps.lift_isotropic(&g));
        for (a, b) in back.values.iter().zip(&g.values) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(1.0));
        }
    }

    #[test]
    fn lift_examples() {
        let ps = unit(8, 16);
        assert!(ps.lift_isotropic(&ps.zero_spatial()).values.iter().all(|v| *v == 0.0));
        let one = ps.lift_isotropic(&SpatialField::constant(ps.n_cells(), 1.0));
        assert!((ps.inner_v0(&one, &one) - 2.0 * PI).abs() < 1e-13);
    }

    #[test]
    fn time_integral_examples() {
        let tau = 2.0;
        let nt = 40;
        let dt = tau / nt as f64;
        let series = |f: &dyn Fn(f64) -> f64| -> Vec<PhaseSpaceField<f64>> {
            (0..=nt).map(|n| PhaseSpaceField { values: vec![f(n as f64 * dt); 3] }).collect()
        };
        let c = time_integral(&series(&|_| 1.5), dt).unwrap();
        assert!((c.values[0] - 1.5 * tau).abs() < 1e-14);
        let lin = time_integral(&series(&|t| t), dt).unwrap();
        assert!((lin.values[1] - tau * tau / 2.0).abs() < 1e-13);
        // Trapezoid error for t^2 is (tau^3 / 6) * dt^2 / tau... = tau dt^2 / 6 exactly.
        let quad = time_integral(&series(&|t| t * t), dt).unwrap();
        let exact = tau.powi(3) / 3.0;
        assert!((quad.values[2] - exact - tau * dt * dt / 6.0).abs() < 1e-12);
        assert!(matches!(time_integral::<f64>(&[], dt), Err(Error::Contract(_))));
    }

    fn arb_field(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, len)
    }

    proptest! {
        #[test]
        fn v0_is_symmetric_positive(a in arb_field(6 * 6 * 8), b in arb_field(6 * 6 * 8)) {
            let ps = unit(6, 8);
            let a = PhaseSpaceField { values: a };
            let b = PhaseSpaceField { values: b };
            prop_assert_eq!(ps.inner_v0(&a, &b), ps.inner_v0(&b, &a));
            if a.max_abs() > 0.0 {
                prop_assert!(ps.inner_v0(&a, &a) > 0.0);
            }
        }

        #[test]
        fn trace_form_is_symmetric_positive(a in arb_field(6 * 4 * 4), b in arb_field(6 * 4 * 4)) {
            let ps = unit(6, 8);
            prop_assume!(ps.layout.len() == a.len());
            let a = BoundaryTrace { values: a };
            let b = BoundaryTrace { values: b };
            prop_assert_eq!(ps.inner_trace(&a, &b), ps.inner_trace(&b, &a));
            if a.values.iter().any(|v| *v != 0.0) {
                prop_assert!(ps.inner_trace(&a, &a) > 0.0);
            }
        }

        #[test]
        fn average_of_lift_is_identity(g in arb_field(36)) {
            let ps = unit(6, 8);
            let g = SpatialField { values: g };
            let back = ps.angular_average(&ps.lift_isotropic(&g));
            for (x, y) in back.values.iter().zip(&g.values) {
                prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON);
            }
            // Idempotence of lift o P_theta.
            let once = ps.lift_isotropic(&back);
            let twice = ps.lift_isotropic(&ps.angular_average(&once));
            for (x, y) in once.values.iter().zip(&twice.values) {
                prop_assert!((x - y).abs() <= 4.0 * f64::EPSILON);
            }
        }
    }
}
