//! Spatial grids, time meshes, state fields and the multilinear interpolation
//! that connects grid solutions to scattered observation points.
//!
//! Interpolation and its transpose share one [`InterpStencil`], so the pairing
//! `<interpolate(w), c> = <w, interpolate_adjoint(c)>` holds to rounding.

use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SemiPdeError};

/// Nodal values with shape `(components, nodes)`.
pub type StateField = Array2<f64>;

/// Relative slack used when deciding whether a coordinate is inside the box.
const BOX_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridLayout {
    /// `n` nodes, spacing `(upper - lower) / n`; `upper` is identified with `lower`.
    Periodic,
    /// `n` nodes including both endpoints, spacing `(upper - lower) / (n - 1)`.
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    nodes: usize,
    lower: f64,
    upper: f64,
    layout: GridLayout,
}

impl SpatialGrid {
    /// Zero-dimensional grid: a single node, used for equations marched in one variable.
    pub fn point() -> Self {
        SpatialGrid { dim: 0, nodes: 1, lower: 0.0, upper: 0.0, layout: GridLayout::Closed }
    }

    pub fn new_1d(nodes: usize, lower: f64, upper: f64, layout: GridLayout) -> Result<Self> {
        if nodes < 4 {
            return Err(SemiPdeError::InvalidConfig(format!(
                "a 1D grid needs at least 4 nodes, got {nodes}"
            )));
        }
        if !(upper > lower) || !lower.is_finite() || !upper.is_finite() {
            return Err(SemiPdeError::InvalidConfig(format!(
                "invalid spatial bounds [{lower}, {upper}]"
            )));
        }
        Ok(SpatialGrid { dim: 1, nodes, lower, upper, layout })
    }

    pub fn periodic(nodes: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new_1d(nodes, lower, upper, GridLayout::Periodic)
    }

    pub fn closed(nodes: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new_1d(nodes, lower, upper, GridLayout::Closed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn layout(&self) -> GridLayout {
        self.layout
    }

    pub fn dx(&self) -> f64 {
        match (self.dim, self.layout) {
            (0, _) => 0.0,
            (_, GridLayout::Periodic) => (self.upper - self.lower) / self.nodes as f64,
            (_, GridLayout::Closed) => (self.upper - self.lower) / (self.nodes - 1) as f64,
        }
    }

    /// Coordinate of node `j` (empty for the point grid).
    pub fn node_x(&self, j: usize) -> f64 {
        self.lower + j as f64 * self.dx()
    }

    /// Same grid with `factor` times finer spacing; shared nodes keep their index times `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        match (self.dim, self.layout) {
            (0, _) => Ok(self.clone()),
            (_, GridLayout::Periodic) => {
                Self::periodic(self.nodes * factor, self.lower, self.upper)
            }
            (_, GridLayout::Closed) => {
                Self::closed((self.nodes - 1) * factor + 1, self.lower, self.upper)
            }
        }
    }

    pub fn zeros(&self, components: usize) -> StateField {
        Array2::zeros((components, self.nodes))
    }

    fn contains_x(&self, x: f64) -> bool {
        let slack = BOX_SLACK * (self.upper - self.lower).abs().max(1.0);
        x >= self.lower - slack && x <= self.upper + slack
    }

    /// Cell lookup along x: `(left node, right node, fraction toward right)`.
    fn locate_x(&self, x: f64) -> (usize, usize, f64) {
        let dx = self.dx();
        let s = ((x - self.lower) / dx).max(0.0);
        match self.layout {
            GridLayout::Periodic => {
                let mut j = s.floor() as usize;
                let mut frac = s - j as f64;
                if j >= self.nodes {
                    // x == upper wraps onto node 0
                    j = self.nodes - 1;
                    frac = 1.0;
                }
                (j, (j + 1) % self.nodes, frac.clamp(0.0, 1.0))
            }
            GridLayout::Closed => {
                let j = (s.floor() as usize).min(self.nodes - 2);
                (j, j + 1, (s - j as f64).clamp(0.0, 1.0))
            }
        }
    }

    /// Second-difference Laplacian of one component row.
    ///
    /// Periodic grids wrap; closed grids use mirrored ghost nodes (zero flux).
    pub fn laplacian(&self, u: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        let n = self.nodes;
        if self.dim == 0 {
            out.fill(0.0);
            return;
        }
        let inv = 1.0 / (self.dx() * self.dx());
        for j in 1..n - 1 {
            out[j] = (u[j - 1] - 2.0 * u[j] + u[j + 1]) * inv;
        }
        match self.layout {
            GridLayout::Periodic => {
                out[0] = (u[n - 1] - 2.0 * u[0] + u[1]) * inv;
                out[n - 1] = (u[n - 2] - 2.0 * u[n - 1] + u[0]) * inv;
            }
            GridLayout::Closed => {
                out[0] = 2.0 * (u[1] - u[0]) * inv;
                out[n - 1] = 2.0 * (u[n - 2] - u[n - 1]) * inv;
            }
        }
    }

    /// Accumulates `L^T c` into `acc`.
    pub fn laplacian_transpose_add(&self, c: ArrayView1<f64>, mut acc: ArrayViewMut1<f64>) {
        let n = self.nodes;
        if self.dim == 0 {
            return;
        }
        let inv = 1.0 / (self.dx() * self.dx());
        match self.layout {
            GridLayout::Periodic => {
                for j in 0..n {
                    let l = if j == 0 { n - 1 } else { j - 1 };
                    let r = if j == n - 1 { 0 } else { j + 1 };
                    acc[j] += (c[l] - 2.0 * c[j] + c[r]) * inv;
                }
            }
            GridLayout::Closed => {
                for j in 1..n - 1 {
                    let cj = c[j] * inv;
                    acc[j - 1] += cj;
                    acc[j] -= 2.0 * cj;
                    acc[j + 1] += cj;
                }
                let c0 = c[0] * inv;
                acc[0] -= 2.0 * c0;
                acc[1] += 2.0 * c0;
                let cn = c[n - 1] * inv;
                acc[n - 1] -= 2.0 * cn;
                acc[n - 2] += 2.0 * cn;
            }
        }
    }

    /// Central first difference; zero at closed-grid boundaries (mirrored ghosts).
    pub fn gradient(&self, u: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        let n = self.nodes;
        if self.dim == 0 {
            out.fill(0.0);
            return;
        }
        let inv = 0.5 / self.dx();
        for j in 1..n - 1 {
            out[j] = (u[j + 1] - u[j - 1]) * inv;
        }
        match self.layout {
            GridLayout::Periodic => {
                out[0] = (u[1] - u[n - 1]) * inv;
                out[n - 1] = (u[0] - u[n - 2]) * inv;
            }
            GridLayout::Closed => {
                out[0] = 0.0;
                out[n - 1] = 0.0;
            }
        }
    }

    /// Accumulates `D^T c` into `acc`.
    pub fn gradient_transpose_add(&self, c: ArrayView1<f64>, mut acc: ArrayViewMut1<f64>) {
        let n = self.nodes;
        if self.dim == 0 {
            return;
        }
        let inv = 0.5 / self.dx();
        let (lo, hi) = match self.layout {
            GridLayout::Periodic => (0, n),
            GridLayout::Closed => (1, n - 1),
        };
        for j in lo..hi {
            let r = (j + 1) % n;
            let l = (j + n - 1) % n;
            acc[r] += c[j] * inv;
            acc[l] -= c[j] * inv;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    t0: f64,
    t1: f64,
    steps: usize,
}

impl TimeMesh {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(t1 > t0) {
            return Err(SemiPdeError::InvalidConfig(format!(
                "time mesh needs t1 > t0 and at least one step (got [{t0}, {t1}], {steps})"
            )));
        }
        Ok(TimeMesh { t0, t1, steps })
    }

    /// Smallest uniform mesh on `[t0, t1]` whose step does not exceed `max_dt`.
    pub fn with_max_dt(t0: f64, t1: f64, max_dt: f64, min_steps: usize) -> Result<Self> {
        if !(max_dt > 0.0) {
            return Err(SemiPdeError::InvalidConfig(format!("max dt must be positive, got {max_dt}")));
        }
        let steps = (((t1 - t0) / max_dt) * (1.0 - 1e-12)).ceil() as usize;
        Self::new(t0, t1, steps.max(min_steps).max(1))
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.t1
        } else {
            self.t0 + n as f64 * self.dt()
        }
    }

    pub fn refined(&self, factor: usize) -> Self {
        TimeMesh { steps: self.steps * factor, ..*self }
    }

    fn contains(&self, t: f64) -> bool {
        let slack = BOX_SLACK * (self.t1 - self.t0).abs().max(1.0);
        t >= self.t0 - slack && t <= self.t1 + slack
    }
}

/// An observation location `(t, x)`; `x` has one entry per spatial dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: Vec<f64>,
}

impl SpaceTimePoint {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        SpaceTimePoint { t, x }
    }

    pub fn at_time(t: f64) -> Self {
        SpaceTimePoint { t, x: Vec::new() }
    }
}

/// Participating `(time slice, node, weight)` triples for one point.
#[derive(Debug, Clone, Copy)]
pub struct InterpStencil {
    entries: [(usize, usize, f64); 4],
    len: usize,
}

impl InterpStencil {
    pub fn locate(grid: &SpatialGrid, mesh: &TimeMesh, p: &SpaceTimePoint) -> Result<Self> {
        let outside = || SemiPdeError::PointOutsideDomain { t: p.t, x: p.x.clone() };
        if p.x.len() != grid.dim() || !p.t.is_finite() || !mesh.contains(p.t) {
            return Err(outside());
        }
        let dt = mesh.dt();
        let s = ((p.t - mesh.t0()) / dt).max(0.0);
        let n = (s.floor() as usize).min(mesh.steps() - 1);
        let wt = (s - n as f64).clamp(0.0, 1.0);

        let mut entries = [(0usize, 0usize, 0.0f64); 4];
        if grid.dim() == 0 {
            entries[0] = (n, 0, 1.0 - wt);
            entries[1] = (n + 1, 0, wt);
            return Ok(InterpStencil { entries, len: 2 });
        }
        let x = p.x[0];
        if !x.is_finite() || !grid.contains_x(x) {
            return Err(outside());
        }
        let (jl, jr, fx) = grid.locate_x(x);
        entries[0] = (n, jl, (1.0 - wt) * (1.0 - fx));
        entries[1] = (n, jr, (1.0 - wt) * fx);
        entries[2] = (n + 1, jl, wt * (1.0 - fx));
        entries[3] = (n + 1, jr, wt * fx);
        Ok(InterpStencil { entries, len: 4 })
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries[..self.len]
    }

    /// Interpolated value of `component`.
    pub fn apply(&self, slices: &[StateField], component: usize) -> f64 {
        self.entries().iter().map(|&(s, j, w)| w * slices[s][[component, j]]).sum()
    }

    /// Adds `cotangent * weight` onto each participating node of `component`.
    pub fn scatter(&self, cotangent: f64, component: usize, acc: &mut [StateField]) {
        for &(s, j, w) in self.entries() {
            acc[s][[component, j]] += w * cotangent;
        }
    }
}

/// One nonzero of an interpolation transpose: `(time slice, component, node, value)`.
pub type NodalCotangent = (usize, usize, usize, f64);

/// Multilinear interpolation of stored time slices at `p`.
pub fn interpolate(
    grid: &SpatialGrid,
    mesh: &TimeMesh,
    slices: &[StateField],
    p: &SpaceTimePoint,
) -> Result<Vec<f64>> {
    let stencil = InterpStencil::locate(grid, mesh, p)?;
    let d_y = slices.first().map_or(0, |s| s.nrows());
    Ok((0..d_y).map(|k| stencil.apply(slices, k)).collect())
}

/// Transpose of [`interpolate`]: distributes `cotangent` onto the participating nodes.
pub fn interpolate_adjoint(
    grid: &SpatialGrid,
    mesh: &TimeMesh,
    p: &SpaceTimePoint,
    cotangent: &[f64],
) -> Result<Vec<NodalCotangent>> {
    let stencil = InterpStencil::locate(grid, mesh, p)?;
    let mut out = Vec::with_capacity(stencil.len * cotangent.len());
    for (k, &c) in cotangent.iter().enumerate() {
        for &(s, j, w) in stencil.entries() {
            out.push((s, k, j, w * c));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn slices_from(grid: &SpatialGrid, mesh: &TimeMesh, f: impl Fn(f64, f64) -> f64) -> Vec<StateField> {
        (0..=mesh.steps())
            .map(|n| {
                let t = mesh.time(n);
                Array2::from_shape_fn((1, grid.nodes()), |(_, j)| f(t, grid.node_x(j)))
            })
            .collect()
    }

    #[test]
    fn grid_spacing_conventions() {
        let g = SpatialGrid::periodic(64, -1.0, 1.0).unwrap();
        assert_eq!(g.dx(), 2.0 / 64.0);
        let c = SpatialGrid::closed(5, 0.0, 1.0).unwrap();
        assert_eq!(c.dx(), 0.25);
        assert_eq!(c.node_x(4), 1.0);
        assert!(SpatialGrid::periodic(3, -1.0, 1.0).is_err());
    }

    #[test]
    fn time_mesh_endpoint_is_exact() {
        let m = TimeMesh::with_max_dt(0.0, 2.5, 0.013, 1).unwrap();
        assert!(m.dt() <= 0.013);
        let end = m.t0() + m.steps() as f64 * m.dt();
        assert!((end - 2.5).abs() <= 1e-12 * 2.5);
    }

    #[test]
    fn exact_at_nodes() {
        let g = SpatialGrid::periodic(8, -1.0, 1.0).unwrap();
        let m = TimeMesh::new(0.0, 1.0, 4).unwrap();
        let s = slices_from(&g, &m, |t, x| (3.0 * t).sin() + x * x);
        let p = SpaceTimePoint::new(m.time(2), vec![g.node_x(5)]);
        let v = interpolate(&g, &m, &s, &p).unwrap();
        assert_eq!(v[0], s[2][[0, 5]]);
    }

    #[test]
    fn constant_field_reproduced() {
        let g = SpatialGrid::periodic(8, -1.0, 1.0).unwrap();
        let m = TimeMesh::new(0.0, 1.0, 4).unwrap();
        let s = slices_from(&g, &m, |_, _| 0.7);
        let v = interpolate(&g, &m, &s, &SpaceTimePoint::new(0.33, vec![0.123])).unwrap();
        assert!((v[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn midpoint_is_neighbor_mean() {
        let g = SpatialGrid::closed(6, 0.0, 1.0).unwrap();
        let m = TimeMesh::new(0.0, 1.0, 2).unwrap();
        let s = slices_from(&g, &m, |_, x| x);
        let mid = 0.5 * (g.node_x(2) + g.node_x(3));
        let v = interpolate(&g, &m, &s, &SpaceTimePoint::new(0.4, vec![mid])).unwrap();
        assert!((v[0] - 0.5 * (g.node_x(2) + g.node_x(3))).abs() < 1e-15);
    }

    #[test]
    fn affine_fields_exact() {
        let g = SpatialGrid::closed(9, -1.0, 1.0).unwrap();
        let m = TimeMesh::new(0.0, 2.5, 7).unwrap();
        let f = |t: f64, x: f64| 0.3 - 1.7 * t + 2.2 * x;
        let s = slices_from(&g, &m, f);
        for &(t, x) in &[(0.1, -0.93), (1.234, 0.5), (2.5, 1.0), (0.0, -1.0)] {
            let v = interpolate(&g, &m, &s, &SpaceTimePoint::new(t, vec![x])).unwrap()[0];
            assert!((v - f(t, x)).abs() <= 1e-12 * f(t, x).abs().max(1.0));
        }
    }

    #[test]
    fn periodic_wrap_identifies_endpoints() {
        let g = SpatialGrid::periodic(8, -1.0, 1.0).unwrap();
        let m = TimeMesh::new(0.0, 1.0, 3).unwrap();
        let s = slices_from(&g, &m, |t, x| (std::f64::consts::PI * x).sin() + t);
        let a = interpolate(&g, &m, &s, &SpaceTimePoint::new(0.5, vec![-1.0])).unwrap()[0];
        let b = interpolate(&g, &m, &s, &SpaceTimePoint::new(0.5, vec![1.0])).unwrap()[0];
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn outside_points_rejected() {
        let g = SpatialGrid::periodic(8, -1.0, 1.0).unwrap();
        let m = TimeMesh::new(0.0, 1.0, 3).unwrap();
        let s = slices_from(&g, &m, |_, _| 0.0);
        for p in [
            SpaceTimePoint::new(1.5, vec![0.0]),
            SpaceTimePoint::new(0.5, vec![1.2]),
            SpaceTimePoint::new(-0.1, vec![0.0]),
            SpaceTimePoint::new(0.5, vec![]),
        ] {
            assert!(matches!(
                interpolate(&g, &m, &s, &p),
                Err(SemiPdeError::PointOutsideDomain { .. })
            ));
        }
    }

    #[test]
    fn adjoint_at_node_is_unit_weight() {
        let g = SpatialGrid::periodic(8, -1.0, 1.0).unwrap();
        let m = TimeMesh::new(0.0, 1.0, 4).unwrap();
        let p = SpaceTimePoint::new(m.time(1), vec![g.node_x(3)]);
        let contrib = interpolate_adjoint(&g, &m, &p, &[2.5]).unwrap();
        let nonzero: Vec<_> = contrib.iter().filter(|c| c.3 != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(*nonzero[0], (1, 0, 3, 2.5));
    }

    #[test]
    fn stencil_weights_partition_unity() {
        let g = SpatialGrid::periodic(16, -1.0, 1.0).unwrap();
        let m = TimeMesh::new(0.0, 2.5, 10).unwrap();
        let st = InterpStencil::locate(&g, &m, &SpaceTimePoint::new(1.11, vec![0.37])).unwrap();
        let total: f64 = st.entries().iter().map(|e| e.2).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn laplacian_transpose_pairs() {
        for g in [SpatialGrid::periodic(7, 0.0, 1.0).unwrap(), SpatialGrid::closed(7, 0.0, 1.0).unwrap()] {
            let u = Array1::from_shape_fn(7, |j| ((j * 7 + 3) % 5) as f64 - 1.3);
            let c = Array1::from_shape_fn(7, |j| ((j * 3 + 1) % 4) as f64 * 0.7);
            let mut lu = Array1::zeros(7);
            g.laplacian(u.view(), lu.view_mut());
            let mut ltc = Array1::zeros(7);
            g.laplacian_transpose_add(c.view(), ltc.view_mut());
            assert!((lu.dot(&c) - u.dot(&ltc)).abs() < 1e-10);

            let mut du = Array1::zeros(7);
            g.gradient(u.view(), du.view_mut());
            let mut dtc = Array1::zeros(7);
            g.gradient_transpose_add(c.view(), dtc.view_mut());
            assert!((du.dot(&c) - u.dot(&dtc)).abs() < 1e-10);
        }
    }

    #[test]
    fn periodic_laplacian_telescopes() {
        let g = SpatialGrid::periodic(32, -1.0, 1.0).unwrap();
        let u = Array1::from_shape_fn(32, |j| (j as f64 * 0.37).cos() * 3.0 + j as f64 * 0.01);
        let mut lu = Array1::zeros(32);
        g.laplacian(u.view(), lu.view_mut());
        assert!(lu.sum().abs() < 1e-10 * lu.iter().map(|v: &f64| v.abs()).sum::<f64>());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn interpolation_adjoint_pairs_with_forward(
            t in 0.0f64..=2.0,
            x in -1.0f64..=1.0,
            c in -3.0f64..3.0,
            seed in any::<u64>(),
            periodic in any::<bool>(),
        ) {
            use rand::{Rng, SeedableRng};
            let g = if periodic {
                SpatialGrid::periodic(12, -1.0, 1.0).unwrap()
            } else {
                SpatialGrid::new_1d(12, -1.0, 1.0, GridLayout::Closed).unwrap()
            };
            let m = TimeMesh::new(0.0, 2.0, 7).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<StateField> =
                (0..=m.steps()).map(|_| Array2::from_shape_fn((1, g.nodes()), |_| rng.random_range(-1.0..1.0))).collect();
            let p = SpaceTimePoint::new(t, vec![x]);
            let forward = interpolate(&g, &m, &s, &p).unwrap()[0] * c;
            let adjoint: f64 = interpolate_adjoint(&g, &m, &p, &[c]).unwrap().iter().map(|&(n, k, j, w)| w * s[n][[k, j]]).sum();
            prop_assert!((forward - adjoint).abs() <= 1e-13 * (1.0 + forward.abs()));
        }

        #[test]
        fn interpolation_stays_within_stencil_range(t in 0.0f64..=1.0, x in -1.0f64..=1.0, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let g = SpatialGrid::periodic(10, -1.0, 1.0).unwrap();
            let m = TimeMesh::new(0.0, 1.0, 5).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<StateField> =
                (0..=m.steps()).map(|_| Array2::from_shape_fn((1, g.nodes()), |_| rng.random_range(-1.0..1.0))).collect();
            let lo = s.iter().flat_map(|a| a.iter().cloned()).fold(f64::INFINITY, f64::min);
            let hi = s.iter().flat_map(|a| a.iter().cloned()).fold(f64::NEG_INFINITY, f64::max);
            let v = interpolate(&g, &m, &s, &SpaceTimePoint::new(t, vec![x])).unwrap()[0];
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
