//! Method-of-lines forward solver: central stencils in space, classic RK4 in time.
//!
//! Every time slice and the three intermediate stage states of each step are kept,
//! so the adjoint sweep can replay the scheme exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemiPdeError};
use crate::grid::{interpolate, SpaceTimePoint, SpatialGrid, StateField, TimeMesh};
use crate::model::{Mechanism, PdeModel};

/// States with a magnitude beyond this are treated as blown up.
pub const BLOWUP_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Spatial nodes (ignored by point models).
    pub nodes: usize,
    /// Safety factor on the explicit step limit, in `(0, 1]`.
    pub c_cfl: f64,
    /// Accuracy target reported by [`verify_accuracy`].
    pub eps_target: f64,
    /// Upper bound on the step regardless of stiffness.
    pub max_dt: f64,
    pub min_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { nodes: 64, c_cfl: 0.4, eps_target: 1e-4, max_dt: 0.01, min_steps: 1 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_cfl > 0.0 && self.c_cfl <= 1.0) {
            return Err(SemiPdeError::InvalidConfig(format!("c_cfl must lie in (0, 1], got {}", self.c_cfl)));
        }
        if !(self.max_dt > 0.0) {
            return Err(SemiPdeError::InvalidConfig("max_dt must be positive".into()));
        }
        Ok(())
    }

    /// Grid and time mesh for `model`, with a step that is stable for every `theta`
    /// in the model's parameter box.
    pub fn discretize(&self, model: &PdeModel) -> Result<(SpatialGrid, TimeMesh)> {
        self.validate()?;
        let grid = model.grid(self.nodes)?;
        let rho = model
            .parametric
            .stiffness(&grid, &model.theta_box.lower)
            .max(model.parametric.stiffness(&grid, &model.theta_box.upper));
        let mut dt = self.max_dt;
        if rho > 0.0 {
            dt = dt.min(2.0 * self.c_cfl / rho);
        }
        let mesh = TimeMesh::with_max_dt(model.domain.t0, model.domain.t1, dt, self.min_steps)?;
        Ok((grid, mesh))
    }
}

/// Intermediate RK4 stage states `Y2, Y3, Y4` of one step (`Y1` is the slice itself).
#[derive(Debug, Clone)]
pub struct StepStages {
    pub y2: StateField,
    pub y3: StateField,
    pub y4: StateField,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: SpatialGrid,
    pub mesh: TimeMesh,
    pub theta: Vec<f64>,
    pub slices: Vec<StateField>,
    pub stages: Vec<StepStages>,
}

impl Trajectory {
    pub fn d_y(&self) -> usize {
        self.slices[0].nrows()
    }

    pub fn eval(&self, p: &SpaceTimePoint) -> Result<Vec<f64>> {
        interpolate(&self.grid, &self.mesh, &self.slices, p)
    }

    /// Long-format CSV: `t, x, component, value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,x,component,value")?;
        for (n, slice) in self.slices.iter().enumerate() {
            let t = self.mesh.time(n);
            for k in 0..slice.nrows() {
                for j in 0..slice.ncols() {
                    let x = if self.grid.dim() == 0 { 0.0 } else { self.grid.node_x(j) };
                    writeln!(w, "{t},{x},{k},{}", slice[[k, j]])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_finite(u: &StateField, step: usize) -> Result<()> {
    if u.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_LIMIT) {
        Ok(())
    } else {
        Err(SemiPdeError::Diverged { step })
    }
}

/// Largest step accepted by [`solve`] for this `theta`.
pub fn stability_bound(model: &PdeModel, grid: &SpatialGrid, theta: &[f64]) -> f64 {
    let rho = model.parametric.stiffness(grid, theta);
    if rho > 0.0 { 2.0 / rho } else { f64::INFINITY }
}

/// Integrates `du/dt = P(u; theta) + s + F(V)` from the model's initial condition.
pub fn solve(
    model: &PdeModel,
    theta: &[f64],
    mechanism: &Mechanism,
    grid: &SpatialGrid,
    mesh: &TimeMesh,
) -> Result<Trajectory> {
    let u0 = model.initial_field(grid);
    solve_from(model, theta, mechanism, grid, mesh, u0)
}

/// As [`solve`] but starting from an explicit initial field.
pub fn solve_from(
    model: &PdeModel,
    theta: &[f64],
    mechanism: &Mechanism,
    grid: &SpatialGrid,
    mesh: &TimeMesh,
    u0: StateField,
) -> Result<Trajectory> {
    if theta.len() != model.p() {
        return Err(SemiPdeError::InvalidConfig(format!("expected {} parameters, got {}", model.p(), theta.len())));
    }
    let dt = mesh.dt();
    let bound = stability_bound(model, grid, theta);
    if dt > bound {
        return Err(SemiPdeError::UnstableConfig { dt, bound });
    }
    check_finite(&u0, 0)?;
    let steps = mesh.steps();
    let mut slices = Vec::with_capacity(steps + 1);
    let mut stages = Vec::with_capacity(steps);
    slices.push(u0);
    for n in 0..steps {
        let t = mesh.time(n);
        let u = &slices[n];
        let k1 = model.rhs(grid, theta, mechanism, t, u);
        let y2 = u + &(&k1 * (0.5 * dt));
        let k2 = model.rhs(grid, theta, mechanism, t + 0.5 * dt, &y2);
        let y3 = u + &(&k2 * (0.5 * dt));
        let k3 = model.rhs(grid, theta, mechanism, t + 0.5 * dt, &y3);
        let y4 = u + &(&k3 * dt);
        let k4 = model.rhs(grid, theta, mechanism, t + dt, &y4);
        let mut next = u.clone();
        let c = dt / 6.0;
        next.scaled_add(c, &k1);
        next.scaled_add(2.0 * c, &k2);
        next.scaled_add(2.0 * c, &k3);
        next.scaled_add(c, &k4);
        check_finite(&next, n + 1)?;
        slices.push(next);
        stages.push(StepStages { y2, y3, y4 });
    }
    Ok(Trajectory { grid: grid.clone(), mesh: *mesh, theta: theta.to_vec(), slices, stages })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// RMS difference between the base and refined solves on shared space-time nodes.
    pub eps_u: f64,
    pub target: f64,
    pub within_target: bool,
}

/// Compares a solve at `(N_x, dt)` with one at `(2 N_x, dt / 4)` on their shared nodes.
pub fn verify_accuracy(
    model: &PdeModel,
    theta: &[f64],
    mechanism: &Mechanism,
    config: &SolverConfig,
) -> Result<AccuracyReport> {
    let (grid, mesh) = config.discretize(model)?;
    verify_accuracy_on(model, theta, mechanism, &grid, &mesh, config.eps_target)
}

pub fn verify_accuracy_on(
    model: &PdeModel,
    theta: &[f64],
    mechanism: &Mechanism,
    grid: &SpatialGrid,
    mesh: &TimeMesh,
    target: f64,
) -> Result<AccuracyReport> {
    let coarse = solve(model, theta, mechanism, grid, mesh)?;
    let space = if grid.dim() == 0 { 1 } else { 2 };
    let fine_grid = grid.refined(space)?;
    let fine = solve(model, theta, mechanism, &fine_grid, &mesh.refined(4))?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (n, slice) in coarse.slices.iter().enumerate() {
        let f = &fine.slices[4 * n];
        for k in 0..slice.nrows() {
            for j in 0..slice.ncols() {
                let d = slice[[k, j]] - f[[k, space * j]];
                sum += d * d;
                count += 1;
            }
        }
    }
    let eps_u = (sum / count as f64).sqrt();
    Ok(AccuracyReport { eps_u, target, within_target: eps_u <= target })
}
