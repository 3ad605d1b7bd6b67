//! Exact gradients of the discretized penalized loss
//! `(1/n) sum_i |Y_i - u~(X_i)|^2 + lambda |phi - anchor|^2`
//! by reverse accumulation through the stored RK4 trajectory.

use crate::error::{Result, SemiPdeError};
use crate::grid::{InterpStencil, SpatialGrid, StateField, TimeMesh};
use crate::model::{Mechanism, PdeModel};
use crate::nn::squared_distance;
use crate::solver::{solve, Trajectory};
use crate::data::Observation;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub data_loss: f64,
    pub penalty_loss: f64,
    pub grad_theta: Vec<f64>,
    /// Empty unless the mechanism is a network.
    pub grad_phi: Vec<f64>,
}

/// Observations bound to a fixed discretization, with precomputed stencils.
#[derive(Debug, Clone)]
pub struct LossProblem<'a> {
    pub model: &'a PdeModel,
    pub grid: &'a SpatialGrid,
    pub mesh: &'a TimeMesh,
    stencils: Vec<InterpStencil>,
    targets: Vec<Vec<f64>>,
}

impl<'a> LossProblem<'a> {
    pub fn new(model: &'a PdeModel, grid: &'a SpatialGrid, mesh: &'a TimeMesh, obs: &[Observation]) -> Result<Self> {
        if obs.is_empty() {
            return Err(SemiPdeError::EmptyPartition("observations"));
        }
        let stencils =
            obs.iter().map(|o| InterpStencil::locate(grid, mesh, &o.point)).collect::<Result<Vec<_>>>()?;
        let targets = obs.iter().map(|o| o.y.clone()).collect();
        Ok(LossProblem { model, grid, mesh, stencils, targets })
    }

    /// Same points, different targets (e.g. precomputed solutions).
    pub fn with_targets(&self, targets: Vec<Vec<f64>>) -> Self {
        assert_eq!(targets.len(), self.stencils.len());
        LossProblem { targets, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.stencils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stencils.is_empty()
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    /// Trajectory values at every observation point.
    pub fn predictions(&self, traj: &Trajectory) -> Vec<Vec<f64>> {
        let d_y = traj.d_y();
        self.stencils.iter().map(|s| (0..d_y).map(|k| s.apply(&traj.slices, k)).collect()).collect()
    }

    /// `Y_i - u~(X_i)` per observation.
    pub fn residuals(&self, traj: &Trajectory) -> Vec<Vec<f64>> {
        self.predictions(traj)
            .into_iter()
            .zip(&self.targets)
            .map(|(p, y)| y.iter().zip(p).map(|(a, b)| a - b).collect())
            .collect()
    }

    pub fn data_loss(&self, traj: &Trajectory) -> f64 {
        let n = self.len() as f64;
        self.residuals(traj).iter().flatten().map(|r| r * r).sum::<f64>() / n
    }

    pub fn solve(&self, theta: &[f64], mechanism: &Mechanism) -> Result<Trajectory> {
        solve(self.model, theta, mechanism, self.grid, self.mesh)
    }

    /// Penalized loss and its exact gradient. `anchor` defaults to the network's `phi0`.
    pub fn loss_and_grad(
        &self,
        theta: &[f64],
        mechanism: &Mechanism,
        lambda: f64,
        anchor: Option<&[f64]>,
    ) -> Result<LossGradient> {
        let traj = self.solve(theta, mechanism)?;
        Ok(self.loss_and_grad_on(&traj, theta, mechanism, lambda, anchor))
    }

    /// As [`LossProblem::loss_and_grad`] for an already computed trajectory.
    pub fn loss_and_grad_on(
        &self,
        traj: &Trajectory,
        theta: &[f64],
        mechanism: &Mechanism,
        lambda: f64,
        anchor: Option<&[f64]>,
    ) -> LossGradient {
        let n = self.len() as f64;
        let d_y = traj.d_y();
        let steps = traj.mesh.steps();

        // Observation residuals injected as slice cotangents.
        let mut inject: Vec<StateField> = vec![self.grid.zeros(d_y); steps + 1];
        let mut data_loss = 0.0;
        for (s, y) in self.stencils.iter().zip(&self.targets) {
            for k in 0..d_y {
                let r = y[k] - s.apply(&traj.slices, k);
                data_loss += r * r;
                s.scatter(-2.0 * r / n, k, &mut inject);
            }
        }
        data_loss /= n;

        let (grad_theta, mut grad_phi) = self.backward(traj, theta, mechanism, inject);

        let mut penalty_loss = 0.0;
        if let Mechanism::Network(p) = mechanism {
            let anchor = anchor.unwrap_or(p.phi0());
            penalty_loss = lambda * squared_distance(p.phi(), anchor);
            for ((g, w), a) in grad_phi.iter_mut().zip(p.phi()).zip(anchor) {
                *g += 2.0 * lambda * (w - a);
            }
        }
        LossGradient { loss: data_loss + penalty_loss, data_loss, penalty_loss, grad_theta, grad_phi }
    }

    /// Reverse sweep given cotangents on every stored slice.
    pub fn backward(
        &self,
        traj: &Trajectory,
        theta: &[f64],
        mechanism: &Mechanism,
        mut inject: Vec<StateField>,
    ) -> (Vec<f64>, Vec<f64>) {
        let model = self.model;
        let grid = &traj.grid;
        let dt = traj.mesh.dt();
        let d_y = traj.d_y();
        let mut grad_theta = vec![0.0; theta.len()];
        let mut grad_phi = vec![0.0; mechanism.network().map_or(0, |p| p.len())];
        let steps = traj.mesh.steps();
        let mut abar = std::mem::replace(&mut inject[steps], grid.zeros(d_y));

        for n in (0..steps).rev() {
            let t = traj.mesh.time(n);
            let st = &traj.stages[n];
            let mut vjp = |y: &StateField, time: f64, kbar: &StateField| -> StateField {
                let mut acc = grid.zeros(d_y);
                let gp = if grad_phi.is_empty() { None } else { Some(grad_phi.as_mut_slice()) };
                model.rhs_vjp(grid, theta, mechanism, time, y, kbar, &mut acc, &mut grad_theta, gp);
                acc
            };
            let k4 = &abar * (dt / 6.0);
            let y4 = vjp(&st.y4, t + dt, &k4);
            let mut k3 = &abar * (dt / 3.0);
            k3.scaled_add(dt, &y4);
            let y3 = vjp(&st.y3, t + 0.5 * dt, &k3);
            let mut k2 = &abar * (dt / 3.0);
            k2.scaled_add(0.5 * dt, &y3);
            let y2 = vjp(&st.y2, t + 0.5 * dt, &k2);
            let mut k1 = &abar * (dt / 6.0);
            k1.scaled_add(0.5 * dt, &y2);
            let y1 = vjp(&traj.slices[n], t, &k1);
            abar += &y1;
            abar += &y2;
            abar += &y3;
            abar += &y4;
            abar += &inject[n];
        }
        (grad_theta, grad_phi)
    }
}
