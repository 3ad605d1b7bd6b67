//! Penalized profiling M-estimation by full-batch gradient descent with
//! validation-based early stopping.
//!
//! Each epoch solves the model once at the current iterate; that trajectory gives
//! both the validation loss of the iterate and the training gradient for the next step.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{LossGradient, LossProblem};
use crate::data::{Dataset, Observation};
use crate::error::{Result, SemiPdeError};
use crate::model::{Mechanism, PdeModel};
use crate::nn::{squared_distance, NetArchitecture, NetworkParams};
use crate::solver::{SolverConfig, Trajectory};

/// Number of tenfold step reductions tried before giving up on an iteration.
pub const MAX_STEP_REDUCTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    Select,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub eta: f64,
    pub max_epochs: usize,
    pub tol: f64,
    pub lambda: LambdaChoice,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Hidden widths of the mechanism network.
    pub hidden: Vec<usize>,
    pub activation_power: u32,
    /// Starting parameter; the center of the parameter box when absent.
    pub theta_init: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let mut grid = vec![0.0];
        grid.extend((0..8).map(|i| 10f64.powf(-6.0 + 4.0 * i as f64 / 7.0)));
        FitConfig {
            eta: 1e-2,
            max_epochs: 5000,
            tol: 1e-8,
            lambda: LambdaChoice::Select,
            lambda_grid: grid,
            seed: 0,
            optimizer: Optimizer::GradientDescent,
            hidden: vec![16, 64, 64, 16],
            activation_power: 1,
            theta_init: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || self.max_epochs == 0 || !(self.tol >= 0.0) {
            return Err(SemiPdeError::InvalidConfig("eta and max_epochs must be positive, tol non-negative".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(SemiPdeError::InvalidConfig("lambda grid must be non-negative".into()));
        }
        if let LambdaChoice::Fixed(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(SemiPdeError::InvalidConfig("lambda must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn architecture(&self, model: &PdeModel) -> Result<NetArchitecture> {
        NetArchitecture::new(model.feature_dim(), self.hidden.clone(), model.d_y, self.activation_power)
    }

    pub fn initial_network(&self, model: &PdeModel) -> Result<NetworkParams> {
        NetworkParams::init_reference(&self.architecture(model)?, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub phi_distance: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub mechanism: Mechanism,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub trace: Vec<TraceRow>,
    pub lambda: f64,
    pub stop: StopReason,
    /// Observations used for the gradient.
    pub n_train: usize,
    pub n_val: usize,
    pub step_reductions: usize,
}

impl FitResult {
    pub fn network(&self) -> Option<&NetworkParams> {
        self.mechanism.network()
    }

    /// Epoch, losses, `|phi - phi0|`, then one column per parameter.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let p = self.theta.len();
        let theta_cols: Vec<String> = (1..=p).map(|i| format!("theta{i}")).collect();
        writeln!(w, "epoch,train_loss,val_loss,phi_distance,{}", theta_cols.join(","))?;
        for r in &self.trace {
            let th: Vec<String> = r.theta.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.phi_distance, th.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Which blocks move during descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub theta: bool,
    pub phi: bool,
}

/// Settings of one descent run.
#[derive(Debug, Clone)]
pub struct Descent<'a> {
    pub eta: f64,
    pub max_epochs: usize,
    pub tol: f64,
    pub lambda: f64,
    /// Penalty center; `phi0` when absent.
    pub anchor: Option<&'a [f64]>,
    pub optimizer: Optimizer,
    pub trainable: Trainable,
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn penalized_val(val: &LossProblem, traj: &Trajectory, mech: &Mechanism, lambda: f64, anchor: Option<&[f64]>) -> f64 {
    let pen = match mech {
        Mechanism::Network(p) => lambda * squared_distance(p.phi(), anchor.unwrap_or(p.phi0())),
        _ => 0.0,
    };
    val.data_loss(traj) + pen
}

/// Gradient descent from `(theta, mechanism)`. With a validation problem the
/// returned iterate minimizes the penalized validation loss; without one it
/// minimizes the training objective. The quadratic penalty is applied in closed
/// form (proximal step), which coincides with the plain gradient step to first
/// order in `eta * lambda` and stays stable when `lambda` is huge.
pub fn descend(
    train: &LossProblem,
    val: Option<&LossProblem>,
    model: &PdeModel,
    theta: Vec<f64>,
    mechanism: Mechanism,
    s: &Descent,
) -> Result<FitResult> {
    let mut theta = theta;
    model.theta_box.project(&mut theta);
    let mut mech = mechanism;
    let mut traj = train.solve(&theta, &mech)?;
    let score = |traj: &Trajectory, mech: &Mechanism, g: Option<&LossGradient>| -> f64 {
        match val {
            Some(v) => penalized_val(v, traj, mech, s.lambda, s.anchor),
            None => g.map(|g| g.loss).unwrap_or(f64::INFINITY),
        }
    };
    let n_params = mech.network().map_or(0, NetworkParams::len) + theta.len();
    let mut adam = AdamState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 };

    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>, Mechanism)> = None;
    let mut prev_loss: Option<f64> = None;
    let mut stop = StopReason::MaxEpochs;
    let mut reductions = 0;

    for epoch in 0..=s.max_epochs {
        let g = train.loss_and_grad_on(&traj, &theta, &mech, s.lambda, s.anchor);
        let val_loss = score(&traj, &mech, Some(&g));
        let phi_distance = mech.network().map_or(0.0, |p| p.penalty().sqrt());
        trace.push(TraceRow { epoch, train_loss: g.loss, val_loss, phi_distance, theta: theta.clone() });
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, theta.clone(), mech.clone()));
        }
        if let Some(prev) = prev_loss {
            if (g.loss - prev).abs() / s.eta <= s.tol {
                stop = StopReason::Tolerance;
                break;
            }
        }
        prev_loss = Some(g.loss);
        if epoch == s.max_epochs {
            break;
        }

        // Direction for the data term; the penalty is handled by the proximal map.
        let mut dir_theta = if s.trainable.theta { g.grad_theta.clone() } else { vec![0.0; theta.len()] };
        let mut dir_phi: Vec<f64> = Vec::new();
        if let (true, Mechanism::Network(p)) = (s.trainable.phi, &mech) {
            let anchor = s.anchor.unwrap_or(p.phi0());
            dir_phi = g
                .grad_phi
                .iter()
                .zip(p.phi())
                .zip(anchor)
                .map(|((gp, w), a)| gp - 2.0 * s.lambda * (w - a))
                .collect();
        }
        if let Optimizer::Adam { beta1, beta2, eps } = s.optimizer {
            adam.t += 1;
            let (b1t, b2t) = (1.0 - beta1.powi(adam.t), 1.0 - beta2.powi(adam.t));
            for (i, d) in dir_theta.iter_mut().chain(dir_phi.iter_mut()).enumerate() {
                adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * *d;
                adam.v[i] = beta2 * adam.v[i] + (1.0 - beta2) * *d * *d;
                *d = (adam.m[i] / b1t) / ((adam.v[i] / b2t).sqrt() + eps);
            }
        }

        let mut eta = s.eta;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_REDUCTIONS {
            let mut th = theta.clone();
            for (t, d) in th.iter_mut().zip(&dir_theta) {
                *t -= eta * d;
            }
            model.theta_box.project(&mut th);
            let new_mech = match &mech {
                Mechanism::Network(p) if s.trainable.phi => {
                    let anchor = s.anchor.unwrap_or(p.phi0());
                    let shrink = 1.0 / (1.0 + 2.0 * eta * s.lambda);
                    let phi = p
                        .phi()
                        .iter()
                        .zip(&dir_phi)
                        .zip(anchor)
                        .map(|((w, d), a)| a + (w - eta * d - a) * shrink)
                        .collect();
                    Mechanism::Network(p.with_phi(phi))
                }
                other => other.clone(),
            };
            match train.solve(&th, &new_mech) {
                Ok(tr) => {
                    accepted = Some((th, new_mech, tr));
                    break;
                }
                Err(e) if e.is_divergence() => {
                    eta *= 0.1;
                    reductions += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let Some((th, m, tr)) = accepted else {
            return Err(SemiPdeError::AllStepsDiverged { epoch });
        };
        theta = th;
        mech = m;
        traj = tr;
    }

    let (best_val_loss, best_epoch, theta, mechanism) = best.expect("at least one epoch evaluated");
    Ok(FitResult {
        theta,
        mechanism,
        best_val_loss,
        best_epoch,
        trace,
        lambda: s.lambda,
        stop,
        n_train: train.len(),
        n_val: val.map_or(0, LossProblem::len),
        step_reductions: reductions,
    })
}

/// Fits `(theta, phi)` on explicit train/validation observations with a fixed `lambda`.
pub fn fit_observations(
    model: &PdeModel,
    train: &[Observation],
    val: &[Observation],
    lambda: f64,
    config: &FitConfig,
    solver: &SolverConfig,
) -> Result<FitResult> {
    config.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(SemiPdeError::EmptyPartition("train"));
    }
    if val.is_empty() {
        return Err(SemiPdeError::EmptyPartition("validation"));
    }
    let (grid, mesh) = solver.discretize(model)?;
    let tp = LossProblem::new(model, &grid, &mesh, train)?;
    let vp = LossProblem::new(model, &grid, &mesh, val)?;
    let theta = config.theta_init.clone().unwrap_or_else(|| model.theta_box.center());
    let net = config.initial_network(model)?;
    let s = Descent {
        eta: config.eta,
        max_epochs: config.max_epochs,
        tol: config.tol,
        lambda,
        anchor: None,
        optimizer: config.optimizer,
        trainable: Trainable { theta: true, phi: true },
    };
    descend(&tp, Some(&vp), model, theta, Mechanism::Network(net), &s)
}

fn fixed_lambda(config: &FitConfig) -> Option<f64> {
    match config.lambda {
        LambdaChoice::Fixed(l) => Some(l),
        LambdaChoice::Select => None,
    }
}

/// Fit on the dataset's train/validation partition. `LambdaChoice::Select` runs [`select_lambda`].
pub fn fit(model: &PdeModel, dataset: &Dataset, config: &FitConfig, solver: &SolverConfig) -> Result<FitResult> {
    let train = dataset.subset(&dataset.partitions.train);
    let val = dataset.subset(&dataset.partitions.validation);
    match fixed_lambda(config) {
        Some(l) => fit_observations(model, &train, &val, l, config, solver),
        None => select_lambda_on(model, &train, &val, config, solver).map(|(_, f)| f),
    }
}

/// Unpenalized validation MSE of a fitted iterate.
pub fn validation_mse(model: &PdeModel, fit: &FitResult, val: &[Observation], solver: &SolverConfig) -> Result<f64> {
    let (grid, mesh) = solver.discretize(model)?;
    let vp = LossProblem::new(model, &grid, &mesh, val)?;
    let traj = vp.solve(&fit.theta, &fit.mechanism)?;
    Ok(vp.data_loss(&traj))
}

/// Fits every grid value and keeps the one with the smallest unpenalized
/// validation MSE (ties go to the smaller lambda).
pub fn select_lambda(
    model: &PdeModel,
    dataset: &Dataset,
    config: &FitConfig,
    solver: &SolverConfig,
) -> Result<(f64, FitResult)> {
    let train = dataset.subset(&dataset.partitions.train);
    let val = dataset.subset(&dataset.partitions.validation);
    select_lambda_on(model, &train, &val, config, solver)
}

pub fn select_lambda_on(
    model: &PdeModel,
    train: &[Observation],
    val: &[Observation],
    config: &FitConfig,
    solver: &SolverConfig,
) -> Result<(f64, FitResult)> {
    if config.lambda_grid.is_empty() {
        return Err(SemiPdeError::InvalidConfig("lambda grid is empty".into()));
    }
    let mut grid = config.lambda_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let runs: Vec<Result<(f64, FitResult)>> = grid
        .par_iter()
        .map(|&l| {
            let f = fit_observations(model, train, val, l, config, solver)?;
            let mse = validation_mse(model, &f, val, solver)?;
            Ok((mse, f))
        })
        .collect();
    let mut best: Option<(f64, FitResult)> = None;
    let mut last_err = None;
    for r in runs {
        match r {
            Ok((mse, f)) => {
                if best.as_ref().is_none_or(|b| mse < b.0) {
                    best = Some((mse, f));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, f)) => Ok((f.lambda, f)),
        None => Err(last_err.expect("non-empty grid")),
    }
}
