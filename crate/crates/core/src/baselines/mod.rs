//! Comparison estimators: parametric-only PDE fit, pure network regression on
//! `(t, x)`, and a joint residual-penalized (PINN-style) fit.

mod pinn;

pub use pinn::{pinn_fit, pinn_fit_on, pinn_initial_params, pinn_objective, PinnConfig, PinnLossSplit};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::adjoint::LossProblem;
use crate::data::{Dataset, Observation};
use crate::error::{Result, SemiPdeError};
use crate::estimator::{descend, Descent, FitConfig, Optimizer, TraceRow, Trainable};
use crate::grid::SpaceTimePoint;
use crate::model::{Domain, Mechanism, PdeModel};
use crate::nn::{raw_backward, raw_forward, NetArchitecture, NetworkParams};
use crate::solver::{SolverConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Parametric,
    Nonparametric,
    PinnJoint,
}

/// Affine map of `(t, x)` onto `[-1, 1]^{1 + dim}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputScaling {
    pub fn for_domain(d: &Domain) -> Self {
        let mut lower = vec![d.t0];
        let mut upper = vec![d.t1];
        if let Some((lo, hi)) = d.x {
            lower.push(lo);
            upper.push(hi);
        }
        InputScaling { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// `d(scaled)/d(raw)` per coordinate.
    pub fn factor(&self, i: usize) -> f64 {
        2.0 / (self.upper[i] - self.lower[i])
    }

    pub fn apply(&self, p: &SpaceTimePoint) -> Vec<f64> {
        std::iter::once(p.t)
            .chain(p.x.iter().copied())
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) * self.factor(i) - 1.0)
            .collect()
    }

    /// Scaled inputs as columns.
    pub fn matrix(&self, points: &[SpaceTimePoint]) -> Array2<f64> {
        let cols: Vec<Vec<f64>> = points.iter().map(|p| self.apply(p)).collect();
        crate::nn::columns(self.dim(), &cols)
    }
}

/// A fitted solution surface.
#[derive(Debug, Clone)]
pub enum FieldEstimate {
    /// Numerical solution of a fitted model.
    Solution(Trajectory),
    /// Unshifted network of scaled `(t, x)`.
    Network { params: NetworkParams, scaling: InputScaling },
}

impl FieldEstimate {
    pub fn eval(&self, p: &SpaceTimePoint) -> Result<Vec<f64>> {
        match self {
            FieldEstimate::Solution(tr) => tr.eval(p),
            FieldEstimate::Network { params, scaling } => {
                let v = scaling.matrix(std::slice::from_ref(p));
                Ok(params.forward_unshifted(v.view()).column(0).to_vec())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub kind: BaselineKind,
    /// Absent for the nonparametric baseline.
    pub theta: Option<Vec<f64>>,
    pub estimate: FieldEstimate,
    pub best_epoch: usize,
    pub trace: Vec<TraceRow>,
    /// Only for the joint fit.
    pub loss_split: Option<PinnLossSplit>,
}

/// `theta~ = argmin (1/n) sum |Y_i - u~(X_i; theta, F = 0)|^2` by the estimator's descent.
pub fn parametric_fit(
    model: &PdeModel,
    dataset: &Dataset,
    config: &FitConfig,
    solver: &SolverConfig,
) -> Result<BaselineResult> {
    let train = dataset.subset(&dataset.partitions.train);
    let val = dataset.subset(&dataset.partitions.validation);
    parametric_fit_on(model, &train, &val, config, solver)
}

pub fn parametric_fit_on(
    model: &PdeModel,
    train: &[Observation],
    val: &[Observation],
    config: &FitConfig,
    solver: &SolverConfig,
) -> Result<BaselineResult> {
    config.validate()?;
    let (grid, mesh) = solver.discretize(model)?;
    let tp = LossProblem::new(model, &grid, &mesh, train)?;
    let vp = LossProblem::new(model, &grid, &mesh, val)?;
    let theta = config.theta_init.clone().unwrap_or_else(|| model.theta_box.center());
    let s = Descent {
        eta: config.eta,
        max_epochs: config.max_epochs,
        tol: config.tol,
        lambda: 0.0,
        anchor: None,
        optimizer: config.optimizer,
        trainable: Trainable { theta: true, phi: false },
    };
    let r = descend(&tp, Some(&vp), model, theta, Mechanism::Zero, &s)?;
    let traj = tp.solve(&r.theta, &Mechanism::Zero)?;
    Ok(BaselineResult {
        kind: BaselineKind::Parametric,
        theta: Some(r.theta),
        estimate: FieldEstimate::Solution(traj),
        best_epoch: r.best_epoch,
        trace: r.trace,
        loss_split: None,
    })
}

/// Flat-vector descent with validation early stopping, shared by the network baselines.
pub(crate) struct FlatDescent {
    pub eta: f64,
    pub max_epochs: usize,
    pub tol: f64,
    pub optimizer: Optimizer,
}

pub(crate) struct FlatOutcome {
    pub params: Vec<f64>,
    pub best_epoch: usize,
    pub trace: Vec<TraceRow>,
}

impl FlatDescent {
    pub fn run(
        &self,
        mut w: Vec<f64>,
        mut loss_grad: impl FnMut(&[f64]) -> (f64, Vec<f64>),
        mut val_loss: impl FnMut(&[f64]) -> f64,
        theta_of: impl Fn(&[f64]) -> Vec<f64>,
        project: impl Fn(&mut [f64]),
    ) -> Result<FlatOutcome> {
        let mut m = vec![0.0; w.len()];
        let mut v = vec![0.0; w.len()];
        let mut trace = Vec::new();
        let mut best = (f64::INFINITY, 0usize, w.clone());
        let (mut loss, mut grad) = loss_grad(&w);
        let mut prev: Option<f64> = None;
        for epoch in 0..=self.max_epochs {
            let vl = val_loss(&w);
            trace.push(TraceRow { epoch, train_loss: loss, val_loss: vl, phi_distance: 0.0, theta: theta_of(&w) });
            if vl < best.0 {
                best = (vl, epoch, w.clone());
            }
            if let Some(p) = prev {
                if (loss - p).abs() / self.eta <= self.tol {
                    break;
                }
            }
            prev = Some(loss);
            if epoch == self.max_epochs {
                break;
            }
            let dir: Vec<f64> = match self.optimizer {
                Optimizer::GradientDescent => grad.clone(),
                Optimizer::Adam { beta1, beta2, eps } => {
                    let t = (epoch + 1) as i32;
                    let (b1, b2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                    grad.iter()
                        .enumerate()
                        .map(|(i, g)| {
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                            (m[i] / b1) / ((v[i] / b2).sqrt() + eps)
                        })
                        .collect()
                }
            };
            let mut eta = self.eta;
            let mut accepted = false;
            for _ in 0..=crate::estimator::MAX_STEP_REDUCTIONS {
                let mut cand: Vec<f64> = w.iter().zip(&dir).map(|(a, d)| a - eta * d).collect();
                project(&mut cand);
                let (l, g) = loss_grad(&cand);
                if l.is_finite() && g.iter().all(|x| x.is_finite()) {
                    w = cand;
                    loss = l;
                    grad = g;
                    accepted = true;
                    break;
                }
                eta *= 0.1;
            }
            if !accepted {
                return Err(SemiPdeError::AllStepsDiverged { epoch });
            }
        }
        Ok(FlatOutcome { params: best.2, best_epoch: best.1, trace })
    }
}

/// Mean squared error of an unshifted network on scaled inputs, and its weight gradient.
pub(crate) fn regression_loss_grad(
    arch: &NetArchitecture,
    w: &[f64],
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let (out, cache) = raw_forward(arch, w, inputs.view(), want_grad);
    let n = inputs.ncols() as f64;
    let diff = &out - targets;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let mut g = Vec::new();
    if want_grad {
        g = vec![0.0; w.len()];
        let cot = diff * (2.0 / n);
        raw_backward(arch, w, &cache.expect("cache"), cot, Some(&mut g));
    }
    (loss, g)
}

pub(crate) fn target_matrix(obs: &[Observation]) -> Array2<f64> {
    let d_y = obs.first().map_or(0, |o| o.y.len());
    Array2::from_shape_fn((d_y, obs.len()), |(k, i)| obs[i].y[k])
}

/// Plain regression of `Y` on `(t, x)` with an unshifted network.
pub fn nonparametric_fit(
    dataset: &Dataset,
    domain: &Domain,
    hidden: &[usize],
    config: &FitConfig,
) -> Result<BaselineResult> {
    let train = dataset.subset(&dataset.partitions.train);
    let val = dataset.subset(&dataset.partitions.validation);
    nonparametric_fit_on(&train, &val, domain, hidden, config)
}

pub fn nonparametric_fit_on(
    train: &[Observation],
    val: &[Observation],
    domain: &Domain,
    hidden: &[usize],
    config: &FitConfig,
) -> Result<BaselineResult> {
    config.validate()?;
    let first = train.first().ok_or(SemiPdeError::EmptyPartition("train"))?;
    if val.is_empty() {
        return Err(SemiPdeError::EmptyPartition("validation"));
    }
    let scaling = InputScaling::for_domain(domain);
    let arch = NetArchitecture::new(scaling.dim(), hidden.to_vec(), first.y.len(), config.activation_power)?;
    let init = NetworkParams::init_reference(&arch, config.seed)?;
    let pts = |o: &[Observation]| o.iter().map(|x| x.point.clone()).collect::<Vec<_>>();
    let (xt, yt) = (scaling.matrix(&pts(train)), target_matrix(train));
    let (xv, yv) = (scaling.matrix(&pts(val)), target_matrix(val));
    let gd = FlatDescent { eta: config.eta, max_epochs: config.max_epochs, tol: config.tol, optimizer: config.optimizer };
    let out = gd.run(
        init.phi().to_vec(),
        |w| regression_loss_grad(&arch, w, &xt, &yt, true),
        |w| regression_loss_grad(&arch, w, &xv, &yv, false).0,
        |_| Vec::new(),
        |_| {},
    )?;
    let params = init.with_phi(out.params);
    Ok(BaselineResult {
        kind: BaselineKind::Nonparametric,
        theta: None,
        estimate: FieldEstimate::Network { params, scaling },
        best_epoch: out.best_epoch,
        trace: out.trace,
        loss_split: None,
    })
}
