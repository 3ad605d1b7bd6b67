//! Confidence intervals for `theta` from a finite-difference estimate of the
//! efficient variance.
//!
//! The data are split in two: part 1 fits `(theta^, f^)`, part 2 estimates the
//! noise level and, for each coordinate `j`, a nuisance direction `g_j` whose
//! solution perturbation best mimics `theta^ + delta e_j`. The residual of that
//! imitation, stacked over coordinates, gives the Gram matrix whose inverse
//! (scaled by `delta^2 sigma^2`) is the variance estimate.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::adjoint::LossProblem;
use crate::data::{Dataset, Observation};
use crate::error::{Result, SemiPdeError};
use crate::estimator::{descend, fit_observations, select_lambda_on, Descent, FitConfig, FitResult, LambdaChoice, Optimizer, Trainable};
use crate::grid::{SpatialGrid, TimeMesh};
use crate::model::{Mechanism, PdeModel, ThetaBox};
use crate::nn::NetworkParams;
use crate::solver::SolverConfig;

/// Largest accepted condition number of the Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Finite-difference step; `0.1 n^{-1/2}` times the narrowest parameter-box width when absent.
    pub delta: Option<f64>,
    /// Penalty of the nuisance fits; the estimation lambda when absent.
    pub lambda_tilde: Option<f64>,
    /// Fraction of the data in part 1.
    pub split: f64,
    pub alphas: Vec<f64>,
    pub nuisance_eta: Option<f64>,
    pub nuisance_epochs: usize,
    /// Nuisance fits stop once `|dL| / eta` falls below this fraction of the starting loss.
    pub nuisance_rel_tol: f64,
    /// `n` of the `n^{-1/2}` interval scaling; both data parts together when absent.
    pub sample_size: Option<usize>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            delta: None,
            lambda_tilde: None,
            split: 0.5,
            alphas: vec![0.2, 0.1, 0.05],
            nuisance_eta: None,
            nuisance_epochs: 200,
            nuisance_rel_tol: 1e-6,
            sample_size: None,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.delta {
            if d == 0.0 || !d.is_finite() {
                return Err(SemiPdeError::InvalidConfig("delta must be finite and non-zero".into()));
            }
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(SemiPdeError::InvalidConfig("split must lie in (0, 1)".into()));
        }
        if self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(SemiPdeError::InvalidConfig("alpha levels must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn delta_for(&self, n: usize, theta_box: &ThetaBox) -> f64 {
        self.delta.unwrap_or_else(|| 0.1 * theta_box.min_width() / (n as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    pub coordinate: usize,
    /// Data term at `g = 0`.
    pub data_term_zero: f64,
    /// Data term at the fitted `g`.
    pub data_term: f64,
    pub epochs: usize,
    /// Set when descent never improved on `g = 0`.
    pub non_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub theta_hat: Vec<f64>,
    pub sigma2: f64,
    /// Row-major `p x p`.
    pub sigma_eff: Vec<Vec<f64>>,
    /// Sample size entering the `n^{-1/2}` interval scaling.
    pub n: usize,
    pub delta: f64,
    pub lambda_tilde: f64,
    pub intervals: Vec<Interval>,
    pub nuisance: Vec<NuisanceDiagnostics>,
}

impl InferenceReport {
    pub fn interval(&self, coordinate: usize, alpha: f64) -> Option<&Interval> {
        self.intervals
            .iter()
            .find(|iv| iv.alpha == alpha && iv.gamma.iter().enumerate().all(|(i, g)| *g == f64::from(u8::from(i == coordinate))))
    }

    /// Standard error `sqrt(Sigma_jj / n)` of coordinate `j`.
    pub fn std_error(&self, j: usize) -> f64 {
        (self.sigma_eff[j][j] / self.n as f64).sqrt()
    }
}

/// Mean squared residual `(1/n) sum |Y_i - u~(X_i)|^2` on held-out data.
pub fn estimate_noise_variance(
    model: &PdeModel,
    fit: &FitResult,
    part2: &[Observation],
    solver: &SolverConfig,
) -> Result<f64> {
    if part2.is_empty() {
        return Err(SemiPdeError::EmptyPartition("part2"));
    }
    let (grid, mesh) = solver.discretize(model)?;
    let prob = LossProblem::new(model, &grid, &mesh, part2)?;
    let traj = prob.solve(&fit.theta, &fit.mechanism)?;
    Ok(prob.data_loss(&traj))
}

/// Discretization valid for every `theta^ + delta e_j`.
fn widened(model: &PdeModel, delta: f64, solver: &SolverConfig) -> Result<(SpatialGrid, TimeMesh)> {
    let mut m = model.clone();
    for (l, u) in m.theta_box.lower.iter_mut().zip(m.theta_box.upper.iter_mut()) {
        *l -= delta.abs();
        *u += delta.abs();
    }
    solver.discretize(&m)
}

fn perturbed(theta: &[f64], j: usize, delta: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    t[j] += delta;
    t
}

#[derive(Debug, Clone)]
pub struct NuisanceFit {
    /// Weights of `f^ + g_j`.
    pub params: NetworkParams,
    pub diagnostics: NuisanceDiagnostics,
}

#[derive(Debug, Clone, Copy)]
pub struct NuisanceSettings {
    pub eta: f64,
    pub epochs: usize,
    pub rel_tol: f64,
    pub optimizer: Optimizer,
}

/// Fits `g_j` in the shifted network space around `f^`:
/// minimizes `(1/n) sum |u~(X_i; theta^ + delta e_j, f^) - u~(X_i; theta^, f^ + g)|^2 + lambda~ |g|^2`,
/// with `f^ + g` parametrized by weights `phi^ + D` and `|g|^2 = |D|^2`.
#[allow(clippy::too_many_arguments)]
pub fn fit_nuisance_direction(
    model: &PdeModel,
    fit: &FitResult,
    part2: &[Observation],
    j: usize,
    delta: f64,
    lambda_tilde: f64,
    settings: &NuisanceSettings,
    solver: &SolverConfig,
) -> Result<NuisanceFit> {
    let (grid, mesh) = widened(model, delta, solver)?;
    nuisance_on(model, fit, part2, j, delta, lambda_tilde, settings, &grid, &mesh)
}

#[allow(clippy::too_many_arguments)]
fn nuisance_on(
    model: &PdeModel,
    fit: &FitResult,
    part2: &[Observation],
    j: usize,
    delta: f64,
    lambda_tilde: f64,
    settings: &NuisanceSettings,
    grid: &SpatialGrid,
    mesh: &TimeMesh,
) -> Result<NuisanceFit> {
    let net = fit
        .network()
        .ok_or_else(|| SemiPdeError::InvalidConfig("inference requires a network mechanism".into()))?;
    if j >= fit.theta.len() {
        return Err(SemiPdeError::InvalidConfig(format!("coordinate {j} out of range")));
    }
    let base = LossProblem::new(model, grid, mesh, part2)?;
    let shifted = base.solve(&perturbed(&fit.theta, j, delta), &fit.mechanism)?;
    let prob = base.with_targets(base.predictions(&shifted));
    let at_zero = prob.data_loss(&prob.solve(&fit.theta, &fit.mechanism)?);

    let diagnostics = |data_term: f64, epochs: usize| NuisanceDiagnostics {
        coordinate: j,
        data_term_zero: at_zero,
        data_term,
        epochs,
        non_decreasing: data_term >= at_zero,
    };
    if at_zero == 0.0 {
        return Ok(NuisanceFit { params: net.clone(), diagnostics: diagnostics(0.0, 0) });
    }

    let anchor = net.phi().to_vec();
    let s = Descent {
        eta: settings.eta,
        max_epochs: settings.epochs,
        tol: settings.rel_tol * at_zero,
        lambda: lambda_tilde,
        anchor: Some(&anchor),
        optimizer: settings.optimizer,
        trainable: Trainable { theta: false, phi: true },
    };
    let r = descend(&prob, None, model, fit.theta.clone(), fit.mechanism.clone(), &s)?;
    let params = r.network().expect("network mechanism").clone();
    let data_term = r.best_val_loss - lambda_tilde * crate::nn::squared_distance(params.phi(), &anchor);
    Ok(NuisanceFit { params, diagnostics: diagnostics(data_term, r.trace.len() - 1) })
}

/// `delta^2 sigma^2 ((1/n) sum_i M_i^T M_i)^{-1}`, with column `j` of `M_i` the
/// residual of the `j`-th nuisance fit at `X_i`.
pub fn estimate_variance(
    model: &PdeModel,
    fit: &FitResult,
    part2: &[Observation],
    nuisance: &[NetworkParams],
    sigma2: f64,
    delta: f64,
    solver: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    let (grid, mesh) = widened(model, delta, solver)?;
    variance_on(model, fit, part2, nuisance, sigma2, delta, &grid, &mesh)
}

#[allow(clippy::too_many_arguments)]
fn variance_on(
    model: &PdeModel,
    fit: &FitResult,
    part2: &[Observation],
    nuisance: &[NetworkParams],
    sigma2: f64,
    delta: f64,
    grid: &SpatialGrid,
    mesh: &TimeMesh,
) -> Result<Vec<Vec<f64>>> {
    let p = fit.theta.len();
    if nuisance.len() != p {
        return Err(SemiPdeError::InvalidConfig(format!("expected {p} nuisance fits, got {}", nuisance.len())));
    }
    let prob = LossProblem::new(model, grid, mesh, part2)?;
    let columns: Vec<Vec<Vec<f64>>> = (0..p)
        .into_par_iter()
        .map(|j| -> Result<Vec<Vec<f64>>> {
            let a = prob.predictions(&prob.solve(&perturbed(&fit.theta, j, delta), &fit.mechanism)?);
            let b = prob.predictions(&prob.solve(&fit.theta, &Mechanism::Network(nuisance[j].clone()))?);
            Ok(a.into_iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect()).collect())
        })
        .collect::<Result<_>>()?;
    let n = prob.len();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            for b in 0..p {
                gram[(a, b)] += columns[a][i].iter().zip(&columns[b][i]).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    gram /= n as f64;
    gram = (&gram + gram.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(SemiPdeError::SingularMatrix { condition });
    }
    let inv = gram.try_inverse().ok_or(SemiPdeError::SingularMatrix { condition })?;
    let scale = delta * delta * sigma2;
    let mut out = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in 0..p {
            out[a][b] = 0.5 * scale * (inv[(a, b)] + inv[(b, a)]);
        }
    }
    Ok(out)
}

pub fn normal_quantile(q: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(q)
}

/// `gamma^T theta^ -/+ n^{-1/2} z_{1-alpha/2} sqrt(gamma^T Sigma gamma)`.
pub fn confidence_interval(theta_hat: &[f64], sigma_eff: &[Vec<f64>], gamma: &[f64], alpha: f64, n: usize) -> Result<Interval> {
    let norm = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 || gamma.len() != theta_hat.len() {
        return Err(SemiPdeError::InvalidConfig("gamma must be a unit vector of length p".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) || n == 0 {
        return Err(SemiPdeError::InvalidConfig("alpha must lie in (0, 1) and n >= 1".into()));
    }
    let center: f64 = gamma.iter().zip(theta_hat).map(|(g, t)| g * t).sum();
    let mut quad = 0.0;
    for (a, ga) in gamma.iter().enumerate() {
        for (b, gb) in gamma.iter().enumerate() {
            quad += ga * sigma_eff[a][b] * gb;
        }
    }
    if !(quad > 0.0) {
        return Err(SemiPdeError::SingularMatrix { condition: f64::INFINITY });
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * quad.sqrt() / (n as f64).sqrt();
    Ok(Interval { gamma: gamma.to_vec(), alpha, center, lo: center - half, hi: center + half })
}

/// Noise variance, nuisance fits, variance estimate and coordinate intervals for a
/// completed fit, using `part2` as the held-out half.
pub fn infer(
    model: &PdeModel,
    fit: &FitResult,
    part2: &[Observation],
    config: &InferenceConfig,
    fit_config: &FitConfig,
    solver: &SolverConfig,
) -> Result<InferenceReport> {
    config.validate()?;
    let n = config.sample_size.unwrap_or(fit.n_train + fit.n_val + part2.len());
    if n == 0 {
        return Err(SemiPdeError::EmptyPartition("part2"));
    }
    let delta = config.delta_for(n, &model.theta_box);
    let lambda_tilde = config.lambda_tilde.unwrap_or(fit.lambda);
    let sigma2 = estimate_noise_variance(model, fit, part2, solver)?;
    let settings = NuisanceSettings {
        eta: config.nuisance_eta.unwrap_or(fit_config.eta),
        epochs: config.nuisance_epochs,
        rel_tol: config.nuisance_rel_tol,
        optimizer: fit_config.optimizer,
    };
    let (grid, mesh) = widened(model, delta, solver)?;
    let p = fit.theta.len();
    let fits: Vec<NuisanceFit> = (0..p)
        .into_par_iter()
        .map(|j| nuisance_on(model, fit, part2, j, delta, lambda_tilde, &settings, &grid, &mesh))
        .collect::<Result<_>>()?;
    let params: Vec<NetworkParams> = fits.iter().map(|f| f.params.clone()).collect();
    let sigma_eff = variance_on(model, fit, part2, &params, sigma2, delta, &grid, &mesh)?;
    let mut intervals = Vec::new();
    for j in 0..p {
        let mut gamma = vec![0.0; p];
        gamma[j] = 1.0;
        for &alpha in &config.alphas {
            intervals.push(confidence_interval(&fit.theta, &sigma_eff, &gamma, alpha, n)?);
        }
    }
    Ok(InferenceReport {
        theta_hat: fit.theta.clone(),
        sigma2,
        sigma_eff,
        n,
        delta,
        lambda_tilde,
        intervals,
        nuisance: fits.into_iter().map(|f| f.diagnostics).collect(),
    })
}

/// Splits the dataset into parts, fits on part 1 and runs [`infer`] on part 2.
pub fn fit_and_infer(
    model: &PdeModel,
    dataset: &Dataset,
    fit_config: &FitConfig,
    config: &InferenceConfig,
    solver: &SolverConfig,
) -> Result<(FitResult, InferenceReport)> {
    config.validate()?;
    let parts = if (config.split - 0.5).abs() < 1e-12 {
        dataset.partitions.clone()
    } else {
        crate::data::Partitions::new(dataset.len(), dataset.seed, 0.8, config.split)?
    };
    let (train_idx, val_idx) = parts.part1_split();
    let train = dataset.subset(&train_idx);
    let val = dataset.subset(&val_idx);
    let part2 = dataset.subset(&parts.part2);
    let fit = match fit_config.lambda {
        LambdaChoice::Fixed(l) => fit_observations(model, &train, &val, l, fit_config, solver)?,
        LambdaChoice::Select => select_lambda_on(model, &train, &val, fit_config, solver)?.1,
    };
    let report = infer(model, &fit, &part2, config, fit_config, solver)?;
    Ok((fit, report))
}
