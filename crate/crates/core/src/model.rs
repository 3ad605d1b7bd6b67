//! Declarative semiparametric PDE models.
//!
//! A model describes the evolution `du/dt = P(u; theta) + s(t, x) + F(V)` where
//! `P` is the parametric operator, `s` an optional known source, and `F` the
//! mechanism evaluated nodewise on the feature vector `V`. Equations that are
//! naturally written in one variable (e.g. `du/dx = theta u + F`) use the
//! zero-dimensional point grid and march in that variable as "time".

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SemiPdeError};
use crate::grid::{SpatialGrid, StateField};
use crate::nn::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    Periodic,
    /// Zero flux, implemented with mirrored ghost nodes.
    NeumannZero,
}

/// One input of the mechanism at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureTag {
    Time,
    Space(usize),
    State(usize),
    StateDx(usize),
}

/// Value and first three derivatives of `u` at a point, used by residual-based fits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointJet {
    pub u: Vec<f64>,
    pub u_t: Vec<f64>,
    pub u_x: Vec<f64>,
    pub u_xx: Vec<f64>,
}

impl PointJet {
    pub fn zeros(d_y: usize) -> Self {
        PointJet { u: vec![0.0; d_y], u_t: vec![0.0; d_y], u_x: vec![0.0; d_y], u_xx: vec![0.0; d_y] }
    }
}

/// The parametric part `P(u; theta)` of the right-hand side.
pub trait ParametricPart: Send + Sync + fmt::Debug {
    fn param_dim(&self) -> usize;

    /// Overwrites `out` with `P(u; theta)`.
    fn apply(&self, grid: &SpatialGrid, u: &StateField, theta: &[f64], out: &mut StateField);

    /// Adds `(dP/du)^T c` to `acc_u` and `(dP/dtheta)^T c` to `acc_theta`.
    fn vjp(
        &self,
        grid: &SpatialGrid,
        u: &StateField,
        theta: &[f64],
        c: &StateField,
        acc_u: &mut StateField,
        acc_theta: &mut [f64],
    );

    /// Spectral-radius bound of `dP/du` on `grid`, used for the explicit step limit.
    fn stiffness(&self, grid: &SpatialGrid, theta: &[f64]) -> f64;

    /// Continuous pointwise value from a jet (no discretization).
    fn pointwise(&self, theta: &[f64], jet: &PointJet) -> Vec<f64>;

    /// Adds the pullback of `c` through [`ParametricPart::pointwise`] to `acc_theta` and `acc_jet`.
    fn pointwise_vjp(&self, theta: &[f64], jet: &PointJet, c: &[f64], acc_theta: &mut [f64], acc_jet: &mut PointJet);
}

/// `P_k(u) = theta[index[k]] * Laplacian(u_k)`.
#[derive(Debug, Clone)]
pub struct ComponentDiffusion {
    pub index: Vec<usize>,
}

impl ParametricPart for ComponentDiffusion {
    fn param_dim(&self) -> usize {
        self.index.iter().max().map_or(0, |m| m + 1)
    }

    fn apply(&self, grid: &SpatialGrid, u: &StateField, theta: &[f64], out: &mut StateField) {
        for (k, &i) in self.index.iter().enumerate() {
            let mut row = out.row_mut(k);
            grid.laplacian(u.row(k), row.view_mut());
            row *= theta[i];
        }
    }

    fn vjp(
        &self,
        grid: &SpatialGrid,
        u: &StateField,
        theta: &[f64],
        c: &StateField,
        acc_u: &mut StateField,
        acc_theta: &mut [f64],
    ) {
        let mut lap = ndarray::Array1::zeros(grid.nodes());
        for (k, &i) in self.index.iter().enumerate() {
            grid.laplacian(u.row(k), lap.view_mut());
            acc_theta[i] += lap.dot(&c.row(k));
            let scaled = &c.row(k) * theta[i];
            grid.laplacian_transpose_add(scaled.view(), acc_u.row_mut(k));
        }
    }

    fn stiffness(&self, grid: &SpatialGrid, theta: &[f64]) -> f64 {
        if grid.dim() == 0 {
            return 0.0;
        }
        let tmax = self.index.iter().map(|&i| theta[i].abs()).fold(0.0, f64::max);
        4.0 * tmax / (grid.dx() * grid.dx())
    }

    fn pointwise(&self, theta: &[f64], jet: &PointJet) -> Vec<f64> {
        self.index.iter().enumerate().map(|(k, &i)| theta[i] * jet.u_xx[k]).collect()
    }

    fn pointwise_vjp(&self, theta: &[f64], jet: &PointJet, c: &[f64], acc_theta: &mut [f64], acc_jet: &mut PointJet) {
        for (k, &i) in self.index.iter().enumerate() {
            acc_theta[i] += c[k] * jet.u_xx[k];
            acc_jet.u_xx[k] += c[k] * theta[i];
        }
    }
}

/// `P_k(u) = (sum_j coef[k][j] theta_j) * u_k`.
#[derive(Debug, Clone)]
pub struct LinearGrowth {
    pub coef: Vec<Vec<f64>>,
}

impl LinearGrowth {
    fn rate(&self, k: usize, theta: &[f64]) -> f64 {
        self.coef[k].iter().zip(theta).map(|(c, t)| c * t).sum()
    }
}

impl ParametricPart for LinearGrowth {
    fn param_dim(&self) -> usize {
        self.coef.first().map_or(0, Vec::len)
    }

    fn apply(&self, _grid: &SpatialGrid, u: &StateField, theta: &[f64], out: &mut StateField) {
        for k in 0..self.coef.len() {
            let r = self.rate(k, theta);
            out.row_mut(k).assign(&(&u.row(k) * r));
        }
    }

    fn vjp(
        &self,
        _grid: &SpatialGrid,
        u: &StateField,
        theta: &[f64],
        c: &StateField,
        acc_u: &mut StateField,
        acc_theta: &mut [f64],
    ) {
        for k in 0..self.coef.len() {
            let r = self.rate(k, theta);
            let dot = u.row(k).dot(&c.row(k));
            for (j, cj) in self.coef[k].iter().enumerate() {
                acc_theta[j] += cj * dot;
            }
            acc_u.row_mut(k).scaled_add(r, &c.row(k));
        }
    }

    fn stiffness(&self, _grid: &SpatialGrid, theta: &[f64]) -> f64 {
        (0..self.coef.len()).map(|k| self.rate(k, theta).abs()).fold(0.0, f64::max)
    }

    fn pointwise(&self, theta: &[f64], jet: &PointJet) -> Vec<f64> {
        (0..self.coef.len()).map(|k| self.rate(k, theta) * jet.u[k]).collect()
    }

    fn pointwise_vjp(&self, theta: &[f64], jet: &PointJet, c: &[f64], acc_theta: &mut [f64], acc_jet: &mut PointJet) {
        for k in 0..self.coef.len() {
            for (j, cj) in self.coef[k].iter().enumerate() {
                acc_theta[j] += cj * jet.u[k] * c[k];
            }
            acc_jet.u[k] += self.rate(k, theta) * c[k];
        }
    }
}

/// Known source term `s(t, x)` written into `out` (length `d_y`).
pub type SourceFn = Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>;

type ValueFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type PullbackFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A fixed mechanism given as a closed-form function of the features.
#[derive(Clone)]
pub struct KnownMechanism {
    name: String,
    d_out: usize,
    value: ValueFn,
    pullback: PullbackFn,
}

impl KnownMechanism {
    /// `pullback(v, c, acc)` must add `(dF/dv)^T c` to `acc`.
    pub fn new(
        name: impl Into<String>,
        d_out: usize,
        value: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        pullback: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        KnownMechanism { name: name.into(), d_out, value: Arc::new(value), pullback: Arc::new(pullback) }
    }

    pub fn eval(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d_out];
        (self.value)(v, &mut out);
        out
    }
}

impl fmt::Debug for KnownMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KnownMechanism").field("name", &self.name).finish()
    }
}

/// The nonparametric term `F` plugged into a solve.
#[derive(Debug, Clone)]
pub enum Mechanism {
    Zero,
    Known(KnownMechanism),
    /// Shifted network `f(V; phi) - f(V; phi0)`.
    Network(NetworkParams),
}

impl Mechanism {
    pub fn network(&self) -> Option<&NetworkParams> {
        match self {
            Mechanism::Network(p) => Some(p),
            _ => None,
        }
    }

    /// Values on a batch of feature columns (`d x N` in, `d_y x N` out).
    pub fn eval_batch(&self, features: ArrayView2<f64>, d_y: usize) -> Array2<f64> {
        let n = features.ncols();
        match self {
            Mechanism::Zero => Array2::zeros((d_y, n)),
            Mechanism::Known(k) => {
                let mut out = Array2::zeros((d_y, n));
                let mut v = vec![0.0; features.nrows()];
                let mut o = vec![0.0; d_y];
                for j in 0..n {
                    for (vi, f) in v.iter_mut().zip(features.column(j)) {
                        *vi = *f;
                    }
                    o.iter_mut().for_each(|x| *x = 0.0);
                    (k.value)(&v, &mut o);
                    out.column_mut(j).assign(&ndarray::ArrayView1::from(&o));
                }
                out
            }
            Mechanism::Network(p) => p.forward_batch(features),
        }
    }

    /// Feature-space pullback of `cot` (`d_y x N`); weight gradients go to `grad_phi`.
    pub fn pullback_batch(
        &self,
        features: ArrayView2<f64>,
        cot: ArrayView2<f64>,
        grad_phi: Option<&mut [f64]>,
    ) -> Array2<f64> {
        let (d, n) = features.dim();
        match self {
            Mechanism::Zero => Array2::zeros((d, n)),
            Mechanism::Known(k) => {
                let mut out = Array2::zeros((d, n));
                let mut acc = vec![0.0; d];
                for j in 0..n {
                    let v = features.column(j).to_vec();
                    let c = cot.column(j).to_vec();
                    acc.iter_mut().for_each(|x| *x = 0.0);
                    (k.pullback)(&v, &c, &mut acc);
                    out.column_mut(j).assign(&ndarray::ArrayView1::from(&acc));
                }
                out
            }
            Mechanism::Network(p) => p.backward_batch(features, cot, grad_phi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() || lower.iter().zip(&upper).any(|(l, u)| !(u >= l)) {
            return Err(SemiPdeError::InvalidConfig(format!("invalid parameter box {lower:?} / {upper:?}")));
        }
        Ok(ThetaBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn project(&self, theta: &mut [f64]) {
        for ((t, l), u) in theta.iter_mut().zip(&self.lower).zip(&self.upper) {
            *t = t.clamp(*l, *u);
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && theta.iter().zip(&self.lower).zip(&self.upper).all(|((t, l), u)| t >= l && t <= u)
    }

    pub fn min_width(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).fold(f64::INFINITY, f64::min)
    }
}

/// Truncated Fourier series `a0 + sum_k a_k sin(k pi x) + b_k cos(k pi x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    pub a0: f64,
    pub sin: Vec<f64>,
    pub cos: Vec<f64>,
}

impl FourierSeries {
    pub fn eval(&self, x: f64) -> f64 {
        let mut v = self.a0;
        for (k, (a, b)) in self.sin.iter().zip(&self.cos).enumerate() {
            let w = (k + 1) as f64 * PI * x;
            v += a * w.sin() + b * w.cos();
        }
        v
    }

    /// Coefficients of mode `k` drawn from `N(0, (scale / k)^2)`, `a0` from `N(mean, scale^2)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, modes: usize, mean: f64, scale: f64) -> Self {
        let base = Normal::new(mean, scale).expect("finite scale");
        let a0 = base.sample(rng);
        let mut sin = Vec::with_capacity(modes);
        let mut cos = Vec::with_capacity(modes);
        for k in 1..=modes {
            let d = Normal::new(0.0, scale / k as f64).expect("finite scale");
            sin.push(d.sample(rng));
            cos.push(d.sample(rng));
        }
        FourierSeries { a0, sin, cos }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialCondition {
    Zero,
    Constant(Vec<f64>),
    /// One series per component, optionally passed through the logistic map.
    Fourier { series: Vec<FourierSeries>, logistic: bool },
    /// `u_k(0, x) = sin(pi x)` for every component.
    SineMode,
}

impl InitialCondition {
    pub fn eval(&self, x: f64, d_y: usize) -> Vec<f64> {
        match self {
            InitialCondition::Zero => vec![0.0; d_y],
            InitialCondition::Constant(c) => c.clone(),
            InitialCondition::Fourier { series, logistic } => series
                .iter()
                .map(|s| {
                    let v = s.eval(x);
                    if *logistic { 1.0 / (1.0 + (-v).exp()) } else { v }
                })
                .collect(),
            InitialCondition::SineMode => vec![(PI * x).sin(); d_y],
        }
    }
}

/// Recipe for drawing random initial conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcGenerator {
    pub modes: usize,
    pub mean: f64,
    pub scale: f64,
    pub logistic: bool,
}

impl IcGenerator {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, d_y: usize) -> InitialCondition {
        let series = (0..d_y).map(|_| FourierSeries::random(rng, self.modes, self.mean, self.scale)).collect();
        InitialCondition::Fourier { series, logistic: self.logistic }
    }
}

/// Space-time box on which the model is posed and observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub t0: f64,
    pub t1: f64,
    /// `None` for the point grid.
    pub x: Option<(f64, f64)>,
}

#[derive(Clone)]
pub struct PdeModel {
    pub name: String,
    pub d_y: usize,
    pub bc: BoundaryCondition,
    pub features: Vec<FeatureTag>,
    pub parametric: Arc<dyn ParametricPart>,
    pub source: Option<SourceFn>,
    pub ic: InitialCondition,
    pub domain: Domain,
    pub theta_box: ThetaBox,
    /// Data-generating parameter and mechanism, when known.
    pub truth: Option<(Vec<f64>, Mechanism)>,
    /// Random initial-condition recipe used by simulations.
    pub ic_generator: Option<IcGenerator>,
}

impl fmt::Debug for PdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdeModel")
            .field("name", &self.name)
            .field("d_y", &self.d_y)
            .field("bc", &self.bc)
            .field("features", &self.features)
            .field("parametric", &self.parametric)
            .field("domain", &self.domain)
            .field("theta_box", &self.theta_box)
            .finish()
    }
}

impl PdeModel {
    pub fn p(&self) -> usize {
        self.parametric.param_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.len()
    }

    pub fn spatial_dim(&self) -> usize {
        usize::from(self.domain.x.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_y == 0 || self.features.is_empty() {
            return Err(SemiPdeError::InvalidConfig("model needs d_y >= 1 and a non-empty feature list".into()));
        }
        for f in &self.features {
            let ok = match *f {
                FeatureTag::Time => true,
                FeatureTag::Space(j) => j < self.spatial_dim(),
                FeatureTag::State(k) => k < self.d_y,
                FeatureTag::StateDx(k) => k < self.d_y && self.spatial_dim() > 0,
            };
            if !ok {
                return Err(SemiPdeError::InvalidConfig(format!("feature {f:?} does not exist in model {}", self.name)));
            }
        }
        if self.theta_box.dim() != self.p() {
            return Err(SemiPdeError::InvalidConfig("parameter box dimension differs from the operator's".into()));
        }
        Ok(())
    }

    /// Spatial grid with `nodes` nodes matching the model's boundary condition.
    pub fn grid(&self, nodes: usize) -> Result<SpatialGrid> {
        match self.domain.x {
            None => Ok(SpatialGrid::point()),
            Some((lo, hi)) => match self.bc {
                BoundaryCondition::Periodic => SpatialGrid::periodic(nodes, lo, hi),
                BoundaryCondition::NeumannZero => SpatialGrid::closed(nodes, lo, hi),
            },
        }
    }

    pub fn true_theta(&self) -> Option<&[f64]> {
        self.truth.as_ref().map(|(t, _)| t.as_slice())
    }

    pub fn true_mechanism(&self) -> Option<&Mechanism> {
        self.truth.as_ref().map(|(_, m)| m)
    }

    pub fn with_ic(&self, ic: InitialCondition) -> Self {
        PdeModel { ic, ..self.clone() }
    }

    pub fn with_truth(&self, theta: Vec<f64>, mechanism: Mechanism) -> Self {
        PdeModel { truth: Some((theta, mechanism)), ..self.clone() }
    }

    pub fn initial_field(&self, grid: &SpatialGrid) -> StateField {
        let mut u = grid.zeros(self.d_y);
        for j in 0..grid.nodes() {
            let x = if grid.dim() == 0 { 0.0 } else { grid.node_x(j) };
            let v = self.ic.eval(x, self.d_y);
            for k in 0..self.d_y {
                u[[k, j]] = v[k];
            }
        }
        u
    }

    /// Feature matrix (`d x nodes`) of `u` at time `t`.
    pub fn feature_matrix(&self, grid: &SpatialGrid, t: f64, u: &StateField) -> Array2<f64> {
        let n = grid.nodes();
        let mut v = Array2::zeros((self.features.len(), n));
        for (r, f) in self.features.iter().enumerate() {
            let mut row = v.row_mut(r);
            match *f {
                FeatureTag::Time => row.fill(t),
                FeatureTag::Space(_) => {
                    for j in 0..n {
                        row[j] = grid.node_x(j);
                    }
                }
                FeatureTag::State(k) => row.assign(&u.row(k)),
                FeatureTag::StateDx(k) => grid.gradient(u.row(k), row),
            }
        }
        v
    }

    /// Pulls a feature-space cotangent back onto the state.
    pub fn feature_transpose_add(&self, grid: &SpatialGrid, g: &Array2<f64>, acc: &mut StateField) {
        for (r, f) in self.features.iter().enumerate() {
            match *f {
                FeatureTag::Time | FeatureTag::Space(_) => {}
                FeatureTag::State(k) => {
                    let mut row = acc.row_mut(k);
                    row += &g.row(r);
                }
                FeatureTag::StateDx(k) => grid.gradient_transpose_add(g.row(r), acc.row_mut(k)),
            }
        }
    }

    fn add_source(&self, grid: &SpatialGrid, t: f64, out: &mut StateField) {
        if let Some(src) = &self.source {
            let mut buf = vec![0.0; self.d_y];
            for j in 0..grid.nodes() {
                let x = if grid.dim() == 0 { 0.0 } else { grid.node_x(j) };
                buf.iter_mut().for_each(|b| *b = 0.0);
                src(t, x, &mut buf);
                for k in 0..self.d_y {
                    out[[k, j]] += buf[k];
                }
            }
        }
    }

    /// Semi-discrete right-hand side `du/dt` at every node.
    pub fn rhs(
        &self,
        grid: &SpatialGrid,
        theta: &[f64],
        mechanism: &Mechanism,
        t: f64,
        u: &StateField,
    ) -> StateField {
        let mut out = grid.zeros(self.d_y);
        self.parametric.apply(grid, u, theta, &mut out);
        self.add_source(grid, t, &mut out);
        if !matches!(mechanism, Mechanism::Zero) {
            let v = self.feature_matrix(grid, t, u);
            out += &mechanism.eval_batch(v.view(), self.d_y);
        }
        out
    }

    /// Adds the pullback of `c` through [`PdeModel::rhs`] to the state, parameter and weight accumulators.
    #[allow(clippy::too_many_arguments)]
    pub fn rhs_vjp(
        &self,
        grid: &SpatialGrid,
        theta: &[f64],
        mechanism: &Mechanism,
        t: f64,
        u: &StateField,
        c: &StateField,
        acc_u: &mut StateField,
        acc_theta: &mut [f64],
        grad_phi: Option<&mut [f64]>,
    ) {
        self.parametric.vjp(grid, u, theta, c, acc_u, acc_theta);
        if !matches!(mechanism, Mechanism::Zero) {
            let v = self.feature_matrix(grid, t, u);
            let g = mechanism.pullback_batch(v.view(), c.view(), grad_phi);
            self.feature_transpose_add(grid, &g, acc_u);
        }
    }
}

/// Feature vector at a single node; `du_dx` holds the stencil derivative per component.
pub fn extract_features(model: &PdeModel, t: f64, x: &[f64], u: &[f64], du_dx: &[f64]) -> Vec<f64> {
    model
        .features
        .iter()
        .map(|f| match *f {
            FeatureTag::Time => t,
            FeatureTag::Space(j) => x[j],
            FeatureTag::State(k) => u[k],
            FeatureTag::StateDx(k) => du_dx[k],
        })
        .collect()
}

/// `du/dt` at every node; errors if any entry is non-finite.
pub fn assemble_rhs(
    model: &PdeModel,
    grid: &SpatialGrid,
    theta: &[f64],
    mechanism: &Mechanism,
    t: f64,
    field: &StateField,
) -> Result<StateField> {
    let out = model.rhs(grid, theta, mechanism, t, field);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SemiPdeError::Diverged { step: 0 })
    }
}

/// Only the parametric part plus source, used for linearity checks.
pub fn parametric_rhs(model: &PdeModel, grid: &SpatialGrid, theta: &[f64], t: f64, field: &StateField) -> StateField {
    model.rhs(grid, theta, &Mechanism::Zero, t, field)
}

pub mod builtin {
    //! Built-in models with their data-generating truth.
    use super::*;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub const NAMES: [&str; 4] = ["case1", "case2", "example3", "example3-vector"];

    /// Seed of the fixed default initial condition of `case1`.
    pub const CASE1_IC_SEED: u64 = 1005;

    pub fn by_name(name: &str) -> Result<PdeModel> {
        match name {
            "case1" => Ok(case1()),
            "case2" => Ok(case2()),
            "example3" => Ok(example3()),
            "example3-vector" => Ok(example3_vector()),
            other => Err(SemiPdeError::UnknownModel(other.to_string())),
        }
    }

    pub fn logistic_reaction() -> KnownMechanism {
        KnownMechanism::new(
            "u(1-u)",
            1,
            |v, out| out[0] = v[0] * (1.0 - v[0]),
            |v, c, acc| acc[0] += c[0] * (1.0 - 2.0 * v[0]),
        )
    }

    pub fn fitzhugh_reaction() -> KnownMechanism {
        KnownMechanism::new(
            "u1-u1^3-5e-3-u2, u1-u2",
            2,
            |v, out| {
                out[0] = v[0] - v[0].powi(3) - 5e-3 - v[1];
                out[1] = v[0] - v[1];
            },
            |v, c, acc| {
                acc[0] += c[0] * (1.0 - 3.0 * v[0] * v[0]) + c[1];
                acc[1] += -c[0] - c[1];
            },
        )
    }

    /// `du/dt = theta Laplacian(u) + F(u)` on periodic `[-1, 1] x [0, 2.5]`, truth `F = u(1-u)`.
    pub fn case1() -> PdeModel {
        let generator = IcGenerator { modes: 4, mean: 0.0, scale: 2.0, logistic: true };
        let ic = generator.draw(&mut ChaCha8Rng::seed_from_u64(CASE1_IC_SEED), 1);
        PdeModel {
            name: "case1".into(),
            d_y: 1,
            bc: BoundaryCondition::Periodic,
            features: vec![FeatureTag::State(0)],
            parametric: Arc::new(ComponentDiffusion { index: vec![0] }),
            source: None,
            ic,
            domain: Domain { t0: 0.0, t1: 2.5, x: Some((-1.0, 1.0)) },
            theta_box: ThetaBox { lower: vec![0.001], upper: vec![0.03] },
            truth: Some((vec![0.01], Mechanism::Known(logistic_reaction()))),
            ic_generator: Some(generator),
        }
    }

    /// Two-component diffusion system with a FitzHugh-Nagumo type reaction.
    pub fn case2() -> PdeModel {
        PdeModel {
            name: "case2".into(),
            d_y: 2,
            bc: BoundaryCondition::Periodic,
            features: vec![FeatureTag::State(0), FeatureTag::State(1)],
            parametric: Arc::new(ComponentDiffusion { index: vec![0, 1] }),
            source: None,
            ic: InitialCondition::SineMode,
            domain: Domain { t0: 0.0, t1: 2.5, x: Some((-1.0, 1.0)) },
            theta_box: ThetaBox { lower: vec![0.02, 0.02], upper: vec![0.2, 0.2] },
            truth: Some((vec![0.1, 0.05], Mechanism::Known(fitzhugh_reaction()))),
            ic_generator: Some(IcGenerator { modes: 4, mean: 0.0, scale: 0.5, logistic: false }),
        }
    }

    /// Forcing `g(x) = e^x (1.5 + 0.5 sin 2 pi x)` of the scalar first-order model.
    pub fn example3_forcing(x: f64) -> f64 {
        x.exp() * (1.5 + 0.5 * (2.0 * PI * x).sin())
    }

    /// Closed-form solution of `u' = u + g`, `u(0) = 0`.
    pub fn example3_solution_unit_theta(x: f64) -> f64 {
        x.exp() * (1.5 * x + (1.0 - (2.0 * PI * x).cos()) / (4.0 * PI))
    }

    /// `du/dx = theta u + g(x) + F`, `u(0) = 0` on `[0, 1]`, truth `theta = 1`, `F = 0`.
    pub fn example3() -> PdeModel {
        PdeModel {
            name: "example3".into(),
            d_y: 1,
            bc: BoundaryCondition::NeumannZero,
            features: vec![FeatureTag::Time, FeatureTag::State(0)],
            parametric: Arc::new(LinearGrowth { coef: vec![vec![1.0]] }),
            source: Some(Arc::new(|x, _, out: &mut [f64]| out[0] = example3_forcing(x))),
            ic: InitialCondition::Zero,
            domain: Domain { t0: 0.0, t1: 1.0, x: None },
            theta_box: ThetaBox { lower: vec![0.0], upper: vec![2.0] },
            truth: Some((vec![1.0], Mechanism::Zero)),
            ic_generator: None,
        }
    }

    /// Two-component form: `theta = (beta, 2 beta)`, `F = (e^x f(x), e^x f(x))`, truth `beta = 1`.
    pub fn example3_vector() -> PdeModel {
        let forcing = KnownMechanism::new(
            "e^x f(x)",
            2,
            |v, out| {
                let g = example3_forcing(v[0]);
                out[0] = g;
                out[1] = g;
            },
            |v, c, acc| {
                let x = v[0];
                let dg = x.exp() * (1.5 + 0.5 * (2.0 * PI * x).sin() + PI * (2.0 * PI * x).cos());
                acc[0] += (c[0] + c[1]) * dg;
            },
        );
        PdeModel {
            name: "example3-vector".into(),
            d_y: 2,
            bc: BoundaryCondition::NeumannZero,
            features: vec![FeatureTag::Time, FeatureTag::State(0), FeatureTag::State(1)],
            parametric: Arc::new(LinearGrowth { coef: vec![vec![1.0], vec![2.0]] }),
            source: None,
            ic: InitialCondition::Zero,
            domain: Domain { t0: 0.0, t1: 1.0, x: None },
            theta_box: ThetaBox { lower: vec![0.0], upper: vec![2.0] },
            truth: Some((vec![1.0], Mechanism::Known(forcing))),
            ic_generator: None,
        }
    }
}

/// Range `[min, max]` of component `k` over a set of fields.
pub fn component_range<'a>(fields: impl IntoIterator<Item = &'a StateField>, k: usize) -> (f64, f64) {
    fields.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
        let row = f.index_axis(Axis(0), k);
        let lo2 = row.iter().cloned().fold(lo, f64::min);
        let hi2 = row.iter().cloned().fold(hi, f64::max);
        (lo2, hi2)
    })
}
