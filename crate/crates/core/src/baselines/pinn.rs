//! Joint fit of a solution network, `theta` and the mechanism network by a
//! data + PDE-residual + boundary objective.
//!
//! Input derivatives of the solution network are propagated forward as jets
//! `(u, u_t, u_x, u_xx)`; weight gradients come from one exact reverse pass
//! through the jet recursion.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use super::{regression_loss_grad, target_matrix, BaselineKind, BaselineResult, FieldEstimate, FlatDescent, InputScaling};
use crate::data::{Dataset, Observation};
use crate::error::{Result, SemiPdeError};
use crate::estimator::{FitConfig, Optimizer};
use crate::grid::SpaceTimePoint;
use crate::model::{BoundaryCondition, FeatureTag, Mechanism, PdeModel, PointJet};
use crate::nn::{activation, activation_derivative, weight_view, NetArchitecture, NetworkParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PinnConfig {
    /// Weight of the mean squared PDE residual.
    pub lambda_residual: f64,
    /// Weight of the boundary and initial mismatch.
    pub lambda_boundary: f64,
    pub collocation_t: usize,
    pub collocation_x: usize,
    pub boundary_points: usize,
    /// Hidden widths of the solution network.
    pub hidden: Vec<usize>,
    /// Activation power of the solution network; at least 2 so `u_xx` is nonzero.
    pub power: u32,
    pub eta: f64,
    pub max_epochs: usize,
    pub optimizer: Optimizer,
}

impl Default for PinnConfig {
    fn default() -> Self {
        PinnConfig {
            lambda_residual: 1.0,
            lambda_boundary: 1.0,
            collocation_t: 64,
            collocation_x: 64,
            boundary_points: 64,
            hidden: vec![32, 32],
            power: 2,
            eta: 1e-3,
            max_epochs: 3000,
            optimizer: Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        }
    }
}

impl PinnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_residual >= 0.0 && self.lambda_boundary >= 0.0) {
            return Err(SemiPdeError::InvalidConfig("PINN weights must be >= 0".into()));
        }
        if self.collocation_t == 0 || self.collocation_x == 0 || self.boundary_points == 0 {
            return Err(SemiPdeError::InvalidConfig("PINN point counts must be >= 1".into()));
        }
        if self.power < 2 {
            return Err(SemiPdeError::InvalidConfig("PINN solution network needs activation power >= 2".into()));
        }
        if !(self.eta > 0.0) {
            return Err(SemiPdeError::InvalidConfig("PINN step size must be > 0".into()));
        }
        Ok(())
    }
}

/// Unweighted terms; `total = data + lambda_residual * residual + lambda_boundary * boundary`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinnLossSplit {
    pub data: f64,
    pub residual: f64,
    pub boundary: f64,
    pub total: f64,
}

/// Value and input-derivative channels `[u, u_t, u_x, u_xx]`, each `width x N`.
type Jet = [Array2<f64>; 4];

struct JetCache {
    inputs: Vec<Jet>,
    pre: Vec<Jet>,
}

fn zero_jet(rows: usize, n: usize) -> Jet {
    std::array::from_fn(|_| Array2::zeros((rows, n)))
}

/// Forward jets through the unshifted network. Derivative seeds are the
/// raw-coordinate derivatives of the scaled input.
fn jet_forward(arch: &NetArchitecture, w: &[f64], points: &[SpaceTimePoint], scaling: &InputScaling) -> (Jet, JetCache) {
    let n = points.len();
    let dim = scaling.dim();
    let mut h = zero_jet(dim, n);
    h[0] = scaling.matrix(points);
    h[1].row_mut(0).fill(scaling.factor(0));
    if dim > 1 {
        h[2].row_mut(1).fill(scaling.factor(1));
    }
    let layouts = arch.layouts();
    let mut cache = JetCache { inputs: Vec::with_capacity(layouts.len()), pre: Vec::new() };
    for (i, l) in layouts.iter().enumerate() {
        let (wm, b) = weight_view(w, l);
        let mut z = zero_jet(l.rows, n);
        for c in 0..4 {
            general_mat_mul(l.scale, &wm, &h[c], 0.0, &mut z[c]);
        }
        for (mut row, &bi) in z[0].axis_iter_mut(Axis(0)).zip(b.iter()) {
            row.mapv_inplace(|x| x + l.scale * bi);
        }
        if i + 1 == layouts.len() {
            cache.inputs.push(h);
            return (z, cache);
        }
        let p = arch.power;
        let mut next = zero_jet(l.rows, n);
        for ((r, col), &a) in z[0].indexed_iter() {
            let (d1, d2) = (activation_derivative(a, p, 1), activation_derivative(a, p, 2));
            let ax = z[2][[r, col]];
            next[0][[r, col]] = activation(a, p);
            next[1][[r, col]] = d1 * z[1][[r, col]];
            next[2][[r, col]] = d1 * ax;
            next[3][[r, col]] = d2 * ax * ax + d1 * z[3][[r, col]];
        }
        cache.inputs.push(std::mem::replace(&mut h, next));
        cache.pre.push(z);
    }
    unreachable!("network has at least one affine layer")
}

/// Accumulates weight gradients for output-channel cotangents `cot`.
fn jet_backward(arch: &NetArchitecture, w: &[f64], cache: &JetCache, cot: Jet, grad: &mut [f64]) {
    let layouts = arch.layouts();
    let p = arch.power;
    let mut delta = cot;
    for i in (0..layouts.len()).rev() {
        let l = &layouts[i];
        let (wm, _) = weight_view(w, l);
        let h = &cache.inputs[i];
        {
            let mut gw = ArrayViewMut2::from_shape((l.rows, l.cols), &mut grad[l.w_offset..l.b_offset]).expect("layout");
            for c in 0..4 {
                general_mat_mul(l.scale, &delta[c], &h[c].t(), 1.0, &mut gw);
            }
        }
        for (gb, row) in grad[l.b_offset..l.b_offset + l.rows].iter_mut().zip(delta[0].axis_iter(Axis(0))) {
            *gb += l.scale * row.sum();
        }
        if i == 0 {
            return;
        }
        let n = delta[0].ncols();
        let mut dh = zero_jet(l.cols, n);
        for c in 0..4 {
            general_mat_mul(l.scale, &wm.t(), &delta[c], 0.0, &mut dh[c]);
        }
        let z = &cache.pre[i - 1];
        let mut da = zero_jet(l.cols, n);
        for ((r, col), &a) in z[0].indexed_iter() {
            let (d1, d2, d3) =
                (activation_derivative(a, p, 1), activation_derivative(a, p, 2), activation_derivative(a, p, 3));
            let (at, ax, axx) = (z[1][[r, col]], z[2][[r, col]], z[3][[r, col]]);
            let (g, gt, gx, gxx) = (dh[0][[r, col]], dh[1][[r, col]], dh[2][[r, col]], dh[3][[r, col]]);
            da[0][[r, col]] = d1 * g + d2 * at * gt + d2 * ax * gx + (d3 * ax * ax + d2 * axx) * gxx;
            da[1][[r, col]] = d1 * gt;
            da[2][[r, col]] = d1 * gx + 2.0 * d2 * ax * gxx;
            da[3][[r, col]] = d1 * gxx;
        }
        delta = da;
    }
}

/// Fixed point sets of the objective.
struct PinnProblem<'a> {
    model: &'a PdeModel,
    scaling: InputScaling,
    u_arch: NetArchitecture,
    mech: NetworkParams,
    p: usize,
    train_x: Array2<f64>,
    train_y: Array2<f64>,
    colloc: Vec<SpaceTimePoint>,
    /// Source values at the collocation points, `d_y x N`.
    source: Array2<f64>,
    /// Boundary pairs `(lower end, upper end)` at shared times.
    edge_lo: Vec<SpaceTimePoint>,
    edge_hi: Vec<SpaceTimePoint>,
    initial: Vec<SpaceTimePoint>,
    initial_y: Array2<f64>,
    weights: (f64, f64),
}

impl<'a> PinnProblem<'a> {
    fn split_params<'w>(&self, w: &'w [f64]) -> (&'w [f64], &'w [f64], &'w [f64]) {
        let (theta, rest) = w.split_at(self.p);
        let (phi, uw) = rest.split_at(self.mech.len());
        (theta, phi, uw)
    }

    fn mechanism(&self, phi: &[f64]) -> Mechanism {
        Mechanism::Network(self.mech.with_phi(phi.to_vec()))
    }

    /// Residual term (unweighted) with gradients scaled by `weight`.
    fn residual(&self, w: &[f64], grad: Option<&mut [f64]>, weight: f64) -> f64 {
        let (theta, phi, uw) = self.split_params(w);
        let d_y = self.model.d_y;
        let n = self.colloc.len();
        let (jet, cache) = jet_forward(&self.u_arch, uw, &self.colloc, &self.scaling);
        let feats = self.features(&jet);
        let mech = self.mechanism(phi);
        let f = mech.eval_batch(feats.view(), d_y);
        let mut r = Array2::<f64>::zeros((d_y, n));
        let mut jets = Vec::with_capacity(n);
        for j in 0..n {
            let pj = PointJet {
                u: jet[0].column(j).to_vec(),
                u_t: jet[1].column(j).to_vec(),
                u_x: jet[2].column(j).to_vec(),
                u_xx: jet[3].column(j).to_vec(),
            };
            let pv = self.model.parametric.pointwise(theta, &pj);
            for k in 0..d_y {
                r[[k, j]] = pj.u_t[k] - pv[k] - self.source[[k, j]] - f[[k, j]];
            }
            jets.push(pj);
        }
        let loss = r.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let Some(grad) = grad else { return loss };
        let c = r.mapv(|v| 2.0 * weight * v / n as f64);
        let mut cot = zero_jet(d_y, n);
        cot[1].assign(&c);
        let (g_theta, rest) = grad.split_at_mut(self.p);
        let (g_phi, g_u) = rest.split_at_mut(self.mech.len());
        for (j, pj) in jets.iter().enumerate() {
            let neg: Vec<f64> = c.column(j).iter().map(|v| -v).collect();
            let mut acc = PointJet::zeros(d_y);
            self.model.parametric.pointwise_vjp(theta, pj, &neg, g_theta, &mut acc);
            for k in 0..d_y {
                cot[0][[k, j]] += acc.u[k];
                cot[1][[k, j]] += acc.u_t[k];
                cot[2][[k, j]] += acc.u_x[k];
                cot[3][[k, j]] += acc.u_xx[k];
            }
        }
        let neg = c.mapv(|v| -v);
        let gv = mech.pullback_batch(feats.view(), neg.view(), Some(g_phi));
        for (row, tag) in self.model.features.iter().enumerate() {
            match *tag {
                FeatureTag::State(k) => cot[0].row_mut(k).scaled_add(1.0, &gv.row(row)),
                FeatureTag::StateDx(k) => cot[2].row_mut(k).scaled_add(1.0, &gv.row(row)),
                FeatureTag::Time | FeatureTag::Space(_) => {}
            }
        }
        jet_backward(&self.u_arch, uw, &cache, cot, g_u);
        loss
    }

    fn features(&self, jet: &Jet) -> Array2<f64> {
        let n = self.colloc.len();
        Array2::from_shape_fn((self.model.feature_dim(), n), |(r, j)| match self.model.features[r] {
            FeatureTag::Time => self.colloc[j].t,
            FeatureTag::Space(i) => self.colloc[j].x[i],
            FeatureTag::State(k) => jet[0][[k, j]],
            FeatureTag::StateDx(k) => jet[2][[k, j]],
        })
    }

    /// Boundary and initial mismatch (unweighted) with gradients scaled by `weight`.
    fn boundary(&self, w: &[f64], mut grad: Option<&mut [f64]>, weight: f64) -> f64 {
        let (_, _, uw) = self.split_params(w);
        let off = self.p + self.mech.len();
        let mut loss = 0.0;
        // initial condition
        let (jet, cache) = jet_forward(&self.u_arch, uw, &self.initial, &self.scaling);
        let m0 = &jet[0] - &self.initial_y;
        let n0 = self.initial.len() as f64;
        loss += m0.iter().map(|v| v * v).sum::<f64>() / n0;
        if let Some(g) = grad.as_deref_mut() {
            let mut cot = zero_jet(m0.nrows(), m0.ncols());
            cot[0] = m0.mapv(|v| 2.0 * weight * v / n0);
            jet_backward(&self.u_arch, uw, &cache, cot, &mut g[off..]);
        }
        if self.edge_lo.is_empty() {
            return loss;
        }
        let nb = self.edge_lo.len() as f64;
        let (jl, cl) = jet_forward(&self.u_arch, uw, &self.edge_lo, &self.scaling);
        let (jh, ch) = jet_forward(&self.u_arch, uw, &self.edge_hi, &self.scaling);
        match self.model.bc {
            BoundaryCondition::Periodic => {
                let du = &jl[0] - &jh[0];
                let dx = &jl[2] - &jh[2];
                loss += (du.iter().map(|v| v * v).sum::<f64>() + dx.iter().map(|v| v * v).sum::<f64>()) / nb;
                if let Some(g) = grad {
                    let mut lo = zero_jet(du.nrows(), du.ncols());
                    lo[0] = du.mapv(|v| 2.0 * weight * v / nb);
                    lo[2] = dx.mapv(|v| 2.0 * weight * v / nb);
                    let hi = lo.clone().map(|a| -a);
                    jet_backward(&self.u_arch, uw, &cl, lo, &mut g[off..]);
                    jet_backward(&self.u_arch, uw, &ch, hi, &mut g[off..]);
                }
            }
            BoundaryCondition::NeumannZero => {
                loss += (jl[2].iter().map(|v| v * v).sum::<f64>() + jh[2].iter().map(|v| v * v).sum::<f64>()) / nb;
                if let Some(g) = grad {
                    for (j, c) in [(&jl, &cl), (&jh, &ch)] {
                        let mut cot = zero_jet(j[2].nrows(), j[2].ncols());
                        cot[2] = j[2].mapv(|v| 2.0 * weight * v / nb);
                        jet_backward(&self.u_arch, uw, c, cot, &mut g[off..]);
                    }
                }
            }
        }
        loss
    }

    fn split(&self, w: &[f64], grad: Option<&mut [f64]>) -> PinnLossSplit {
        let (l1, l2) = self.weights;
        let (_, _, uw) = self.split_params(w);
        let off = self.p + self.mech.len();
        let want = grad.is_some();
        let (data, gd) = regression_loss_grad(&self.u_arch, uw, &self.train_x, &self.train_y, want);
        let (residual, boundary) = match grad {
            Some(g) => {
                g[off..].iter_mut().zip(&gd).for_each(|(a, b)| *a += b);
                let r = if l1 > 0.0 { self.residual(w, Some(&mut *g), l1) } else { self.residual(w, None, 0.0) };
                let b = if l2 > 0.0 { self.boundary(w, Some(g), l2) } else { self.boundary(w, None, 0.0) };
                (r, b)
            }
            None => (self.residual(w, None, 0.0), self.boundary(w, None, 0.0)),
        };
        PinnLossSplit { data, residual, boundary, total: data + l1 * residual + l2 * boundary }
    }
}

fn build_problem<'a>(
    model: &'a PdeModel,
    train: &[Observation],
    fit: &FitConfig,
    config: &PinnConfig,
) -> Result<(PinnProblem<'a>, Vec<f64>)> {
    let first = train.first().ok_or(SemiPdeError::EmptyPartition("train"))?;
    if first.y.len() != model.d_y {
        return Err(SemiPdeError::InvalidConfig("observation dimension differs from the model".into()));
    }
    let scaling = InputScaling::for_domain(&model.domain);
    let u_arch = NetArchitecture::new(scaling.dim(), config.hidden.clone(), model.d_y, config.power)?;
    let mech = fit.initial_network(model)?;
    let u_init = NetworkParams::init_reference(&u_arch, fit.seed.wrapping_add(1))?;
    let d = model.domain;
    let mid = |lo: f64, hi: f64, i: usize, m: usize| lo + (hi - lo) * (i as f64 + 0.5) / m as f64;
    let mut colloc = Vec::new();
    let mut edge_lo = Vec::new();
    let mut edge_hi = Vec::new();
    let mut initial = Vec::new();
    match d.x {
        Some((lo, hi)) => {
            for i in 0..config.collocation_t {
                for j in 0..config.collocation_x {
                    colloc.push(SpaceTimePoint::new(
                        mid(d.t0, d.t1, i, config.collocation_t),
                        vec![mid(lo, hi, j, config.collocation_x)],
                    ));
                }
            }
            for b in 0..config.boundary_points {
                let t = mid(d.t0, d.t1, b, config.boundary_points);
                edge_lo.push(SpaceTimePoint::new(t, vec![lo]));
                edge_hi.push(SpaceTimePoint::new(t, vec![hi]));
                initial.push(SpaceTimePoint::new(d.t0, vec![mid(lo, hi, b, config.boundary_points)]));
            }
        }
        None => {
            for i in 0..config.collocation_t {
                colloc.push(SpaceTimePoint::new(mid(d.t0, d.t1, i, config.collocation_t), Vec::new()));
            }
            initial.push(SpaceTimePoint::new(d.t0, Vec::new()));
        }
    }
    let mut source = Array2::zeros((model.d_y, colloc.len()));
    if let Some(src) = &model.source {
        let mut buf = vec![0.0; model.d_y];
        for (j, pt) in colloc.iter().enumerate() {
            buf.iter_mut().for_each(|b| *b = 0.0);
            src(pt.t, pt.x.first().copied().unwrap_or(0.0), &mut buf);
            source.column_mut(j).assign(&ndarray::ArrayView1::from(&buf));
        }
    }
    let initial_y = Array2::from_shape_fn((model.d_y, initial.len()), |(k, j)| {
        model.ic.eval(initial[j].x.first().copied().unwrap_or(0.0), model.d_y)[k]
    });
    let pts: Vec<SpaceTimePoint> = train.iter().map(|o| o.point.clone()).collect();
    let mut w = fit.theta_init.clone().unwrap_or_else(|| model.theta_box.center());
    w.extend_from_slice(mech.phi());
    w.extend_from_slice(u_init.phi());
    let problem = PinnProblem {
        model,
        train_x: scaling.matrix(&pts),
        train_y: target_matrix(train),
        scaling,
        u_arch,
        p: model.p(),
        mech,
        colloc,
        source,
        edge_lo,
        edge_hi,
        initial,
        initial_y,
        weights: (config.lambda_residual, config.lambda_boundary),
    };
    Ok((problem, w))
}

/// Loss split of the joint objective at flat parameters `[theta, phi, u-weights]`.
pub fn pinn_objective(
    model: &PdeModel,
    train: &[Observation],
    fit: &FitConfig,
    config: &PinnConfig,
    params: &[f64],
) -> Result<(PinnLossSplit, Vec<f64>)> {
    let (problem, w) = build_problem(model, train, fit, config)?;
    if params.len() != w.len() {
        return Err(SemiPdeError::InvalidConfig(format!("expected {} parameters, got {}", w.len(), params.len())));
    }
    let mut g = vec![0.0; w.len()];
    let s = problem.split(params, Some(&mut g));
    Ok((s, g))
}

/// Initial flat parameters `[theta, phi, u-weights]` of the joint fit.
pub fn pinn_initial_params(model: &PdeModel, train: &[Observation], fit: &FitConfig, config: &PinnConfig) -> Result<Vec<f64>> {
    Ok(build_problem(model, train, fit, config)?.1)
}

pub fn pinn_fit(model: &PdeModel, dataset: &Dataset, fit: &FitConfig, config: &PinnConfig) -> Result<BaselineResult> {
    let train = dataset.subset(&dataset.partitions.train);
    let val = dataset.subset(&dataset.partitions.validation);
    pinn_fit_on(model, &train, &val, fit, config)
}

pub fn pinn_fit_on(
    model: &PdeModel,
    train: &[Observation],
    val: &[Observation],
    fit: &FitConfig,
    config: &PinnConfig,
) -> Result<BaselineResult> {
    fit.validate()?;
    config.validate()?;
    if val.is_empty() {
        return Err(SemiPdeError::EmptyPartition("validation"));
    }
    let (problem, w0) = build_problem(model, train, fit, config)?;
    let pts: Vec<SpaceTimePoint> = val.iter().map(|o| o.point.clone()).collect();
    let (vx, vy) = (problem.scaling.matrix(&pts), target_matrix(val));
    let off = problem.p + problem.mech.len();
    let p = problem.p;
    let gd = FlatDescent { eta: config.eta, max_epochs: config.max_epochs, tol: fit.tol, optimizer: config.optimizer };
    let out = gd.run(
        w0,
        |w| {
            let mut g = vec![0.0; w.len()];
            let s = problem.split(w, Some(&mut g));
            (s.total, g)
        },
        |w| regression_loss_grad(&problem.u_arch, &w[off..], &vx, &vy, false).0,
        |w| w[..p].to_vec(),
        |w| model.theta_box.project(&mut w[..p]),
    )?;
    let split = problem.split(&out.params, None);
    let params = NetworkParams::init_reference(&problem.u_arch, fit.seed.wrapping_add(1))?.with_phi(out.params[off..].to_vec());
    Ok(BaselineResult {
        kind: BaselineKind::PinnJoint,
        theta: Some(out.params[..p].to_vec()),
        estimate: FieldEstimate::Network { params, scaling: problem.scaling.clone() },
        best_epoch: out.best_epoch,
        trace: out.trace,
        loss_split: Some(split),
    })
}
