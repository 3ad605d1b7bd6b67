//! Fixed-architecture feedforward network used for the nonparametric mechanism.
//!
//! Layer `i` maps `h -> sqrt((l+1)/m_{i+1}) * (W_i h + b_i)` and hidden layers
//! apply `a -> max(a, 0)^l`. Parameters live in one flat vector; for each layer
//! the row-major `W_i` (shape `m_{i+1} x m_i`) is followed by `b_i` (length `m_{i+1}`).
//!
//! The mechanism itself is the *shifted* network `f(v; phi) = f~(v; phi) - f~(v; phi0)`
//! with a frozen reference `phi0`, so `f = 0` at initialization.

use std::path::Path;
use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SemiPdeError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Activation power `l` in `max(a, 0)^l`; 1 is ReLU.
    pub power: u32,
}

impl Default for NetArchitecture {
    fn default() -> Self {
        NetArchitecture { input_dim: 1, hidden: vec![16, 64, 64, 16], output_dim: 1, power: 1 }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerLayout {
    pub w_offset: usize,
    pub b_offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub scale: f64,
}

impl NetArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, power: u32) -> Result<Self> {
        let arch = NetArchitecture { input_dim, hidden, output_dim, power };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(SemiPdeError::InvalidConfig("network input/output dims must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(SemiPdeError::InvalidConfig("hidden widths must be >= 1".into()));
        }
        if self.power == 0 {
            return Err(SemiPdeError::InvalidConfig("activation power must be >= 1".into()));
        }
        Ok(())
    }

    /// `[m_0, m_1, ..., m_{L+1}]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[1] * p[0] + p[1]).sum()
    }

    /// Scaling applied by affine layer `i`.
    pub fn layer_scale(&self, i: usize) -> f64 {
        let widths = self.widths();
        ((self.power as f64 + 1.0) / widths[i + 1] as f64).sqrt()
    }

    pub(crate) fn layouts(&self) -> Vec<LayerLayout> {
        let widths = self.widths();
        let mut off = 0;
        widths
            .windows(2)
            .enumerate()
            .map(|(i, p)| {
                let (cols, rows) = (p[0], p[1]);
                let l = LayerLayout {
                    w_offset: off,
                    b_offset: off + rows * cols,
                    rows,
                    cols,
                    scale: self.layer_scale(i),
                };
                off += rows * cols + rows;
                l
            })
            .collect()
    }
}

#[inline]
pub(crate) fn activation(a: f64, power: u32) -> f64 {
    if a > 0.0 {
        if power == 1 { a } else { a.powi(power as i32) }
    } else {
        0.0
    }
}

/// `k`-th derivative of the activation; zero at the kink (subgradient choice).
#[inline]
pub(crate) fn activation_derivative(a: f64, power: u32, k: u32) -> f64 {
    if a <= 0.0 || k > power {
        return 0.0;
    }
    let mut coeff = 1.0;
    for j in 0..k {
        coeff *= (power - j) as f64;
    }
    coeff * a.powi((power - k) as i32)
}

/// Per-layer inputs and pre-activations retained for the reverse pass.
pub(crate) struct ForwardCache {
    pub inputs: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
}

pub(crate) fn weight_view<'a>(w: &'a [f64], l: &LayerLayout) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let wm = ArrayView2::from_shape((l.rows, l.cols), &w[l.w_offset..l.b_offset]).expect("layout");
    let b = ArrayView1::from(&w[l.b_offset..l.b_offset + l.rows]);
    (wm, b)
}

/// Unshifted network on a batch of column inputs `v` (shape `m_0 x N`).
pub(crate) fn raw_forward(
    arch: &NetArchitecture,
    weights: &[f64],
    v: ArrayView2<f64>,
    keep: bool,
) -> (Array2<f64>, Option<ForwardCache>) {
    let layouts = arch.layouts();
    let n = v.ncols();
    let mut cache = keep.then(|| ForwardCache { inputs: Vec::new(), pre: Vec::new() });
    let mut h = v.to_owned();
    for (i, l) in layouts.iter().enumerate() {
        let (wm, b) = weight_view(weights, l);
        let mut z = Array2::<f64>::zeros((l.rows, n));
        general_mat_mul(l.scale, &wm, &h, 0.0, &mut z);
        for (mut row, &bi) in z.axis_iter_mut(Axis(0)).zip(b.iter()) {
            let shift = l.scale * bi;
            if shift != 0.0 {
                row.mapv_inplace(|x| x + shift);
            }
        }
        let last = i + 1 == layouts.len();
        if last {
            if let Some(c) = cache.as_mut() {
                c.inputs.push(h);
            }
            return (z, cache);
        }
        let next = z.mapv(|a| activation(a, arch.power));
        if let Some(c) = cache.as_mut() {
            c.inputs.push(h);
            c.pre.push(z);
        }
        h = next;
    }
    unreachable!("network has at least one affine layer")
}

/// Reverse pass for the unshifted network; returns the input gradient and
/// accumulates weight gradients into `grad_w` when given.
pub(crate) fn raw_backward(
    arch: &NetArchitecture,
    weights: &[f64],
    cache: &ForwardCache,
    cotangent: Array2<f64>,
    mut grad_w: Option<&mut [f64]>,
) -> Array2<f64> {
    let layouts = arch.layouts();
    let mut delta = cotangent;
    for i in (0..layouts.len()).rev() {
        let l = &layouts[i];
        let (wm, _) = weight_view(weights, l);
        let h = &cache.inputs[i];
        if let Some(g) = grad_w.as_deref_mut() {
            {
                let mut gw = ArrayViewMut2::from_shape((l.rows, l.cols), &mut g[l.w_offset..l.b_offset])
                    .expect("layout");
                general_mat_mul(l.scale, &delta, &h.t(), 1.0, &mut gw);
            }
            let gb = &mut g[l.b_offset..l.b_offset + l.rows];
            for (gbi, row) in gb.iter_mut().zip(delta.axis_iter(Axis(0))) {
                *gbi += l.scale * row.sum();
            }
        }
        let mut gh = Array2::<f64>::zeros((l.cols, delta.ncols()));
        general_mat_mul(l.scale, &wm.t(), &delta, 0.0, &mut gh);
        if i == 0 {
            return gh;
        }
        let z = &cache.pre[i - 1];
        gh.zip_mut_with(z, |g, &a| *g *= activation_derivative(a, arch.power, 1));
        delta = gh;
    }
    unreachable!("network has at least one affine layer")
}

/// Weights `phi` of the trainable network plus the frozen reference `phi0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: NetArchitecture,
    phi: Vec<f64>,
    phi0: Arc<Vec<f64>>,
    seed: u64,
}

impl NetworkParams {
    /// Draws the reference weights: every `W` entry and the first-layer bias are iid
    /// standard normal, all other biases are zero. Returns `phi = phi0`.
    pub fn init_reference(arch: &NetArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phi0 = vec![0.0; arch.param_count()];
        for (i, l) in arch.layouts().iter().enumerate() {
            for w in &mut phi0[l.w_offset..l.b_offset] {
                *w = StandardNormal.sample(&mut rng);
            }
            if i == 0 {
                for b in &mut phi0[l.b_offset..l.b_offset + l.rows] {
                    *b = StandardNormal.sample(&mut rng);
                }
            }
        }
        Ok(NetworkParams { arch: arch.clone(), phi: phi0.clone(), phi0: Arc::new(phi0), seed })
    }

    /// Explicit weights; `phi0` is fixed from here on.
    pub fn from_parts(arch: NetArchitecture, phi: Vec<f64>, phi0: Vec<f64>, seed: u64) -> Result<Self> {
        arch.validate()?;
        let n = arch.param_count();
        if phi.len() != n || phi0.len() != n {
            return Err(SemiPdeError::InvalidConfig(format!(
                "expected {n} weights, got phi={} phi0={}",
                phi.len(),
                phi0.len()
            )));
        }
        Ok(NetworkParams { arch, phi, phi0: Arc::new(phi0), seed })
    }

    pub fn architecture(&self) -> &NetArchitecture {
        &self.arch
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut [f64] {
        &mut self.phi
    }

    pub fn phi0(&self) -> &[f64] {
        &self.phi0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn with_phi(&self, phi: Vec<f64>) -> Self {
        assert_eq!(phi.len(), self.phi.len());
        NetworkParams { phi, ..self.clone() }
    }

    /// `f~(v; phi) - f~(v; phi0)` for a batch of column inputs.
    pub fn forward_batch(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let (a, _) = raw_forward(&self.arch, &self.phi, v, false);
        let (b, _) = raw_forward(&self.arch, &self.phi0, v, false);
        a - b
    }

    /// Batched reverse pass for the shifted network. Weight gradients are added to
    /// `grad_phi` when given; the returned input gradient includes both branches.
    pub fn backward_batch(
        &self,
        v: ArrayView2<f64>,
        cotangent: ArrayView2<f64>,
        grad_phi: Option<&mut [f64]>,
    ) -> Array2<f64> {
        let (_, ca) = raw_forward(&self.arch, &self.phi, v, true);
        let (_, cb) = raw_forward(&self.arch, &self.phi0, v, true);
        let ga = raw_backward(&self.arch, &self.phi, &ca.expect("cache"), cotangent.to_owned(), grad_phi);
        let gb = raw_backward(&self.arch, &self.phi0, &cb.expect("cache"), cotangent.to_owned(), None);
        ga - gb
    }

    pub fn forward_shifted(&self, v: &[f64]) -> Vec<f64> {
        let col = ArrayView2::from_shape((v.len(), 1), v).expect("column");
        self.forward_batch(col).column(0).to_vec()
    }

    /// Single-point reverse pass: `(d<f, c>/d phi, d<f, c>/d v)`.
    pub fn backward_shifted(&self, v: &[f64], cotangent: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let col = ArrayView2::from_shape((v.len(), 1), v).expect("column");
        let cot = ArrayView2::from_shape((cotangent.len(), 1), cotangent).expect("column");
        let mut g = vec![0.0; self.len()];
        let gv = self.backward_batch(col, cot, Some(&mut g));
        (g, gv.column(0).to_vec())
    }

    /// Unshifted network value `f~(v; phi)`.
    pub fn forward_unshifted(&self, v: ArrayView2<f64>) -> Array2<f64> {
        raw_forward(&self.arch, &self.phi, v, false).0
    }

    pub fn penalty(&self) -> f64 {
        squared_distance(&self.phi, &self.phi0)
    }

    pub fn penalty_grad(&self) -> Vec<f64> {
        self.phi.iter().zip(self.phi0.iter()).map(|(a, b)| 2.0 * (a - b)).collect()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &Checkpoint::from(self))?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        ck.try_into()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// On-disk form of [`NetworkParams`]: layer shapes, flat weights, seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: NetArchitecture,
    /// `[rows, cols]` of each `W_i`, for readers that do not know the layout.
    pub layer_shapes: Vec<[usize; 2]>,
    pub seed: u64,
    pub phi: Vec<f64>,
    pub phi0: Vec<f64>,
}

impl From<&NetworkParams> for Checkpoint {
    fn from(p: &NetworkParams) -> Self {
        Checkpoint {
            architecture: p.arch.clone(),
            layer_shapes: p.arch.layouts().iter().map(|l| [l.rows, l.cols]).collect(),
            seed: p.seed,
            phi: p.phi.clone(),
            phi0: p.phi0.as_ref().clone(),
        }
    }
}

impl TryFrom<Checkpoint> for NetworkParams {
    type Error = SemiPdeError;

    fn try_from(ck: Checkpoint) -> Result<Self> {
        let expected: Vec<[usize; 2]> = ck.architecture.layouts().iter().map(|l| [l.rows, l.cols]).collect();
        if expected != ck.layer_shapes {
            return Err(SemiPdeError::Format("checkpoint layer shapes disagree with architecture".into()));
        }
        NetworkParams::from_parts(ck.architecture, ck.phi, ck.phi0, ck.seed)
    }
}

/// Column-stacks equally sized feature vectors.
pub fn columns(rows: usize, data: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((rows, data.len()), |(r, c)| data[c][r])
}

pub fn column_sums(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_arch() -> NetArchitecture {
        NetArchitecture::new(2, vec![5, 4], 2, 1).unwrap()
    }

    fn perturbed(p: &NetworkParams, seed: u64, scale: f64) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi: Vec<f64> = p.phi().iter().map(|w| w + scale * rng.random_range(-1.0..1.0)).collect();
        p.with_phi(phi)
    }

    #[test]
    fn param_count_matches_layout() {
        let a = NetArchitecture::default();
        assert_eq!(a.param_count(), (16 + 16) + (64 * 16 + 64) + (64 * 64 + 64) + (16 * 64 + 16) + (16 + 1));
        let p = NetworkParams::init_reference(&a, 1).unwrap();
        assert_eq!(p.len(), a.param_count());
        assert_eq!(p.phi0().len(), a.param_count());
    }

    #[test]
    fn init_is_deterministic() {
        let a = NetArchitecture::default();
        let p = NetworkParams::init_reference(&a, 42).unwrap();
        let q = NetworkParams::init_reference(&a, 42).unwrap();
        assert_eq!(p.phi0(), q.phi0());
        assert_eq!(p.phi(), p.phi0());
        let r = NetworkParams::init_reference(&a, 43).unwrap();
        assert_ne!(p.phi0(), r.phi0());
    }

    #[test]
    fn reference_biases_beyond_first_layer_are_zero() {
        let a = NetArchitecture::default();
        let p = NetworkParams::init_reference(&a, 7).unwrap();
        for (i, l) in a.layouts().iter().enumerate() {
            let b = &p.phi0()[l.b_offset..l.b_offset + l.rows];
            if i == 0 {
                assert!(b.iter().all(|&x| x != 0.0));
            } else {
                assert!(b.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn reference_weights_are_standard_normal() {
        let a = NetArchitecture::new(1, vec![100, 100], 1, 1).unwrap();
        let p = NetworkParams::init_reference(&a, 3).unwrap();
        let ws: Vec<f64> = a
            .layouts()
            .iter()
            .flat_map(|l| p.phi0()[l.w_offset..l.b_offset].to_vec())
            .take(10_000)
            .collect();
        assert_eq!(ws.len(), 10_000);
        let mean = ws.iter().sum::<f64>() / ws.len() as f64;
        let sd = (ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / ws.len() as f64).sqrt();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((sd - 1.0).abs() < 0.05, "sd {sd}");
    }

    #[test]
    fn layer_scale_uses_output_width() {
        let a = NetArchitecture::new(1, vec![64], 1, 1).unwrap();
        assert_eq!(a.layer_scale(0), (2.0f64 / 64.0).sqrt());
        assert_eq!(a.layer_scale(1), 2.0f64.sqrt());
    }

    #[test]
    fn shifted_zero_at_reference() {
        let p = NetworkParams::init_reference(&NetArchitecture::default(), 9).unwrap();
        for v in [-3.0, 0.0, 0.25, 7.5] {
            assert_eq!(p.forward_shifted(&[v]), vec![0.0]);
        }
    }

    #[test]
    fn hand_computed_one_two_one() {
        // W0 = [1, -2]^T, b0 = [0.5, 0.25], W1 = [3, 4], b1 = [-1]
        let arch = NetArchitecture::new(1, vec![2], 1, 1).unwrap();
        let phi = vec![1.0, -2.0, 0.5, 0.25, 3.0, 4.0, -1.0];
        let zero = vec![0.0; 7];
        let p = NetworkParams::from_parts(arch, phi, zero, 0).unwrap();
        let v = 0.1;
        let s0 = (2.0f64 / 2.0).sqrt();
        let s1 = 2.0f64.sqrt();
        let h1 = (s0 * (1.0 * v + 0.5)).max(0.0);
        let h2 = (s0 * (-2.0 * v + 0.25)).max(0.0);
        let expected = s1 * (3.0 * h1 + 4.0 * h2 - 1.0);
        let got = p.forward_shifted(&[v])[0];
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let p = perturbed(&NetworkParams::init_reference(&small_arch(), 1).unwrap(), 2, 0.3);
        let (g, gv) = p.backward_shifted(&[0.3, -0.7], &[0.0, 0.0]);
        assert!(g.iter().all(|&x| x == 0.0));
        assert!(gv.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let base = NetworkParams::init_reference(&NetArchitecture::default(), 11).unwrap();
        let p = perturbed(&base, 12, 0.05);
        let v = [0.37];
        let c = [1.3];
        let (g, _) = p.backward_shifted(&v, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 50 {
            let j = rng.random_range(0..p.len());
            let mut plus = p.phi().to_vec();
            plus[j] += h;
            let mut minus = p.phi().to_vec();
            minus[j] -= h;
            let fp = p.with_phi(plus).forward_shifted(&v)[0] * c[0];
            let fm = p.with_phi(minus).forward_shifted(&v)[0] * c[0];
            let fd = (fp - fm) / (2.0 * h);
            if fd.abs() < 1e-8 && g[j].abs() < 1e-8 {
                checked += 1;
                continue;
            }
            let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs());
            assert!(rel < 1e-5, "coord {j}: fd {fd} vs adj {}", g[j]);
            checked += 1;
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let base = NetworkParams::init_reference(&small_arch(), 21).unwrap();
        let p = perturbed(&base, 22, 0.4);
        let v = [0.31, -0.52];
        let c = [0.7, -1.1];
        let (_, gv) = p.backward_shifted(&v, &c);
        let h = 1e-6;
        for k in 0..2 {
            let mut vp = v;
            vp[k] += h;
            let mut vm = v;
            vm[k] -= h;
            let dot = |x: &[f64]| p.forward_shifted(x).iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
            let fd = (dot(&vp) - dot(&vm)) / (2.0 * h);
            assert!((fd - gv[k]).abs() <= 1e-5 * fd.abs().max(1e-3), "fd {fd} vs {}", gv[k]);
        }
    }

    #[test]
    fn penalty_values_and_gradient() {
        let p = NetworkParams::init_reference(&small_arch(), 4).unwrap();
        assert_eq!(p.penalty(), 0.0);
        assert!(p.penalty_grad().iter().all(|&g| g == 0.0));
        let mut phi = p.phi().to_vec();
        phi[3] += 1.0;
        let q = p.with_phi(phi);
        assert!((q.penalty() - 1.0).abs() < 1e-15);
        let g = q.penalty_grad();
        assert!((g[3] - 2.0).abs() < 1e-15);
        assert_eq!(g.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let p = perturbed(&NetworkParams::init_reference(&small_arch(), 4).unwrap(), 8, 0.5);
        let g = p.penalty_grad();
        let h = 1e-5;
        for j in 0..p.len() {
            let mut a = p.phi().to_vec();
            a[j] += h;
            let mut b = p.phi().to_vec();
            b[j] -= h;
            let fd = (p.with_phi(a).penalty() - p.with_phi(b).penalty()) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-8 * g[j].abs().max(1.0));
        }
    }

    #[test]
    fn relu_positive_homogeneity_without_biases() {
        let arch = NetArchitecture::new(2, vec![8, 8], 1, 1).unwrap();
        let mut p = NetworkParams::init_reference(&arch, 31).unwrap();
        for l in arch.layouts() {
            for b in &mut p.phi_mut()[l.b_offset..l.b_offset + l.rows] {
                *b = 0.0;
            }
        }
        let v = columns(2, &[vec![0.4, -0.9]]);
        let base = p.forward_unshifted(v.view())[[0, 0]];
        let scaled = p.forward_unshifted((&v * 2.5).view())[[0, 0]];
        assert!((scaled - 2.5 * base).abs() < 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = perturbed(&NetworkParams::init_reference(&NetArchitecture::default(), 77).unwrap(), 78, 0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        p.save_checkpoint(&path).unwrap();
        let q = NetworkParams::load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        for (a, b) in p.phi().iter().zip(q.phi()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn activation_derivatives() {
        assert_eq!(activation_derivative(0.0, 1, 1), 0.0);
        assert_eq!(activation_derivative(2.0, 1, 1), 1.0);
        assert_eq!(activation_derivative(2.0, 3, 2), 12.0);
        assert_eq!(activation_derivative(2.0, 3, 3), 6.0);
        assert_eq!(activation_derivative(-1.0, 3, 1), 0.0);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn shifted_network_vanishes_at_reference(seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let p = NetworkParams::init_reference(&small_arch(), seed).unwrap();
            prop_assert_eq!(p.forward_shifted(&[a, b]), vec![0.0, 0.0]);
            prop_assert_eq!(p.penalty(), 0.0);
        }

        #[test]
        fn penalty_is_squared_distance(seed in any::<u64>(), scale in 0.0f64..2.0) {
            let base = NetworkParams::init_reference(&small_arch(), seed).unwrap();
            let p = perturbed(&base, seed.wrapping_add(1), scale);
            let direct: f64 = p.phi().iter().zip(p.phi0()).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!((p.penalty() - direct).abs() <= 1e-12 * direct.max(1.0));
            prop_assert!(p.penalty_grad().iter().zip(p.phi()).zip(p.phi0()).all(|((g, a), b)| *g == 2.0 * (a - b)));
        }
    }
}
