//! Simulation studies: repeated seeded fits against a reference solution,
//! error tables, and coverage of the confidence intervals.

use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{nonparametric_fit, parametric_fit, pinn_fit, FieldEstimate, PinnConfig};
use crate::data::{generate_dataset, reference_solve, Dataset};
use crate::error::{Result, SemiPdeError};
use crate::estimator::{fit, FitConfig, FitResult};
use crate::grid::SpaceTimePoint;
use crate::inference::{fit_and_infer, InferenceConfig};
use crate::model::{builtin, component_range, Domain, FeatureTag, Mechanism, PdeModel};
use crate::solver::{solve, verify_accuracy_on, SolverConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "semipde")]
    SemiPde,
    Parametric,
    Nonparametric,
    PinnJoint,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::SemiPde => "semipde",
            Method::Parametric => "parametric",
            Method::Nonparametric => "nonparametric",
            Method::PinnJoint => "pinn_joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: String,
    pub n: usize,
    pub sigma: f64,
    pub repeats: usize,
    /// Master seed; repeat `r` draws its seeds from stream `r`.
    pub seed: u64,
    /// Initial condition drawn from the model's generator with this seed; the model default when absent.
    pub ic_seed: Option<u64>,
    pub solver: SolverConfig,
    pub fit: FitConfig,
    pub inference: InferenceConfig,
    pub methods: Vec<Method>,
    /// Step size and epochs of the nonparametric baseline; `fit` when absent.
    pub nonparametric: Option<FitConfig>,
    pub pinn: PinnConfig,
    /// Midpoints per axis of the error quadrature.
    pub quadrature: usize,
    pub histogram_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: "case1".into(),
            n: 800,
            sigma: 0.1,
            repeats: 10,
            seed: 0,
            ic_seed: None,
            solver: SolverConfig::default(),
            fit: FitConfig::default(),
            inference: InferenceConfig::default(),
            methods: vec![Method::SemiPde, Method::Parametric, Method::Nonparametric, Method::PinnJoint],
            nonparametric: None,
            pinn: PinnConfig::default(),
            quadrature: 128,
            histogram_bins: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(SemiPdeError::InvalidConfig("repeats must be >= 1".into()));
        }
        if self.n < 20 {
            return Err(SemiPdeError::InvalidConfig("n must be >= 20".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(SemiPdeError::InvalidConfig("sigma must be >= 0".into()));
        }
        if self.quadrature == 0 || self.histogram_bins == 0 {
            return Err(SemiPdeError::InvalidConfig("quadrature and histogram_bins must be >= 1".into()));
        }
        self.solver.validate()?;
        self.fit.validate()?;
        self.inference.validate()?;
        self.pinn.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Desk-scale Case 1 study used by the benchmark and the tests.
    pub fn case1_desk() -> Self {
        ExperimentConfig {
            model: "case1".into(),
            solver: SolverConfig { nodes: 32, c_cfl: 1.0, max_dt: 0.1, ..Default::default() },
            fit: FitConfig {
                eta: 0.01,
                max_epochs: 2000,
                lambda: crate::estimator::LambdaChoice::Fixed(1e-4),
                ..Default::default()
            },
            nonparametric: Some(FitConfig { eta: 0.05, max_epochs: 4000, ..Default::default() }),
            pinn: PinnConfig { collocation_t: 32, collocation_x: 32, boundary_points: 32, max_epochs: 2000, ..Default::default() },
            ..Default::default()
        }
    }

    /// Desk-scale Case 1 coverage study: `n = 160`, SemiPDE only, 100 repeats.
    pub fn case1_coverage() -> Self {
        let mut c = Self::case1_desk();
        c.n = 160;
        c.repeats = 100;
        c.fit.max_epochs = 800;
        c.methods = vec![Method::SemiPde];
        c
    }

    /// Model with the experiment's initial condition.
    pub fn build_model(&self) -> Result<PdeModel> {
        let model = builtin::by_name(&self.model)?;
        match (self.ic_seed, model.ic_generator) {
            (Some(s), Some(g)) => {
                let ic = g.draw(&mut ChaCha8Rng::seed_from_u64(s), model.d_y);
                Ok(model.with_ic(ic))
            }
            (Some(_), None) => Err(SemiPdeError::InvalidConfig(format!("model {} has no initial-condition generator", self.model))),
            (None, _) => Ok(model),
        }
    }
}

/// Seeds of one repeat, from stream `repeat` of the master generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatSeeds {
    pub data: u64,
    pub network: u64,
}

pub fn repeat_seeds(master: u64, repeat: usize) -> RepeatSeeds {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(repeat as u64);
    RepeatSeeds { data: rng.next_u64(), network: rng.next_u64() }
}

/// Tensor midpoint points over the model box (`q` per axis).
pub fn quadrature_points(domain: &Domain, q: usize) -> Vec<SpaceTimePoint> {
    let mid = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * (i as f64 + 0.5) / q as f64;
    let mut pts = Vec::with_capacity(q * q);
    for i in 0..q {
        let t = mid(domain.t0, domain.t1, i);
        match domain.x {
            Some((lo, hi)) => pts.extend((0..q).map(|j| SpaceTimePoint::new(t, vec![mid(lo, hi, j)]))),
            None => pts.push(SpaceTimePoint::new(t, Vec::new())),
        }
    }
    pts
}

/// Root mean square of `estimate - reference` over the midpoint grid.
pub fn l2_error(
    estimate: impl Fn(&SpaceTimePoint) -> Result<Vec<f64>>,
    reference: &Trajectory,
    domain: &Domain,
    q: usize,
) -> Result<f64> {
    let pts = quadrature_points(domain, q);
    let mut acc = 0.0;
    for p in &pts {
        let a = estimate(p)?;
        let b = reference.eval(p)?;
        acc += a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    }
    Ok((acc / pts.len() as f64).sqrt())
}

/// RMS of `f^ - f0` over the box spanned by the reference solution's state range.
/// Defined only when every feature is a state component.
pub fn f_error(model: &PdeModel, estimate: &Mechanism, truth: &Mechanism, reference: &Trajectory, q: usize) -> Option<f64> {
    let comps: Vec<usize> = model
        .features
        .iter()
        .map(|f| match f {
            FeatureTag::State(k) => Some(*k),
            _ => None,
        })
        .collect::<Option<_>>()?;
    let d = comps.len();
    if d == 0 {
        return None;
    }
    let per_axis = if d == 1 { q } else { ((q as f64).powf(2.0 / d as f64).round() as usize).max(2) };
    let ranges: Vec<(f64, f64)> = comps.iter().map(|&k| component_range(&reference.slices, k)).collect();
    let total = per_axis.pow(d as u32);
    let feats = ndarray::Array2::from_shape_fn((d, total), |(r, j)| {
        let idx = (j / per_axis.pow(r as u32)) % per_axis;
        let (lo, hi) = ranges[r];
        lo + (hi - lo) * (idx as f64 + 0.5) / per_axis as f64
    });
    let a = estimate.eval_batch(feats.view(), model.d_y);
    let b = truth.eval_batch(feats.view(), model.d_y);
    Some(((&a - &b).mapv(|v| v * v).sum() / total as f64).sqrt())
}

/// Outcome of one method on one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub method: Method,
    pub data_seed: u64,
    pub u_error: Option<f64>,
    pub theta_error: Option<f64>,
    pub f_error: Option<f64>,
    pub theta: Option<Vec<f64>>,
    pub best_epoch: Option<usize>,
    pub failure: Option<String>,
}

/// Mean errors of one method over the repeats of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub method: Method,
    pub n: usize,
    pub sigma: f64,
    pub repeats: usize,
    pub failures: usize,
    pub mean_u_error: Option<f64>,
    pub mean_theta_error: Option<f64>,
    pub mean_f_error: Option<f64>,
    /// More than 20% of the repeats failed.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub records: Vec<RepeatRecord>,
    pub cells: Vec<BenchmarkCell>,
    /// Self-convergence estimate of the reference solution.
    pub reference_eps: f64,
}

impl BenchmarkReport {
    pub fn cell(&self, method: Method) -> Option<&BenchmarkCell> {
        self.cells.iter().find(|c| c.method == method)
    }

    pub fn write_records_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "repeat,method,data_seed,u_error,theta_error,f_error,theta,best_epoch,failure")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.repeat,
                r.method.label(),
                r.data_seed,
                opt(r.u_error),
                opt(r.theta_error),
                opt(r.f_error),
                r.theta.as_ref().map_or(String::new(), |t| join(t)),
                r.best_epoch.map_or(String::new(), |e| e.to_string()),
                r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            )?;
        }
        Ok(())
    }

    pub fn write_cells_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "method,n,sigma,repeats,failures,mean_u_error,mean_theta_error,mean_f_error,flagged")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                c.method.label(),
                c.n,
                c.sigma,
                c.repeats,
                c.failures,
                opt(c.mean_u_error),
                opt(c.mean_theta_error),
                opt(c.mean_f_error),
                c.flagged
            )?;
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";")
}

fn theta_error(theta: &[f64], truth: &[f64]) -> f64 {
    theta.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Shared state of a study: model, truth and reference solution.
pub struct Study {
    pub config: ExperimentConfig,
    pub model: PdeModel,
    pub reference: Trajectory,
}

impl Study {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = config.build_model()?;
        if model.truth.is_none() {
            return Err(SemiPdeError::InvalidConfig(format!("model {} has no known truth", model.name)));
        }
        let reference = reference_solve(&model, &config.solver)?;
        Ok(Study { config, model, reference })
    }

    pub fn truth_theta(&self) -> &[f64] {
        self.model.true_theta().expect("checked in new")
    }

    pub fn dataset(&self, repeat: usize) -> Result<(Dataset, RepeatSeeds)> {
        let seeds = repeat_seeds(self.config.seed, repeat);
        let ds = generate_dataset(&self.model, &self.reference, self.config.n, self.config.sigma, seeds.data, self.config.ic_seed)?;
        Ok((ds, seeds))
    }

    fn fit_config(&self, seeds: RepeatSeeds) -> FitConfig {
        FitConfig { seed: seeds.network, ..self.config.fit.clone() }
    }

    /// Evaluator of the fitted SemiPDE solution on the estimation discretization.
    pub fn solution_of(&self, fit: &FitResult) -> Result<Trajectory> {
        let (grid, mesh) = self.config.solver.discretize(&self.model)?;
        solve(&self.model, &fit.theta, &fit.mechanism, &grid, &mesh)
    }

    pub fn u_error_of(&self, est: &FieldEstimate) -> Result<f64> {
        l2_error(|p| est.eval(p), &self.reference, &self.model.domain, self.config.quadrature)
    }

    fn run_method(&self, method: Method, ds: &Dataset, seeds: RepeatSeeds, repeat: usize) -> RepeatRecord {
        let mut rec = RepeatRecord {
            repeat,
            method,
            data_seed: seeds.data,
            u_error: None,
            theta_error: None,
            f_error: None,
            theta: None,
            best_epoch: None,
            failure: None,
        };
        let truth = self.truth_theta();
        let fc = self.fit_config(seeds);
        let outcome: Result<()> = (|| {
            match method {
                Method::SemiPde => {
                    let f = fit(&self.model, ds, &fc, &self.config.solver)?;
                    let traj = self.solution_of(&f)?;
                    rec.u_error = Some(self.u_error_of(&FieldEstimate::Solution(traj))?);
                    rec.theta_error = Some(theta_error(&f.theta, truth));
                    rec.f_error = f_error(
                        &self.model,
                        &f.mechanism,
                        self.model.true_mechanism().expect("truth"),
                        &self.reference,
                        self.config.quadrature,
                    );
                    rec.best_epoch = Some(f.best_epoch);
                    rec.theta = Some(f.theta);
                }
                Method::Parametric => {
                    let r = parametric_fit(&self.model, ds, &fc, &self.config.solver)?;
                    rec.u_error = Some(self.u_error_of(&r.estimate)?);
                    rec.theta_error = r.theta.as_deref().map(|t| theta_error(t, truth));
                    rec.best_epoch = Some(r.best_epoch);
                    rec.theta = r.theta;
                }
                Method::Nonparametric => {
                    let base = self.config.nonparametric.clone().unwrap_or_else(|| self.config.fit.clone());
                    let nc = FitConfig { seed: seeds.network, ..base };
                    let r = nonparametric_fit(ds, &self.model.domain, &nc.hidden, &nc)?;
                    rec.u_error = Some(self.u_error_of(&r.estimate)?);
                    rec.best_epoch = Some(r.best_epoch);
                }
                Method::PinnJoint => {
                    let r = pinn_fit(&self.model, ds, &fc, &self.config.pinn)?;
                    rec.u_error = Some(self.u_error_of(&r.estimate)?);
                    rec.theta_error = r.theta.as_deref().map(|t| theta_error(t, truth));
                    rec.best_epoch = Some(r.best_epoch);
                    rec.theta = r.theta;
                }
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            rec.failure = Some(e.to_string());
        }
        rec
    }
}

fn cells(config: &ExperimentConfig, records: &[RepeatRecord]) -> Vec<BenchmarkCell> {
    config
        .methods
        .iter()
        .map(|&m| {
            let rows: Vec<&RepeatRecord> = records.iter().filter(|r| r.method == m && r.failure.is_none()).collect();
            let failures = records.iter().filter(|r| r.method == m && r.failure.is_some()).count();
            BenchmarkCell {
                method: m,
                n: config.n,
                sigma: config.sigma,
                repeats: config.repeats,
                failures,
                mean_u_error: mean(rows.iter().filter_map(|r| r.u_error)),
                mean_theta_error: mean(rows.iter().filter_map(|r| r.theta_error)),
                mean_f_error: mean(rows.iter().filter_map(|r| r.f_error)),
                flagged: failures * 5 > config.repeats,
            }
        })
        .collect()
}

/// Error table: every configured method on `repeats` seeded datasets.
pub fn run_benchmark(config: &ExperimentConfig) -> Result<BenchmarkReport> {
    let study = Study::new(config.clone())?;
    let (theta, mech) = study.model.truth.clone().expect("checked");
    let reference_eps = verify_accuracy_on(&study.model, &theta, &mech, &study.reference.grid, &study.reference.mesh, 1e-5)?.eps_u;
    let records: Vec<RepeatRecord> = (0..config.repeats)
        .into_par_iter()
        .map(|r| -> Result<Vec<RepeatRecord>> {
            let (ds, seeds) = study.dataset(r)?;
            Ok(config.methods.iter().map(|&m| study.run_method(m, &ds, seeds, r)).collect())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let cells = cells(config, &records);
    Ok(BenchmarkReport { records, cells, reference_eps })
}

/// Aggregate estimator statistics for one coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub coordinate: usize,
    pub successes: usize,
    pub bias: f64,
    /// Sample standard deviation (divisor `m - 1`).
    pub std: f64,
    /// `(nominal level 1 - alpha, empirical coverage)`.
    pub cover: Vec<(f64, f64)>,
    /// Mean of `sqrt(Sigma_jj / n)` over repeats.
    pub mean_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub coordinate: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub repeat: usize,
    pub data_seed: u64,
    pub theta: Option<Vec<f64>>,
    pub std_error: Option<Vec<f64>>,
    /// Per coordinate, per alpha: whether the interval contains the truth.
    pub covered: Option<Vec<Vec<bool>>>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub records: Vec<CoverageRecord>,
    pub metrics: Vec<MetricsRow>,
    pub histogram: Vec<HistogramBin>,
    pub failures: usize,
    pub flagged: bool,
}

impl CoverageReport {
    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let levels: Vec<f64> = self.metrics.first().map(|m| m.cover.iter().map(|c| c.0).collect()).unwrap_or_default();
        let head: Vec<String> = levels.iter().map(|l| format!("cover_{:.0}", 100.0 * l)).collect();
        writeln!(w, "coordinate,successes,bias,std,mean_std_error,{}", head.join(","))?;
        for m in &self.metrics {
            let c: Vec<String> = m.cover.iter().map(|c| format!("{}", c.1)).collect();
            writeln!(w, "{},{},{:e},{:e},{:e},{}", m.coordinate, m.successes, m.bias, m.std, m.mean_std_error, c.join(","))?;
        }
        Ok(())
    }

    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "coordinate,lo,hi,count,density")?;
        for b in &self.histogram {
            writeln!(w, "{},{:e},{:e},{},{:e}", b.coordinate, b.lo, b.hi, b.count, b.density)?;
        }
        Ok(())
    }

    pub fn write_records_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "repeat,data_seed,theta,std_error,covered,failure")?;
        for r in &self.records {
            let cov = r.covered.as_ref().map_or(String::new(), |c| {
                c.iter().map(|row| row.iter().map(|b| if *b { "1" } else { "0" }).collect::<String>()).collect::<Vec<_>>().join(";")
            });
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.repeat,
                r.data_seed,
                r.theta.as_ref().map_or(String::new(), |t| join(t)),
                r.std_error.as_ref().map_or(String::new(), |t| join(t)),
                cov,
                r.failure.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            )?;
        }
        Ok(())
    }
}

/// Equal-width bins of `values` spanning their range.
pub fn histogram(coordinate: usize, values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1e-12_f64.max(lo.abs() * 1e-9);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = values.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| HistogramBin {
            coordinate,
            lo: lo + k as f64 * width,
            hi: lo + (k + 1) as f64 * width,
            count: c,
            density: c as f64 / (n * width),
        })
        .collect()
}

/// Coverage study: fit, infer and check interval coverage on every repeat.
pub fn run_coverage(config: &ExperimentConfig) -> Result<CoverageReport> {
    let study = Study::new(config.clone())?;
    let truth = study.truth_theta().to_vec();
    let p = truth.len();
    let alphas = config.inference.alphas.clone();
    let records: Vec<CoverageRecord> = (0..config.repeats)
        .into_par_iter()
        .map(|r| -> Result<CoverageRecord> {
            let (ds, seeds) = study.dataset(r)?;
            let fc = study.fit_config(seeds);
            Ok(match fit_and_infer(&study.model, &ds, &fc, &config.inference, &config.solver) {
                Ok((f, rep)) => {
                    let covered = (0..p)
                        .map(|j| {
                            alphas.iter().map(|&a| rep.interval(j, a).is_some_and(|iv| iv.contains(truth[j]))).collect()
                        })
                        .collect();
                    CoverageRecord {
                        repeat: r,
                        data_seed: seeds.data,
                        theta: Some(f.theta),
                        std_error: Some((0..p).map(|j| rep.std_error(j)).collect()),
                        covered: Some(covered),
                        failure: None,
                    }
                }
                Err(e) => CoverageRecord {
                    repeat: r,
                    data_seed: seeds.data,
                    theta: None,
                    std_error: None,
                    covered: None,
                    failure: Some(e.to_string()),
                },
            })
        })
        .collect::<Result<_>>()?;
    let ok: Vec<&CoverageRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    let failures = records.len() - ok.len();
    let mut metrics = Vec::new();
    let mut hist = Vec::new();
    for j in 0..p {
        let dev: Vec<f64> = ok.iter().map(|r| r.theta.as_ref().expect("ok")[j] - truth[j]).collect();
        let m = dev.len();
        let bias = mean(dev.iter().cloned()).unwrap_or(f64::NAN);
        let std = if m > 1 { (dev.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt() } else { f64::NAN };
        let cover = alphas
            .iter()
            .enumerate()
            .map(|(a, &alpha)| {
                let hits = ok.iter().filter(|r| r.covered.as_ref().expect("ok")[j][a]).count();
                (1.0 - alpha, if m > 0 { hits as f64 / m as f64 } else { f64::NAN })
            })
            .collect();
        let mean_std_error = mean(ok.iter().map(|r| r.std_error.as_ref().expect("ok")[j])).unwrap_or(f64::NAN);
        metrics.push(MetricsRow { coordinate: j, successes: m, bias, std, cover, mean_std_error });
        hist.extend(histogram(j, &dev, config.histogram_bins));
    }
    Ok(CoverageReport { records, metrics, histogram: hist, failures, flagged: failures * 5 > config.repeats })
}
