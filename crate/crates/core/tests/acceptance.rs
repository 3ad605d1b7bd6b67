//! Acceptance criteria 1 to 9. Each test prints one `criterion N: PASS|FAIL` line.
//! The desk-scale studies (criteria 4 to 8) take about two hours on one core.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use semipde::adjoint::LossProblem;
use semipde::data::{generate_dataset, reference_solve};
use semipde::estimator::{FitConfig, FitResult, StopReason};
use semipde::experiment::{run_benchmark, run_coverage, BenchmarkReport, CoverageReport, ExperimentConfig, Method};
use semipde::inference::{confidence_interval, infer, InferenceConfig};
use semipde::model::{builtin, InitialCondition};
use semipde::solver::{solve, SolverConfig};
use semipde::{interpolate, interpolate_adjoint, Mechanism, NetArchitecture, NetworkParams, SpaceTimePoint, SpatialGrid, ThetaBox, TimeMesh};

/// Writes straight to stderr so the line shows even when the test passes under capture.
fn say(line: &str) {
    let _ = writeln!(std::io::stderr(), "{line}");
}

fn verdict(n: u32, pass: bool, detail: String) {
    say(&format!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" }));
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn criterion_1_adjoint_matches_finite_differences() {
    let config = ExperimentConfig::case1_desk();
    let model = config.build_model().unwrap();
    let reference = reference_solve(&model, &config.solver).unwrap();
    let obs = generate_dataset(&model, &reference, 50, 0.1, 11, None).unwrap().observations;
    let (grid, mesh) = config.solver.discretize(&model).unwrap();
    let prob = LossProblem::new(&model, &grid, &mesh, &obs).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let base = config.fit.initial_network(&model).unwrap();
    let phi: Vec<f64> = base.phi().iter().map(|w| w + 0.02 * rng.sample::<f64, _>(StandardNormal)).collect();
    let net = base.with_phi(phi);
    let theta = [rng.random_range(model.theta_box.lower[0]..model.theta_box.upper[0])];
    let lambda = 1e-3;
    let g = prob.loss_and_grad(&theta, &Mechanism::Network(net.clone()), lambda, None).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dir: Vec<f64> = (0..=net.len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let dir: Vec<f64> = dir.iter().map(|d| d / norm).collect();
        let loss = |eps: f64| {
            let th = [theta[0] + eps * dir[0]];
            let phi = net.phi().iter().zip(&dir[1..]).map(|(w, d)| w + eps * d).collect();
            prob.loss_and_grad(&th, &Mechanism::Network(net.with_phi(phi)), lambda, None).unwrap().loss
        };
        let fd = (loss(h) - loss(-h)) / (2.0 * h);
        let ad = g.grad_theta[0] * dir[0] + g.grad_phi.iter().zip(&dir[1..]).map(|(a, b)| a * b).sum::<f64>();
        worst = worst.max(rel(fd, ad));
    }
    verdict(1, worst < 1e-5, format!("worst relative error {worst:.2e} over 100 directions (< 1e-5)"));
}

fn heat_error(nodes: usize) -> f64 {
    let mut m = builtin::case1().with_ic(InitialCondition::SineMode);
    m.theta_box = ThetaBox::new(vec![0.0], vec![1.0]).unwrap();
    m.domain.t1 = 0.5;
    let (grid, mesh) = SolverConfig { nodes, ..Default::default() }.discretize(&m).unwrap();
    let tr = solve(&m, &[1.0], &Mechanism::Zero, &grid, &mesh).unwrap();
    let mut sum = 0.0;
    let mut count = 0;
    for (n, s) in tr.slices.iter().enumerate() {
        let t = mesh.time(n);
        for j in 0..grid.nodes() {
            sum += (s[[0, j]] - (-PI * PI * t).exp() * (PI * grid.node_x(j)).sin()).powi(2);
            count += 1;
        }
    }
    (sum / count as f64).sqrt()
}

#[test]
fn criterion_2_solver_oracles() {
    let e64 = heat_error(64);
    let ratio = e64 / heat_error(128);

    let m = builtin::example3();
    let (grid, mesh) = SolverConfig { max_dt: 1e-3, ..Default::default() }.discretize(&m).unwrap();
    let tr = solve(&m, &[1.0], &Mechanism::Zero, &grid, &mesh).unwrap();
    let ex3 = (0..=mesh.steps())
        .map(|n| (tr.slices[n][[0, 0]] - builtin::example3_solution_unit_theta(mesh.time(n))).abs())
        .fold(0.0, f64::max);

    let pass = e64 < 1e-3 && (3.5..=4.5).contains(&ratio) && ex3 < 1e-6;
    verdict(2, pass, format!("heat L2 {e64:.2e} (< 1e-3), ratio {ratio:.3} (in [3.5, 4.5]), example 3 {ex3:.2e} (< 1e-6)"));
}

#[test]
fn criterion_3_periodic_diffusion_conserves_sum() {
    let m = builtin::case1();
    let grid = m.grid(32).unwrap();
    let mesh = TimeMesh::new(0.0, 2.5, 1000).unwrap();
    let tr = solve(&m, &[0.03], &Mechanism::Zero, &grid, &mesh).unwrap();
    let s0 = tr.slices[0].sum();
    let worst = tr.slices.iter().map(|s| (s.sum() - s0).abs() / s0.abs()).fold(0.0, f64::max);
    verdict(3, worst <= 1e-12, format!("worst relative drift {worst:.2e} over 1000 steps (<= 1e-12)"));
}

fn benchmark() -> &'static BenchmarkReport {
    static REPORT: OnceLock<BenchmarkReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let config = ExperimentConfig { n: 800, sigma: 0.1, repeats: 10, ..ExperimentConfig::case1_desk() };
        let r = run_benchmark(&config).unwrap();
        for c in &r.cells {
            say(&format!(
                "benchmark {:<14} u {:?} theta {:?} f {:?} failures {}",
                c.method.label(),
                c.mean_u_error,
                c.mean_theta_error,
                c.mean_f_error,
                c.failures
            ));
        }
        say(&format!("benchmark reference eps_u {:.2e}", r.reference_eps));
        r
    })
}

fn u_err(r: &BenchmarkReport, m: Method) -> f64 {
    r.cell(m).and_then(|c| c.mean_u_error).unwrap_or(f64::INFINITY)
}

fn theta_err(r: &BenchmarkReport, m: Method) -> f64 {
    r.cell(m).and_then(|c| c.mean_theta_error).unwrap_or(f64::INFINITY)
}

#[test]
fn criterion_4_desk_error_table() {
    let r = benchmark();
    let (u, th) = (u_err(r, Method::SemiPde), theta_err(r, Method::SemiPde));
    let (b1, b2, b3) = (u_err(r, Method::Parametric), u_err(r, Method::Nonparametric), theta_err(r, Method::PinnJoint));
    let pass = u <= 1e-2 && th <= 2e-3 && u < b2 && b2 < b1 && th < b3;
    verdict(
        4,
        pass,
        format!(
            "u-error {u:.3e} (<= 1e-2), theta-error {th:.3e} (<= 2e-3), u: semipde {u:.3e} < nonparametric {b2:.3e} < parametric {b1:.3e}, theta: semipde {th:.3e} < pinn {b3:.3e}"
        ),
    );
}

#[test]
fn criterion_5_misspecified_parametric_gap() {
    let r = benchmark();
    let (u, b1) = (u_err(r, Method::SemiPde), u_err(r, Method::Parametric));
    verdict(5, b1 >= 0.1 && b1 >= 10.0 * u, format!("parametric u-error {b1:.3e} (>= 0.1), semipde {u:.3e}, ratio {:.1} (>= 10)", b1 / u));
}

fn coverage() -> &'static CoverageReport {
    static REPORT: OnceLock<CoverageReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let r = run_coverage(&ExperimentConfig::case1_coverage()).unwrap();
        for m in &r.metrics {
            say(&format!(
                "coverage theta{}: successes {} bias {:.3e} std {:.3e} mean se {:.3e} cover {:?}",
                m.coordinate + 1,
                m.successes,
                m.bias,
                m.std,
                m.mean_std_error,
                m.cover
            ));
        }
        r
    })
}

#[test]
fn criterion_6_interval_coverage() {
    let r = coverage();
    let m = &r.metrics[0];
    let cover = |level: f64| m.cover.iter().find(|c| (c.0 - level).abs() < 1e-9).map_or(f64::NAN, |c| c.1);
    let (c95, c90, c80) = (cover(0.95), cover(0.90), cover(0.80));
    let pass = (0.89..=0.99).contains(&c95) && (0.83..=0.96).contains(&c90) && (0.71..=0.88).contains(&c80) && !r.flagged;
    verdict(
        6,
        pass,
        format!("95% {c95:.2} (in [0.89, 0.99]), 90% {c90:.2} (in [0.83, 0.96]), 80% {c80:.2} (in [0.71, 0.88]), failures {}", r.failures),
    );
}

/// `d/dtheta` of `u = int_0^x e^{theta (x - s)} g(s) ds`, by composite Simpson.
fn example3_theta_derivative(theta: f64, x: f64) -> f64 {
    let m = 2000;
    let h = x / m as f64;
    let f = |s: f64| (x - s) * (theta * (x - s)).exp() * builtin::example3_forcing(s);
    let mut acc = f(0.0) + f(x);
    for k in 1..m {
        acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn example3_se_ratio() -> f64 {
    let model = builtin::example3();
    let solver = SolverConfig { max_dt: 1e-3, ..Default::default() };
    let (grid, mesh) = solver.discretize(&model).unwrap();
    let truth = solve(&model, &[1.0], &Mechanism::Zero, &grid, &mesh).unwrap();
    let ds = generate_dataset(&model, &truth, 400, 0.1, 21, None).unwrap();
    let part2 = ds.subset(&ds.partitions.part2);
    let fc = FitConfig { hidden: vec![8, 8], seed: 3, eta: 1e-3, ..Default::default() };
    // the mechanism stays at its reference weights, so only theta is informative
    let fit = FitResult {
        theta: vec![1.0],
        mechanism: Mechanism::Network(fc.initial_network(&model).unwrap()),
        best_val_loss: 0.0,
        best_epoch: 0,
        trace: Vec::new(),
        lambda: 0.0,
        stop: StopReason::MaxEpochs,
        n_train: 160,
        n_val: 40,
        step_reductions: 0,
    };
    let cfg = InferenceConfig { delta: Some(1e-3), lambda_tilde: Some(1e6), nuisance_epochs: 20, ..Default::default() };
    let report = infer(&model, &fit, &part2, &cfg, &fc, &solver).unwrap();
    let info = part2.iter().map(|o| example3_theta_derivative(1.0, o.point.t).powi(2)).sum::<f64>() / part2.len() as f64;
    report.sigma_eff[0][0].sqrt() / (report.sigma2 / info).sqrt()
}

#[test]
fn criterion_7_variance_estimator() {
    let ex3 = example3_se_ratio();
    let m = &coverage().metrics[0];
    let ratio = m.mean_std_error / m.std;
    let pass = (ex3 - 1.0).abs() < 0.05 && (1.0 / 1.5..=1.5).contains(&ratio);
    verdict(
        7,
        pass,
        format!(
            "example 3 estimated/analytic se {ex3:.4} (within 5%), case 1 mean se {:.3e} / monte-carlo std {:.3e} = {ratio:.3} (within factor 1.5)",
            m.mean_std_error, m.std
        ),
    );
}

#[test]
fn criterion_8_errors_shrink_with_n() {
    let run = |n: usize| {
        let config = ExperimentConfig { n, repeats: 5, methods: vec![Method::SemiPde], ..ExperimentConfig::case1_desk() };
        let r = run_benchmark(&config).unwrap();
        let c = r.cell(Method::SemiPde).unwrap().clone();
        (c.mean_u_error.unwrap_or(f64::INFINITY), c.mean_f_error.unwrap_or(f64::INFINITY))
    };
    let (u200, f200) = run(200);
    let (u1600, f1600) = run(1600);
    verdict(
        8,
        u1600 < u200 && f1600 < f200,
        format!("u-error {u200:.3e} -> {u1600:.3e}, f-error {f200:.3e} -> {f1600:.3e} (n = 200 -> 1600, strict decrease)"),
    );
}

fn shifted_zero_at_reference() -> bool {
    let arch = NetArchitecture::new(2, vec![16, 64, 64, 16], 1, 1).unwrap();
    let p = NetworkParams::init_reference(&arch, 9).unwrap();
    [[0.3, -0.4], [5.0, 2.0], [0.0, 0.0]].iter().all(|v| p.forward_shifted(v)[0] == 0.0)
}

/// Worst relative error of the weight gradient and the penalty gradient against central differences.
fn network_gradient_errors() -> (f64, f64) {
    let base = NetworkParams::init_reference(&NetArchitecture::default(), 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let net = base.with_phi(base.phi().iter().map(|w| w + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect());
    let (v, c) = ([0.41], [1.7]);
    let (g, _) = net.backward_shifted(&v, &c);
    let pg = net.penalty_grad();
    let h = 1e-6;
    let (mut worst_w, mut worst_p): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let j = rng.random_range(0..net.len());
        let at = |eps: f64| {
            let mut phi = net.phi().to_vec();
            phi[j] += eps;
            net.with_phi(phi)
        };
        let fd = (at(h).forward_shifted(&v)[0] - at(-h).forward_shifted(&v)[0]) * c[0] / (2.0 * h);
        if fd.abs() > 1e-8 || g[j].abs() > 1e-8 {
            worst_w = worst_w.max(rel(fd, g[j]));
        }
        let fd = (at(h).penalty() - at(-h).penalty()) / (2.0 * h);
        if fd.abs() > 1e-8 || pg[j].abs() > 1e-8 {
            worst_p = worst_p.max(rel(fd, pg[j]));
        }
    }
    (worst_w, worst_p)
}

/// `|<I u, c> - <u, I^T c>|` relative to the pairing's scale, worst over random points.
fn interpolation_pairing_error() -> f64 {
    let grid = SpatialGrid::periodic(24, -1.0, 1.0).unwrap();
    let mesh = TimeMesh::new(0.0, 2.5, 40).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let slices: Vec<ndarray::Array2<f64>> =
        (0..=mesh.steps()).map(|_| ndarray::Array2::from_shape_fn((2, grid.nodes()), |_| rng.random_range(-1.0..1.0))).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p = SpaceTimePoint::new(rng.random_range(0.0..=2.5), vec![rng.random_range(-1.0..=1.0)]);
        let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let forward: f64 = interpolate(&grid, &mesh, &slices, &p).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum();
        let adjoint: f64 = interpolate_adjoint(&grid, &mesh, &p, &c).unwrap().iter().map(|&(s, k, j, w)| w * slices[s][[k, j]]).sum();
        worst = worst.max((forward - adjoint).abs());
    }
    worst
}

fn intervals_nest_and_scale() -> bool {
    let theta = [0.012, 0.4];
    let sigma = vec![vec![2.0e-3, 1.0e-4], vec![1.0e-4, 0.5]];
    let g = [1.0, 0.0];
    let at = |alpha: f64, n: usize| confidence_interval(&theta, &sigma, &g, alpha, n).unwrap();
    let nested = at(0.05, 160).lo <= at(0.1, 160).lo && at(0.1, 160).lo <= at(0.2, 160).lo && at(0.2, 160).hi <= at(0.1, 160).hi && at(0.1, 160).hi <= at(0.05, 160).hi;
    let width = |n| at(0.05, n).hi - at(0.05, n).lo;
    nested && rel(width(160) / width(640), 2.0) < 1e-12
}

fn seeded_benchmark_is_bitwise_deterministic() -> bool {
    let mut config = ExperimentConfig::case1_desk();
    config.n = 60;
    config.repeats = 2;
    config.solver.nodes = 16;
    config.fit.hidden = vec![8, 8];
    config.fit.max_epochs = 20;
    config.fit.eta = 2e-3;
    config.nonparametric = Some(FitConfig { hidden: vec![8], max_epochs: 20, ..Default::default() });
    config.pinn.max_epochs = 20;
    config.pinn.collocation_t = 8;
    config.pinn.collocation_x = 8;
    config.pinn.boundary_points = 8;
    config.quadrature = 32;
    let dir = tempfile::tempdir().unwrap();
    let bytes = |tag: &str| {
        let r = run_benchmark(&config).unwrap();
        let (a, b) = (dir.path().join(format!("{tag}_cells.csv")), dir.path().join(format!("{tag}_records.csv")));
        r.write_cells_csv(&a).unwrap();
        r.write_records_csv(&b).unwrap();
        (std::fs::read(a).unwrap(), std::fs::read(b).unwrap())
    };
    bytes("first") == bytes("second")
}

#[test]
fn criterion_9_property_suite() {
    let zero = shifted_zero_at_reference();
    let (gw, gp) = network_gradient_errors();
    let pairing = interpolation_pairing_error();
    let ci = intervals_nest_and_scale();
    let det = seeded_benchmark_is_bitwise_deterministic();
    let pass = zero && gw < 1e-5 && gp < 1e-5 && pairing < 1e-13 && ci && det;
    verdict(
        9,
        pass,
        format!(
            "shifted zero {zero}, weight grad {gw:.2e} and penalty grad {gp:.2e} (< 1e-5), interpolation pairing {pairing:.2e} (< 1e-13), interval nesting and scaling {ci}, deterministic benchmark {det}"
        ),
    );
}
