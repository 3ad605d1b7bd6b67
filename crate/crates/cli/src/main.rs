use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use semipde::data::Dataset;
use semipde::estimator::{fit, FitResult};
use semipde::experiment::{run_benchmark, run_coverage, ExperimentConfig, Study};
use semipde::inference::fit_and_infer;
use semipde::solver::solve;
use semipde::PdeModel;

/// Semiparametric PDE estimation with confidence intervals for the physical parameter.
#[derive(Parser)]
#[command(name = "semipde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one repeat's dataset from the configured model.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Repeat index whose seeds are used.
        #[arg(long, default_value_t = 0)]
        repeat: usize,
        /// Also write the reference trajectory.
        #[arg(long)]
        trajectory: bool,
    },
    /// Fit theta and the mechanism on a dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: DataInput,
    },
    /// Fit on part 1, then build intervals from part 2.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: DataInput,
    },
    /// Error table of every configured method over seeded repeats.
    Benchmark {
        #[command(flatten)]
        common: Common,
    },
    /// Bias, spread and interval coverage over seeded repeats.
    Coverage {
        #[command(flatten)]
        common: Common,
    },
    /// Print a preset configuration as JSON.
    Template {
        #[arg(value_enum, default_value_t = Preset::Benchmark)]
        preset: Preset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Desk-scale Case 1 error table.
    Benchmark,
    /// Desk-scale Case 1 coverage study.
    Coverage,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; built-in desk defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DataInput {
    /// Dataset CSV (`t, x1.., y1..`); simulated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Repeat index used when simulating.
    #[arg(long, default_value_t = 0)]
    repeat: usize,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))
            }
            None => Ok(ExperimentConfig::case1_desk()),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { common, repeat, trajectory } => simulate(&common, repeat, trajectory),
        Command::Fit { common, input } => fit_cmd(&common, &input),
        Command::Infer { common, input } => infer_cmd(&common, &input),
        Command::Benchmark { common } => benchmark(&common),
        Command::Coverage { common } => coverage(&common),
        Command::Template { preset } => {
            let c = match preset {
                Preset::Benchmark => ExperimentConfig::case1_desk(),
                Preset::Coverage => ExperimentConfig::case1_coverage(),
            };
            println!("{}", serde_json::to_string_pretty(&c)?);
            Ok(())
        }
    }
}

fn simulate(common: &Common, repeat: usize, trajectory: bool) -> Result<()> {
    let config = common.load()?;
    let study = Study::new(config)?;
    let (ds, _) = study.dataset(repeat)?;
    ds.write_csv(&common.path("dataset.csv"))?;
    if trajectory {
        study.reference.write_csv(&common.path("reference.csv"))?;
    }
    println!("wrote {} observations to {}", ds.len(), common.path("dataset.csv").display());
    Ok(())
}

fn dataset(config: &ExperimentConfig, input: &DataInput) -> Result<(PdeModel, Dataset)> {
    match &input.data {
        Some(p) => {
            let model = config.build_model()?;
            let ds = Dataset::read_csv(p, config.seed).with_context(|| format!("reading {}", p.display()))?;
            Ok((model, ds))
        }
        None => {
            let study = Study::new(config.clone())?;
            let (ds, _) = study.dataset(input.repeat)?;
            Ok((study.model, ds))
        }
    }
}

fn write_fit(common: &Common, model: &PdeModel, config: &ExperimentConfig, f: &FitResult) -> Result<()> {
    f.write_trace_csv(&common.path("trace.csv"))?;
    let mut w = fs::File::create(common.path("results.csv"))?;
    writeln!(w, "key,value")?;
    for (j, t) in f.theta.iter().enumerate() {
        writeln!(w, "theta{},{t}", j + 1)?;
    }
    writeln!(w, "lambda,{}", f.lambda)?;
    writeln!(w, "best_epoch,{}", f.best_epoch)?;
    writeln!(w, "best_val_loss,{}", f.best_val_loss)?;
    writeln!(w, "n_train,{}", f.n_train)?;
    writeln!(w, "n_val,{}", f.n_val)?;
    writeln!(w, "step_reductions,{}", f.step_reductions)?;
    if let Some(net) = f.network() {
        net.save_checkpoint(&common.path("network.json"))?;
    }
    let (grid, mesh) = config.solver.discretize(model)?;
    solve(model, &f.theta, &f.mechanism, &grid, &mesh)?.write_csv(&common.path("solution.csv"))?;
    Ok(())
}

fn fit_cmd(common: &Common, input: &DataInput) -> Result<()> {
    let config = common.load()?;
    let (model, ds) = dataset(&config, input)?;
    let f = fit(&model, &ds, &config.fit, &config.solver)?;
    write_fit(common, &model, &config, &f)?;
    println!("theta = {:?} (epoch {}, val loss {:e})", f.theta, f.best_epoch, f.best_val_loss);
    Ok(())
}

fn infer_cmd(common: &Common, input: &DataInput) -> Result<()> {
    let config = common.load()?;
    let (model, ds) = dataset(&config, input)?;
    let (f, report) = fit_and_infer(&model, &ds, &config.fit, &config.inference, &config.solver)?;
    write_fit(common, &model, &config, &f)?;
    fs::write(common.path("report.json"), serde_json::to_string_pretty(&report)?)?;
    for iv in &report.intervals {
        println!("gamma {:?} alpha {}: [{:e}, {:e}]", iv.gamma, iv.alpha, iv.lo, iv.hi);
    }
    Ok(())
}

fn benchmark(common: &Common) -> Result<()> {
    let config = common.load()?;
    let report = run_benchmark(&config)?;
    report.write_cells_csv(&common.path("results.csv"))?;
    report.write_records_csv(&common.path("records.csv"))?;
    fs::write(common.path("report.json"), serde_json::to_string_pretty(&report)?)?;
    for c in &report.cells {
        println!(
            "{:<14} u {:>10} theta {:>10} f {:>10} failures {}",
            c.method.label(),
            fmt(c.mean_u_error),
            fmt(c.mean_theta_error),
            fmt(c.mean_f_error),
            c.failures
        );
    }
    Ok(())
}

fn coverage(common: &Common) -> Result<()> {
    let config = common.load()?;
    let report = run_coverage(&config)?;
    report.write_metrics_csv(&common.path("results.csv"))?;
    report.write_histogram_csv(&common.path("histogram.csv"))?;
    report.write_records_csv(&common.path("records.csv"))?;
    fs::write(common.path("report.json"), serde_json::to_string_pretty(&report)?)?;
    for m in &report.metrics {
        println!("theta{}: bias {:e} std {:e} cover {:?}", m.coordinate + 1, m.bias, m.std, m.cover);
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3e}"))
}
