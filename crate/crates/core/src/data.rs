//! Scattered observations, their partitions, simulation from a reference solve,
//! and CSV ingestion/export.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SemiPdeError};
use crate::grid::SpaceTimePoint;
use crate::model::PdeModel;
use crate::solver::{solve, SolverConfig, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: SpaceTimePoint,
    pub y: Vec<f64>,
}

/// Two independent partitions of the indices: train/validation (4:1) for early
/// stopping, and part 1/part 2 (1:1) for inference. Within each part the
/// train/validation ratio is preserved, so `train ∩ part1` and `validation ∩ part1`
/// form a 4:1 split of part 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partitions {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub part1: Vec<usize>,
    pub part2: Vec<usize>,
}

impl Partitions {
    pub fn new(n: usize, seed: u64, train_fraction: f64, part1_fraction: f64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) || !(part1_fraction > 0.0 && part1_fraction < 1.0) {
            return Err(SemiPdeError::InvalidSplit(format!(
                "fractions must lie in (0, 1), got train={train_fraction} part1={part1_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x5eed);
        idx.shuffle(&mut rng);
        let n1 = (n as f64 * part1_fraction).round() as usize;
        let (p1, p2) = idx.split_at(n1);
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for part in [p1, p2] {
            let k = (part.len() as f64 * train_fraction).round() as usize;
            train.extend_from_slice(&part[..k]);
            validation.extend_from_slice(&part[k..]);
        }
        let mut p = Partitions { train, validation, part1: p1.to_vec(), part2: p2.to_vec() };
        for v in [&mut p.train, &mut p.validation, &mut p.part1, &mut p.part2] {
            v.sort_unstable();
        }
        for (name, v) in [("train", &p.train), ("validation", &p.validation), ("part1", &p.part1), ("part2", &p.part2)] {
            if v.is_empty() {
                return Err(SemiPdeError::InvalidSplit(format!("{name} partition is empty for n={n}")));
            }
        }
        Ok(p)
    }

    /// Train/validation indices restricted to part 1 (used when part 2 is held out for inference).
    pub fn part1_split(&self) -> (Vec<usize>, Vec<usize>) {
        let in1 = |i: &usize| self.part1.binary_search(i).is_ok();
        (
            self.train.iter().copied().filter(in1).collect(),
            self.validation.iter().copied().filter(in1).collect(),
        )
    }

    /// Checks both partitions are disjoint and cover `0..n`.
    pub fn check(&self, n: usize) -> Result<()> {
        for (a, b, name) in [
            (&self.train, &self.validation, "train/validation"),
            (&self.part1, &self.part2, "part1/part2"),
        ] {
            let mut seen = vec![false; n];
            for &i in a.iter().chain(b.iter()) {
                if i >= n || seen[i] {
                    return Err(SemiPdeError::InvalidSplit(format!("{name} overlap or out-of-range index {i}")));
                }
                seen[i] = true;
            }
            if seen.iter().any(|s| !s) {
                return Err(SemiPdeError::InvalidSplit(format!("{name} does not cover all indices")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Simulated { model: String, theta: Vec<f64>, ic_seed: Option<u64> },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub partitions: Partitions,
    pub sigma: Option<f64>,
    pub seed: u64,
    pub source: DataSource,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<Observation> {
        idx.iter().map(|&i| self.observations[i].clone()).collect()
    }

    pub fn from_observations(observations: Vec<Observation>, seed: u64, source: DataSource) -> Result<Self> {
        let partitions = Partitions::new(observations.len(), seed, 0.8, 0.5)?;
        Ok(Dataset { observations, partitions, sigma: None, seed, source })
    }

    /// CSV with header `t, x1..xd, y1..yd_y`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let first = self.observations.first().ok_or(SemiPdeError::EmptyPartition("dataset"))?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=first.point.x.len()).map(|i| format!("x{i}")));
        header.extend((1..=first.y.len()).map(|i| format!("y{i}")));
        w.write_record(&header)?;
        for o in &self.observations {
            let mut row = vec![o.point.t.to_string()];
            row.extend(o.point.x.iter().map(|v| v.to_string()));
            row.extend(o.y.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let names: Vec<String> = header.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
        if names.first().map(String::as_str) != Some("t") {
            return Err(SemiPdeError::Format("first column must be `t`".into()));
        }
        let dx = names.iter().filter(|h| h.starts_with('x')).count();
        let dy = names.iter().filter(|h| h.starts_with('y')).count();
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=dx).map(|i| format!("x{i}")))
            .chain((1..=dy).map(|i| format!("y{i}")))
            .collect();
        if names != expected || dy == 0 {
            return Err(SemiPdeError::Format(format!("expected header {expected:?}, got {names:?}")));
        }
        let mut obs = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| SemiPdeError::Format(format!("row {}: {e}", line + 2)))?;
            if vals.len() != expected.len() {
                return Err(SemiPdeError::Format(format!("row {} has {} fields", line + 2, vals.len())));
            }
            obs.push(Observation {
                point: SpaceTimePoint::new(vals[0], vals[1..=dx].to_vec()),
                y: vals[1 + dx..].to_vec(),
            });
        }
        Dataset::from_observations(obs, seed, DataSource::File(path.to_path_buf()))
    }
}

/// Fine-grid solve of the model's truth: 4x the spatial nodes and at most a quarter
/// of the estimation step, further reduced for stability at the finer spacing.
pub fn reference_solve(model: &PdeModel, config: &SolverConfig) -> Result<Trajectory> {
    let (theta, mech) = model
        .truth
        .as_ref()
        .ok_or_else(|| SemiPdeError::InvalidConfig(format!("model {} has no known truth", model.name)))?;
    let (grid, mesh) = config.discretize(model)?;
    let fine = grid.refined(4)?;
    let rho = model.parametric.stiffness(&fine, theta);
    let mut dt = mesh.dt() / 4.0;
    if rho > 0.0 {
        dt = dt.min(2.0 * 0.4 / rho);
    }
    let fine_mesh = crate::grid::TimeMesh::with_max_dt(mesh.t0(), mesh.t1(), dt, mesh.steps() * 4)?;
    solve(model, theta, mech, &fine, &fine_mesh).map_err(|e| match e {
        SemiPdeError::Diverged { .. } => SemiPdeError::ReferenceSolveDiverged,
        other => other,
    })
}

/// Uniform design over the model's box with `Y = u_ref(X) + N(0, sigma^2 I)`.
pub fn generate_dataset(
    model: &PdeModel,
    reference: &Trajectory,
    n: usize,
    sigma: f64,
    seed: u64,
    ic_seed: Option<u64>,
) -> Result<Dataset> {
    if !(sigma >= 0.0) {
        return Err(SemiPdeError::InvalidConfig(format!("sigma must be non-negative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let d = model.domain;
    let mut obs = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random_range(d.t0..=d.t1);
        let x = match d.x {
            Some((lo, hi)) => vec![rng.random_range(lo..=hi)],
            None => vec![],
        };
        let point = SpaceTimePoint::new(t, x);
        let mut y = reference.eval(&point)?;
        if sigma > 0.0 {
            for v in &mut y {
                *v += noise.sample(&mut rng);
            }
        }
        obs.push(Observation { point, y });
    }
    let mut ds = Dataset::from_observations(
        obs,
        seed,
        DataSource::Simulated {
            model: model.name.clone(),
            theta: model.true_theta().map(<[f64]>::to_vec).unwrap_or_default(),
            ic_seed,
        },
    )?;
    ds.sigma = Some(sigma);
    Ok(ds)
}
