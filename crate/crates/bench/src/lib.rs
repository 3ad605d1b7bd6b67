//! Shared fixtures for the criterion benchmarks.

use ndarray::Array2;
use semipde::data::Observation;
use semipde::estimator::FitConfig;
use semipde::experiment::{ExperimentConfig, Study};
use semipde::{Mechanism, PdeModel, SpatialGrid, TimeMesh};

/// Case 1 at the desk discretization with a simulated dataset and a fresh network.
pub struct Fixture {
    pub model: PdeModel,
    pub grid: SpatialGrid,
    pub mesh: TimeMesh,
    pub observations: Vec<Observation>,
    pub theta: Vec<f64>,
    pub mechanism: Mechanism,
}

impl Fixture {
    pub fn case1(nodes: usize, n: usize) -> Self {
        let mut config = ExperimentConfig::case1_desk();
        config.solver.nodes = nodes;
        config.n = n;
        let study = Study::new(config.clone()).expect("reference solve");
        let (ds, _) = study.dataset(0).expect("dataset");
        let (grid, mesh) = config.solver.discretize(&study.model).expect("discretization");
        let net = FitConfig::default().initial_network(&study.model).expect("network");
        Fixture {
            theta: study.model.theta_box.center(),
            model: study.model,
            grid,
            mesh,
            observations: ds.observations,
            mechanism: Mechanism::Network(net),
        }
    }
}

/// `dim x samples` batch (one column per sample) spread over `[0, 1]`.
pub fn feature_batch(dim: usize, samples: usize) -> Array2<f64> {
    Array2::from_shape_fn((dim, samples), |(i, j)| ((j * dim + i) as f64 + 0.5) / (samples * dim) as f64)
}
