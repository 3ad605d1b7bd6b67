//! Semiparametric PDE estimation: a parametric operator plus a neural-network
//! mechanism fitted to scattered noisy observations, with confidence intervals
//! for the physical parameter.

// `!(x > 0.0)` deliberately rejects NaN
// index loops over several parallel arrays read closer to the formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod baselines;
pub mod data;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod grid;
pub mod inference;
pub mod model;
pub mod nn;
pub mod solver;

pub use error::{Result, SemiPdeError};
pub use grid::{interpolate, interpolate_adjoint, SpaceTimePoint, SpatialGrid, StateField, TimeMesh};
pub use model::{BoundaryCondition, FeatureTag, Mechanism, PdeModel, ThetaBox};
pub use nn::{NetArchitecture, NetworkParams};
