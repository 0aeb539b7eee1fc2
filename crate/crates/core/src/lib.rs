//! Penalized minimization of the Dirichlet energy between two obstacles on a fixed
//! domain `D`, with the positivity set outside `D` held near a prescribed volume.
//!
//! The crate covers the whole pipeline: rasterizing `D` and `B_R` onto a lattice,
//! building obstacles, minimizing the discrete functional, extracting the free
//! boundary `∂{u > 0}`, and checking the qualitative properties a minimizer must have.

pub mod config;
pub mod domain;
pub mod energy;
pub mod error;
pub mod freeboundary;
pub mod grid;
pub mod io;
pub mod obstacles;
pub mod oracle;
pub mod solver;
pub mod verify;

pub use domain::{build_grid, rasterize, DomainMasks, DomainSpec, NodeClass, Shape};
pub use energy::{PenalizedEnergy, PenaltyParams};
pub use error::{Error, Result};
pub use grid::{Grid, ScalarField};
pub use obstacles::{make_obstacles, ObstacleKind, ObstaclePair};
pub use solver::{solve_penalized, solve_penalized_from, SolveParams, SolveResult, StepRule};
