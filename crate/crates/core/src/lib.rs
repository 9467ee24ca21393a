//! Reflected backward SDEs with jumps in moving convex domains.
//!
//! The crate builds discrete-time solutions of multi-dimensional reflected
//! BSDEs driven by a Brownian motion and a finite-activity Poisson measure,
//! constrained to a time-dependent convex domain. Solutions come from a
//! penalization scheme (implicit resolvent per step), from its projected
//! limit, and from a composer that pieces together solutions on a
//! piecewise-constant discretization of the domain. A diagnostics layer
//! measures the structural guarantees of those solutions.

pub mod config;
pub mod diagnostics;
pub mod domain;
pub mod geometry;
pub mod noise;
pub mod policy;
pub mod problem;
pub mod runner;
pub mod solver;

pub use domain::{DiscretizedDomainPath, DomainPath, DomainProcess, InteriorProcess, Motion};
pub use geometry::{hausdorff, ConvexBody, GeometryError, Point, Shape};
pub use noise::{build_tree, sample_paths, NoiseHistory, NoiseModel, ScenarioSet};
pub use policy::{NumericPolicy, POLICY};
pub use problem::{BsdeProblem, Driver, Terminal};
pub use solver::{
    solve_penalized, solve_piecewise_constant, solve_reflected_discrete, Scheme, SolutionBundle,
};
