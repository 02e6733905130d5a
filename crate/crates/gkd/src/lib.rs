//! Simulation of first-order interacting-agent dynamics constrained to
//! Riemannian manifolds, and nonparametric recovery of the pairwise
//! interaction kernel from trajectory data by geometric least squares.
//!
//! The crate is organized around the pipeline
//!
//! ```text
//! geometry -> kernels -> dynamics -> integrate -> (dataset)
//!                                       |
//!                      basis -> learn <-+-> metrics
//! ```
//!
//! Supported model spaces are the Euclidean plane, the 2-sphere of
//! arbitrary radius, and the Poincaré disk. Agents evolve by
//!
//! ```text
//! dx_i/dt = (1/N) sum_{i'} phi(d(x_i, x_{i'})) w(x_i, x_{i'})
//! ```
//!
//! where `w(x, y)` is the geodesic distance times the unit tangent at `x`
//! toward `y`. The kernel `phi` is estimated on a clamped B-spline space by
//! solving the normal equations assembled with Riemannian inner products.

pub mod basis;
pub mod config;
pub mod dataset;
pub mod dynamics;
pub mod geometry;
pub mod integrate;
pub mod kernels;
pub mod learn;
pub mod metrics;

mod error;

pub use error::{Error, Result};
