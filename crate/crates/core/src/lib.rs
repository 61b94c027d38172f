//! Curvature-penalized MAP estimation of dose-response curves.
//!
//! The estimator penalizes the L²-total curvature of the mean responses after
//! mapping them through the inverse of a default dose-response model. With the
//! identity default this is LiMAP-curvature; with a sigmoid Emax default it is
//! SEMAP-curvature. A single historical trial can be borrowed through a
//! hierarchical model with a prognostic shift `r` and a predictive scale `a`.
//!
//! The numerical core ([`transform`], [`curvature`], [`posterior`], [`solver`],
//! [`inference`]) is generic over the scalar type through [`Scalar`]. The
//! simulation side ([`shapes`], [`trials`], [`harness`]) works in `f64`; the
//! aliases below name the `f64` instantiations used there.

pub mod cache;
pub mod curvature;
pub mod error;
pub mod harness;
pub mod inference;
pub mod posterior;
pub mod scalar;
pub mod seeding;
pub mod shapes;
pub mod solver;
pub mod transform;
pub mod trials;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DoseGrid = curvature::DoseGrid<f64>;
pub type DefaultModel = transform::DefaultModel<f64>;
pub type EmaxParams = transform::EmaxParams<f64>;
pub type TrialDataset = posterior::TrialDataset<f64>;
pub type PriorSet = posterior::PriorSet<f64>;
pub type ObjectiveSpec = posterior::ObjectiveSpec<f64>;
pub type LatentPoint = posterior::LatentPoint<f64>;
pub type MapFit = solver::MapFit<f64>;
pub type SolverOptions = solver::SolverOptions<f64>;
pub type MedSpec = inference::MedSpec<f64>;
