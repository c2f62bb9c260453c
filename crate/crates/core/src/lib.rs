//! Exact volumes, moments and centroids of slices of the standard simplex.
//!
//! The slice `P_t = Δ ∩ {x : V_sᵀx = t}` is handled through the Laplace transform of
//! its volume, which is a finite sum of exponential-over-polynomial terms. Inverting
//! that transform one coordinate at a time gives a fixed computation tree that can be
//! evaluated directly ([`ilt`]) or compiled into a layered network of
//! threshold/ReLU/rectified-polynomial units ([`network`]).

pub mod error;
pub mod estimator;
pub mod exp_poly;
pub mod ilt;
pub mod instances;
pub mod linalg;
pub mod measurement;
pub mod network;
pub mod numeric;
pub mod oracle;
pub mod rng;

pub use error::{Error, Result};

pub use linalg::Matrix;
pub use measurement::{BasisClass, MeasurementSystem, SimplexVertexSet};

pub use numeric::{Dd, Wide};
pub use estimator::{centroid_estimate, estimate_from_y, Backend, EstimationResult, HealthFlags};
pub use network::{compile, NetworkSpec};
