//! Random-field Ising models on bounded-degree graphs.
//!
//! The crate covers the whole pipeline at desk scale: exact enumeration
//! oracles for small models, single-site Glauber dynamics with monotone and
//! grand couplings, the edge-field localization process, percolation-driven
//! spectral gap and MLSI certificates, stochastic-localization field boosting
//! with spatial-mixing diagnostics, and the incremental warm-start sampler.

pub mod error;
pub mod glauber;
pub mod graph;
pub mod localization;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod percolation;
pub mod rng;
pub mod sampler;
pub mod sl;

pub use error::{Error, Result};
pub use graph::Graph;
pub use model::{Convention, FieldDistribution, IsingModel, QuenchedField, SpinConfiguration};
