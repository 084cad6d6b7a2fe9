//! Hierarchical Bayes estimation of mixed-logit models, with
//! early-stopping transfer of a previously estimated model to a new context.

pub mod benchmark;
pub mod data;
pub mod engine;
pub mod error;
pub mod esbda;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod samplers;
pub mod simulators;
pub mod spec;
pub mod synth;

pub use data::{ChoiceSituation, Dataset, Individual, ModelParams};
pub use error::{Error, Result};
pub use spec::{CoefficientKind, CoefficientSpec, UtilitySpec};
