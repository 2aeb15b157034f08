//! Maximum likelihood fitting of recursive structural equation models over
//! categorical variables, where the directed acyclic graph may contain any
//! number of latent nodes, and evaluation of causal effects from the fitted
//! joint distribution.
//!
//! The pipeline:
//! - [`model`] parses and validates the graph and regression design,
//! - [`links`] maps logits to category probabilities,
//! - [`table`] holds lexicographically ordered probability tables,
//! - [`em`] fits the model by EM with node-wise Fisher scoring,
//! - [`inference`] computes standard errors and checks local identifiability,
//! - [`causal`] evaluates interventions, total and natural direct effects,
//! - [`cli`] is the command-line front end.
//!
//! Tables, links and the causal engine are generic over the floating-point
//! type; the fitter works in `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

pub mod causal;
pub mod cli;
pub mod data;
pub mod em;
pub mod error;
pub mod inference;
pub mod links;
pub mod model;
pub mod random;
pub mod relabel;
pub mod table;

pub use crate::error::{Error, Result};

/// Floating-point scalar usable in tables, links and causal computations.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {}

pub type Table = table::LexTable<f64>;
pub type Table32 = table::LexTable<f32>;
pub type ParamVector = Vec<f64>;

pub use causal::{EffectQuery, Intervention};
pub use data::Dataset;
pub use em::{fit, FitOptions, FitResult};
pub use links::Link;
pub use model::{parse_model, ModelSpec, NodeSpec, ParamLayout};
