//! Bayesian inference of binary-character evolution on phylogenies, with
//! per-character gain/loss rates decomposed into a speed of change and a
//! stationary probability, each regressed on character-level predictors.
//!
//! The numerical core ([`trees`], [`ctmc`], [`likelihood`], [`model`]) is
//! generic over the scalar type through [`Real`]; the aliases below fix it to
//! `f64`, which is what the sampler and the statistical layers
//! ([`sampler`], [`selection`], [`simval`], [`negbin`]) run on.
//! [`ingest`] turns wordlists into the tables defined in [`data`].

pub mod ctmc;
pub mod data;
pub mod error;
pub mod ingest;
pub mod likelihood;
pub mod model;
pub mod negbin;
pub mod real;
pub mod sampler;
pub mod selection;
pub mod simval;
pub mod trees;

pub use error::{Error, Result};
pub use real::Real;

pub type Tree = trees::PhyloTree<f64>;
pub type Trees = trees::TreeSample<f64>;
pub type Rates = ctmc::RateParams<f64>;
pub type Pruning = likelihood::PruningTree<f64>;
pub type Family = model::FamilyData<f64>;
pub type Coefficients = model::CoefficientSet<f64>;
pub type ModelPosterior<'a> = model::Posterior<'a, f64>;
