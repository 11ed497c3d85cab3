//! Discrete choice models for choosers linked by a social graph.
//!
//! The crate covers logit-family models with per-chooser intercepts tied
//! together by a Laplacian penalty, label propagation of choice fractions,
//! a two-layer GCN embedding feeding a choice head, evaluation metrics and
//! experiment drivers, and counterfactual aggregation of predicted choices.

pub mod cli;
pub mod counterfactual;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gcn;
pub mod graph;
pub mod models;
pub mod optimizer;
pub mod propagation;

pub use data::{ChoiceDataset, ChoiceObservation, ChooserSplit};
pub use error::{Error, Result};
pub use graph::SocialGraph;
pub use models::{Family, ModelParams, ModelSpec, Objective};
