//! Multilabel classification with ensembles of tree-structured graphical
//! models.
//!
//! A base model couples the microlabels of a multilabel through a spanning
//! tree over the label nodes and is trained by max-margin structured
//! learning in a factorized dual. Ensembles draw many random spanning
//! trees, train one base model per tree, and aggregate predictions either
//! by voting or in the space of max-marginals.

pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod inference;
pub mod data;
pub mod kernel;
pub mod learner;
pub mod model_io;

pub use error::{Error, Result};
