//! Automatic grouping of redundant sensor and actuator channels.
//!
//! The pipeline learns functional connections between channels with a
//! bottleneck autoencoder, fuses them with spatial proximity into a weighted
//! relational graph, and partitions that graph with a constrained randomized
//! local search. A synthetic tendon-driven robot with known muscle groups is
//! included so the whole pipeline can be checked against ground truth.
//!
//! Modules, in pipeline order:
//!
//! * [`robotsim`] – synthetic robots, muscle lengths, inter-muscle distances
//! * [`datastore`] – datasets, normalization, splits, CSV ingestion
//! * [`autoenc`] – the autoencoder and functional-matrix extraction
//! * [`relgraph`] – relational graph assembly
//! * [`grouping`] – the constrained grouping algorithm and a Kruskal baseline
//! * [`evalharness`] – consistency metrics and multi-trial experiments
//! * [`pipeline`] – configuration and end-to-end orchestration

pub mod autoenc;
pub mod datastore;
pub mod error;
pub mod evalharness;
pub mod grouping;
pub mod pipeline;
pub mod relgraph;
pub mod robotsim;

pub use error::{Error, Result};
