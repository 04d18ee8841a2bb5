//! Field-weighted factorization machines with a diagonal plus low-rank
//! interaction matrix, built for item ranking under tight latency budgets.
//!
//! A plain FM scores in time linear in the number of fields, and when a
//! batch of items is ranked for one context, the context part is computed
//! once. Field-weighted FMs add a symmetric field interaction matrix that
//! improves accuracy but forces a quadratic pass over all field pairs.
//! Representing that matrix as `U^T diag(e) U + diag(d)` with a derived
//! diagonal restores the cheap path: per-item cost becomes proportional to
//! the number of item fields times the rank, independent of how many context
//! fields the model has.
//!
//! The crate covers the full workflow: dataset ingestion and encoding
//! ([`data`], [`schema`]), the four interaction variants and their fast
//! scoring paths ([`model`]), cached-context auction scoring with an
//! operation counter ([`engine`]), training and evaluation ([`train`]),
//! magnitude pruning and post-hoc decomposition analysis ([`decompose`]),
//! and a synthetic latency harness ([`bench`]).

pub mod bench;
pub mod data;
pub mod decompose;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod model;
pub mod schema;
pub mod serialize;
pub mod train;

pub use error::{Error, Result};
