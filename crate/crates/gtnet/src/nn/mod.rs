//! Minimal f64 reverse-mode autodiff used by every model component.
//!
//! A [`Graph`] is a per-forward tape: leaves are inputs or parameters pulled
//! from a [`ParamStore`], ops execute eagerly and record enough to replay
//! their adjoint. Everything is single threaded and evaluation order is
//! fixed, so results are bitwise reproducible for a given seed and input.

pub mod adam;
pub mod conv;
pub mod graph;
pub mod init;
pub mod params;

pub use adam::Adam;
pub use graph::{Grads, Graph, Var};
pub use init::{count_elements, init_param_store, ParamDef, ParamKind};
pub use params::ParamStore;
