//! Compositional hybrid dynamical systems: hybrid phase spaces, hybrid
//! dynamical systems, open systems over hybrid submersions, networks of open
//! systems and the maps between them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod hyds;
pub mod hyph;
pub mod network;
pub mod opensys;
pub mod relation;
pub mod report;
pub mod simulate;

pub use error::{Error, Result};
