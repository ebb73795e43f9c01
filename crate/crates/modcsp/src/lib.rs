//! Modular counting constraint satisfaction: finite multi-sorted relational
//! structures, homomorphism counting modulo a prime, polymorphism clones,
//! p-modular primitive-positive definitions, rectangularity obstructions and
//! the reductions and classifiers built on them.

pub mod autos;
pub mod classify;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod homcount;
pub mod mpp;
pub mod obstruction;
pub mod polyclone;
pub mod reduce;
pub mod structures;

mod solver;

pub use error::{Error, Result};
