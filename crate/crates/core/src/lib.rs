//! Linear kinetic equations in bounded 2-D domains with Maxwell walls:
//! discretization, auxiliary elliptic problems, Korn and Poincaré constants,
//! and hypocoercivity diagnostics.

pub mod error;
pub mod geometry;
pub mod velocity;
pub mod collision;
pub mod boundary;
pub mod elliptic;
pub mod rng;
pub mod sparse;
pub mod transport;
pub mod korn;
pub mod hypocoercivity;

pub use error::{Error, Result};
