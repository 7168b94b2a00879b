//! Hierarchical intentional-unintentional soft actor-critic.
//!
//! One replay stream trains `K` composable Gaussian policies and a compound
//! policy built from them by a [`gauss::CompositionRule`]. Composition rules,
//! environments and algorithms are looked up by name in [`registry::Registry`]
//! tables.

pub mod config;
pub mod envs;
pub mod error;
pub mod gauss;
pub mod grad;
pub mod nets;
pub mod qgrid;
pub mod registry;
pub mod replay;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
