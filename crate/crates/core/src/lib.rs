//! Simulation lab for the asymmetric multitype contact process.
//!
//! Layers, bottom up: [`graphical`] samples and transforms augmented Harris
//! systems, [`process`] runs the dynamics on them, [`paths`] decides
//! reachability and builds free / reverse-free infection paths, [`ancestor`]
//! builds ancestor processes, renewal points and steered sequences,
//! [`walk`] holds the abstract steered renewal walks, and [`estimators`] the
//! Monte Carlo harnesses.

pub mod ancestor;
pub mod graphical;
pub mod paths;
pub mod process;
pub mod stats;
pub mod walk;
pub mod estimators;

pub use graphical::{
    sample_harris, sample_symmetric, AugmentedHarrisSystem, Event, EventKey, EventKind, HarrisBuilder,
    HarrisError, LatticeWindow, Point,
};
