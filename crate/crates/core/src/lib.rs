//! Behavior repertoire discovery for a three-motor vibrating tensegrity robot.
//!
//! The crate is split along the pipeline:
//!
//! * [`repertoire`]: the MAP-Elites archive over a discretized behavior space,
//!   the fitness metric, and the random/mutation variation operators.
//! * [`descriptor`]: conversion of tracked global poses into local-frame
//!   behaviors, plus repeatability statistics used to size bins.
//! * [`sim`]: a surrogate mass-spring-rod tensegrity simulator that maps
//!   motor frequencies to behaviors.
//! * [`bridge`]: the evaluator contract, the stationarity gate, trial logs and
//!   the newline-delimited wire protocol for external (hardware) evaluators.
//! * [`experiment`]: the shared-baseline / MAP-Elites / random-control
//!   experiment, its metrics table and plot artifacts.

pub mod bridge;
pub mod descriptor;
pub mod experiment;
pub mod repertoire;
pub mod sim;

pub use repertoire::{
    Archive, Behavior, BinGeometry, BinIndex, Elite, OfferOutcome, ParameterSet,
};
