//! Long-range Ising lattices, restricted Boltzmann machines, and the
//! coarse-graining flows built from them.
//!
//! The crate is `no_std` with `alloc`; everything here is pure computation.
//! File formats, configuration and the command line live in the `lrflow`
//! companion crate.
//!
//! Module map:
//!
//! * [`geometry`]: periodic lattice, the `r^-alpha` coupling kernel, energies
//! * [`mcmc`]: Metropolis sampling with cached local fields, exact enumeration
//! * [`observables`]: magnetization, two-point correlators, power-law fits, `T_c`
//! * [`rbm`]: ±1 restricted Boltzmann machine, CD-k training, exact oracles
//! * [`flow`]: RBM flows and their per-step measurements
//! * [`rg`]: Kadanoff 2×2 block-spin coarse-graining
//! * [`stack`]: greedy layer-wise stacked RBMs and `<vh>` correlation maps
//! * [`thermometer`]: supervised temperature classifier

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod flow;
pub mod geometry;
pub mod linalg;
pub mod mcmc;
pub mod observables;
pub mod rbm;
pub mod rg;
pub mod rng;
pub mod stack;
pub mod thermometer;

pub use error::{Error, Result};
pub use geometry::{CouplingKernel, LatticeGeometry, Spin, SpinGrid};
pub use mcmc::{McmcConfig, SampleSet};
pub use observables::{CorrelatorProfile, PowerLawFit};
pub use rbm::{NodeState, RbmParams, TrainConfig};
pub use thermometer::ThermometerModel;
