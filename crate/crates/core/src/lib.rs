//! Temporal ETAS models with approximate Bayesian inference through a
//! linearized three-part likelihood.

pub mod catalog;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod linearization;
pub mod mcmc;
pub mod model;
pub mod priors;
pub mod simulator;
pub mod special;
pub mod stats;
pub mod sum;

pub use nalgebra;

pub use catalog::{parse_catalog, Event, EventCatalog, ObservationWindow, ParsedCatalog, TiePolicy};
pub use error::{Error, Result};
pub use model::{EtasParams, LegacyEtasParams};
pub use priors::{EtasPriors, InternalTheta, PriorSpec};
pub use inference::{fit, FitConfig, GaussianApprox, PosteriorResult};
pub use linearization::BinningConfig;
pub use mcmc::{mh_sample, McmcConfig};
pub use simulator::{simulate, SimConfig};
