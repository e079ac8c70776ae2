//! Simulation and analytics toolkit for app adoption ecosystems on social
//! graphs.
//!
//! The crate is organised around a small data model ([`data`]) consumed by
//! the analysis modules:
//!
//! * [`simulator`] generates graphs, user attributes and app activity logs
//!   with planted social, demographic and retention regimes;
//! * [`sociality`] and [`neighborhoods`] measure how adoption clusters in
//!   the friendship graph;
//! * [`retention`], [`timeseries`] and [`sirs`] model activity over time;
//! * [`features`], [`forest`] and [`tasks`] turn everything into the binary
//!   and pairwise app-success prediction tasks;
//! * [`cli`] wires the pipelines together behind a single binary.

pub mod cli;
pub mod data;
pub mod error;
pub mod features;
pub mod forest;
pub mod neighborhoods;
pub mod optim;
pub mod retention;
pub mod rng;
pub mod simulator;
pub mod sirs;
pub mod sociality;
pub mod stats;
pub mod tasks;
pub mod timeseries;

pub use data::{ActivityLog, AppId, AttributeTable, Day, SocialGraph, UserAttributes, UserId};
pub use error::{Error, Result};
