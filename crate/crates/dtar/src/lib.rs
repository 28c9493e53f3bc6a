//! Desk-scale laboratory for traffic-aware inter-domain routing in LEO
//! satellite constellations.
//!
//! The pipeline has two stages. Offline, an NSGA-II search partitions the
//! constellation into domains that confine traffic and balance load. Online,
//! a graph-attention encoder summarizes real-time domain, link-load, and
//! fault state for an action-masked PPO routing policy, evaluated against
//! classical and learning baselines under normal, traffic-surge, and
//! link-failure scenarios.
//!
//! | Module | Description |
//! |--------|-------------|
//! | [`constellation`] | Walker topology, ground tracks, per-hop delay |
//! | [`traffic`] | Diurnal gravity-model demand, surge, domain loads |
//! | [`faults`] | Connectivity-preserving link fault process |
//! | [`partition`] | NSGA-II bi-objective domain partitioning |
//! | [`domain`] | Domain graph, link loads, CV, distances, action mask |
//! | [`neural`] | Dense f64 autodiff, GAT encoder, masked policies, Adam |
//! | [`agents`] | PPO routing agent, ablations, and the four baselines |
//! | [`harness`] | Episodes, scenarios, training, evaluation, CLI |

pub mod agents;
pub mod constellation;
pub mod domain;
pub mod error;
pub mod faults;
pub mod graph;
pub mod neural;
pub mod partition;
pub mod rng;
pub mod traffic;

pub use error::{Error, Result};
