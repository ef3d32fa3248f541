//! Deterministic discrete-event benchmark of Chord, Pastry and Kademlia used
//! as agent-directory substrates.
//!
//! The crate is layered bottom-up: [`sim`] (clock, queue, randomness),
//! [`id`] and [`store`] (identifier arithmetic, descriptor storage), the
//! [`overlay`] trait with its three implementations, [`net`] (message
//! delivery and accounting), [`workload`] (catalog, publication, queries,
//! churn) and finally [`config`], [`metrics`] and [`runner`].

pub mod chord;
pub mod config;
pub mod id;
pub mod kademlia;
pub mod metrics;
pub mod net;
pub mod overlay;
pub mod pastry;
pub mod runner;
pub mod sim;
pub mod store;
pub mod workload;
