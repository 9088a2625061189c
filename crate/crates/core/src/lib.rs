//! Forward-backward estimation for continuously monitored quantum systems.
//!
//! A measurement record steers the conditional density matrix ρ(t) forward in
//! time; the same record, consumed in reverse, steers an effect matrix E(t)
//! backward from the identity. The pair (ρ(t), E(t)) answers questions about
//! the system at t using the full record, before and after, and is the basis
//! for everything here: smoothed observable estimates, weak values, and
//! inference about measurements or state collapses that happened in the past.

pub mod cli;
pub mod effect;
pub mod error;
pub mod filter;
pub mod hmm;
pub mod model;
pub mod paststate;
pub mod persist;
pub mod qops;

pub use error::{Error, Result};
