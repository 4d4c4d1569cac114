//! Winfree oscillatory neural networks.
//!
//! Phases live on the torus `[-pi, pi)^d` and evolve under discrete
//! Winfree dynamics with learned frequencies, couplings and interaction
//! functions. The crate also provides the continuous-time analysis tools
//! (Kuramoto and symmetry-breaking fields, interaction energy, Lyapunov
//! checks), a tape-based reverse-mode trainer, small reasoning tasks with
//! exact oracles and energy-based voting at inference time.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod coupling;
pub mod diag;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod network;
pub mod phase;
pub mod optim;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod voting;

pub use error::{Result, WonnError};
