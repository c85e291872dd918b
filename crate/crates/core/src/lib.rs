//! Decentralized link scheduling for K-user interference channels.
//!
//! Every transmitter decides to transmit at full power or stay silent from
//! its own noisy estimate of the global channel gain matrix. One small neural
//! network per transmitter is trained jointly, offline, on the expected sum
//! rate; at run time each network is evaluated locally with no coordination.
//!
//! - [`channel`]: gain matrices and per-transmitter noisy estimates.
//! - [`rate`]: sum rate, its relaxed gradient, and fixed baselines.
//! - [`neural`]: the multilayer perceptron, dropout, backprop and Adam.
//! - [`training`]: pretraining, joint and locally robust training, evaluation.
//! - [`checkpoint`]: on-disk policy format.
//! - [`experiment`]: scenarios, presets, σ sweeps and CSV output.

pub mod channel;
pub mod checkpoint;
pub mod error;
pub mod experiment;
pub mod neural;
pub mod rate;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
