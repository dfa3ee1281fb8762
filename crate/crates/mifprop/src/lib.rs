//! Differentiable simulator for memristive integrate-and-fire (MIF) spiking
//! neurons, embedded in a trainable feed-forward network whose weights are
//! learned by backpropagation through time over the discrete circuit
//! equations.
//!
//! The MIF neuron is a two-memristor, one-capacitor circuit whose membrane
//! potential naturally produces rest, integration, threshold and reset
//! phases. Because every update is a smooth function of the state, the whole
//! network is differentiable end to end and needs no surrogate gradients.
//!
//! Module map:
//! - [`mif`]: the neuron and alpha-synapse dynamics, plus a finer-grained
//!   reference integrator used as a convergence oracle.
//! - [`network`]: dense ReLU layers feeding a population of MIF output
//!   neurons, with the membrane-potential loss and prediction rule.
//! - [`bptt`]: tape-based reverse-mode differentiation through the unrolled
//!   dynamics, with a finite-difference oracle.
//! - [`optim`]: Adam and uniform fan-in weight initialization.
//! - [`data`]: IDX-format dataset ingestion, batching and shuffling.
//! - [`schedule`]: sparse input-injection timing.
//! - [`seeding`]: portable sub-stream seed derivation.

pub mod bptt;
pub mod data;
pub mod mif;
pub mod network;
pub mod optim;
pub mod schedule;
pub mod seeding;

pub use mif::{MifParams, MifState};
pub use network::Network;
pub use schedule::SpikeSchedule;
