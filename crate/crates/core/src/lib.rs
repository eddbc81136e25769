//! Ordered topological network modeling.
//!
//! This crate models computer networks as ordered combinatorial complexes and
//! predicts per-flow performance (delay, jitter, loss) with an order-aware
//! message-passing neural network, validated against a packet-level
//! discrete-event simulator and a queueing-theory baseline.
//!
//! Module map:
//! - [`topology`]: combinatorial complexes, neighborhood functions, augmented
//!   Hasse graphs, and ordered cells.
//! - [`wl`]: multiset and order-aware color-refinement tests plus a brute-force
//!   isomorphism oracle for small complexes.
//! - [`tensornn`]: a minimal dense-tensor reverse-mode autodiff core (linear,
//!   MLP, GRU, Adam, finite-difference gradient checking).
//! - [`gccn`]: generic complex-network layers, with and without ordered
//!   neighborhoods.
//! - [`netmodel`]: network scenarios, their complexification, and the
//!   flow/queue/link message-passing model with readout heads and training.
//! - [`netsim`]: packet-level simulator producing ground-truth labels.
//! - [`baselines`]: analytical M/M/1 tandem delay predictor.
//! - [`datasets`]: scenario generation, dataset persistence, and metrics.

pub mod baselines;
pub mod datasets;
pub mod gccn;
pub mod netmodel;
pub mod netsim;
pub mod tensornn;
pub mod topology;
pub mod wl;
