//! Simulator for heterogeneous quantum computing networks and multi-agent
//! learners for quantum-autoencoder task offloading.

pub mod cli;
pub mod config;
pub mod env;
pub mod marl;
pub mod metrics;
pub mod network;
pub mod quantum;
pub mod seed;
pub mod stochastic;
pub mod task;
