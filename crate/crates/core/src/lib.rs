//! Deterministic simulator of semi-decentralized federated recommendation
//! over ego graphs.
//!
//! Each user is a device holding only its own interactions. Devices are
//! glued into groups by shared "fake" items chosen through fuzzy
//! co-clustering on the server, run light graph convolution over the glued
//! group graph by exchanging per-layer messages with their peers, train with
//! BPR, and upload privacy-protected embeddings for federated averaging.

pub mod cli;
pub mod cluster;
pub mod config;
pub mod data;
pub mod device;
pub mod error;
pub mod metrics;
pub mod numeric;
pub mod propagate;
pub mod server;
pub mod sim;

pub use error::{Error, Result};
