//! Federated graph learning simulator with a server-side label-distribution
//! inference attack.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: graph storage, CSV ingestion, synthetic generation, client
//!   partitioning and adjacency normalisation.
//! * [`gnn`]: GCN / GAT / GraphSAGE stacks with a bias-free fully connected
//!   head, full backpropagation and SGD.
//! * [`fedsim`]: FedAvg orchestration with round hooks.
//! * [`attack`]: global-model clipping, dummy-data statistics and label-count
//!   inference from client updates.
//! * [`defense`]: randomized-response label privacy and a clip-and-noise
//!   local trainer.
//! * [`metrics`]: distribution comparison and embedding-variance reporting.

pub mod attack;
pub mod defense;
pub mod error;
pub mod fedsim;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
