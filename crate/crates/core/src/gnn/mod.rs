//! GNN stacks with a fully connected head.
//!
//! Every model is `gnn_layers` message-passing layers (ReLU between them,
//! none after the last) followed by a bias-free linear head whose input is
//! the final node embedding. The per-sample sum of that input is the
//! quantity `I_k` the leakage attack reads.

mod model;
mod network;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{
    accuracy, apply_sgd_step, compute_link_loss_and_gradients, compute_loss_and_gradients,
    forward_pass, forward_prepared, link_loss_and_gradients_prepared, link_pair_forward,
    loss_and_gradients_prepared, per_node_gradients, ForwardTrace, LinkPair, Prepared,
};
pub use params::{ModelParams, NamedTensor, NamedTensors, TensorSpec};

/// Message-passing architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "gcn", alias = "GCN")]
    Gcn,
    #[serde(rename = "gat", alias = "GAT")]
    Gat,
    #[serde(rename = "sage", alias = "graphsage", alias = "GraphSAGE")]
    Sage,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Gcn, Arch::Gat, Arch::Sage];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Gat => "gat",
            Arch::Sage => "sage",
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Arch::Gcn),
            "gat" => Ok(Arch::Gat),
            "sage" | "graphsage" => Ok(Arch::Sage),
            other => Err(Error::InvalidArgument(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Shape of a model. The activation is fixed to ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub gnn_layers: usize,
    pub hidden_dim: usize,
    pub in_dim: usize,
    /// Class count for node classification, 2 for link prediction.
    pub out_dim: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gnn_layers == 0 {
            return Err(Error::InvalidArgument("gnn_layers must be at least 1".into()));
        }
        if self.out_dim < 2 {
            return Err(Error::InvalidArgument("out_dim must be at least 2".into()));
        }
        if self.hidden_dim == 0 || self.in_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim and in_dim must be positive".into()));
        }
        Ok(())
    }
}
