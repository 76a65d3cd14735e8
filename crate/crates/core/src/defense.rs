//! Client-side defenses: label randomized response and a clip-and-noise
//! local trainer with degree bounding.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedsim::{ClientState, ClientUpdate, LocalTrainer, TrainTarget};
use crate::gnn::{accuracy, apply_sgd_step, forward_prepared, per_node_gradients, ModelConfig, ModelParams, Prepared};
use crate::graph::Graph;
use crate::rng;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    pub label_dp_epsilon: Option<f64>,
    pub dp_clip_norm: Option<f64>,
    /// Noise multiplier `σ`; per-coordinate noise std is `σ · dp_clip_norm`.
    pub dp_noise_multiplier: Option<f64>,
    pub max_out_degree: Option<usize>,
}

/// Which defense family a config enables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefenseKind {
    None,
    LabelDp,
    DpGnn,
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<DefenseKind> {
        if let Some(eps) = self.label_dp_epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidArgument(format!("label_dp_epsilon must be > 0, got {eps}")));
            }
        }
        if let Some(c) = self.dp_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!("dp_clip_norm must be > 0, got {c}")));
            }
        }
        if let Some(s) = self.dp_noise_multiplier {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("dp_noise_multiplier must be >= 0, got {s}")));
            }
        }
        if self.max_out_degree == Some(0) {
            return Err(Error::InvalidArgument("max_out_degree must be >= 1".into()));
        }
        let dp_gnn = self.dp_clip_norm.is_some() || self.dp_noise_multiplier.is_some() || self.max_out_degree.is_some();
        match (self.label_dp_epsilon.is_some(), dp_gnn) {
            (true, true) => Err(Error::InvalidArgument(
                "label-DP and DP-GNN settings cannot be combined in one arm".into(),
            )),
            (true, false) => Ok(DefenseKind::LabelDp),
            (false, true) => {
                if self.dp_clip_norm.is_none() || self.dp_noise_multiplier.is_none() {
                    return Err(Error::InvalidArgument(
                        "DP-GNN needs both dp_clip_norm and dp_noise_multiplier".into(),
                    ));
                }
                Ok(DefenseKind::DpGnn)
            }
            (false, false) => Ok(DefenseKind::None),
        }
    }
}

/// Probability that k-ary randomized response keeps the true label.
pub fn label_keep_probability(classes: usize, epsilon: f64) -> f64 {
    // e^ε / (e^ε + L − 1), written to stay finite for large ε
    1.0 / (1.0 + (classes as f64 - 1.0) * (-epsilon).exp())
}

/// k-ary randomized response. Each label draws one uniform and one
/// replacement label whatever `epsilon` is, so with a fixed seed the set of
/// flipped labels only grows as `epsilon` shrinks.
pub fn label_dp_randomize(labels: &[usize], classes: usize, epsilon: f64, seed: u64) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("randomized response needs L >= 2, got {classes}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!("label {y} outside [0, {classes})")));
    }
    let keep = label_keep_probability(classes, epsilon);
    let mut r = rng::stream(seed, 0x1abe1);
    Ok(labels
        .iter()
        .map(|&y| {
            let u: f64 = r.gen();
            let other = r.gen_range(0..classes - 1);
            if u < keep {
                y
            } else if other >= y {
                other + 1
            } else {
                other
            }
        })
        .collect())
}

/// The client's graph with randomized-response labels.
pub fn apply_label_dp(g: &Graph, epsilon: f64, seed: u64) -> Result<Graph> {
    let noised = label_dp_randomize(g.labels(), g.num_classes(), epsilon, seed)?;
    g.with_labels(noised)
}

/// Drops edges until every node has degree `≤ max_degree`. Edges are visited
/// in seeded random order and kept while both endpoints have room.
pub fn bound_degree(g: &Graph, max_degree: usize, seed: u64) -> Result<Graph> {
    if g.degrees().iter().all(|&d| d <= max_degree) {
        return Ok(g.clone());
    }
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut rng::stream(seed, 0xde9));
    let mut deg = vec![0usize; g.num_nodes()];
    let kept: Vec<(usize, usize)> = edges
        .into_iter()
        .filter(|&(a, b)| {
            let ok = deg[a] < max_degree && deg[b] < max_degree;
            if ok {
                deg[a] += 1;
                deg[b] += 1;
            }
            ok
        })
        .collect();
    g.with_edges(kept)
}

/// Model-shaped iid `N(0, std²)` noise.
pub fn gaussian_noise(cfg: &ModelConfig, std: f64, seed: u64) -> ModelParams {
    let mut noise = ModelParams::zeros(cfg);
    let mut r = rng::stream(seed, 0x9a55);
    for v in noise.values_mut() {
        let z: f64 = r.sample(StandardNormal);
        *v = std * z;
    }
    noise
}

/// Local training with per-node clipping and Gaussian noise. Each epoch
/// bounds degrees (if `max_out_degree` is set), clips every training node's
/// own-loss gradient to `dp_clip_norm`, sums them, adds
/// `N(0, σ²·dp_clip_norm²)` per coordinate and steps with the sum divided by
/// the number of training nodes.
pub fn dp_gnn_local_train(
    init: &ModelParams,
    client: &ClientState,
    cfg: &ModelConfig,
    defense: &DefenseConfig,
    seed: u64,
) -> Result<ClientUpdate> {
    let (Some(clip), Some(sigma)) = (defense.dp_clip_norm, defense.dp_noise_multiplier) else {
        return Err(Error::InvalidArgument(
            "DP-GNN training needs dp_clip_norm and dp_noise_multiplier".into(),
        ));
    };
    if !(clip > 0.0) || !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid DP-GNN settings: clip {clip}, sigma {sigma}")));
    }
    if client.target != TrainTarget::Nodes {
        return Err(Error::InvalidArgument("DP-GNN training supports node classification only".into()));
    }
    if client.epochs == 0 {
        return Err(Error::InvalidArgument(format!("client {} has zero epochs", client.id)));
    }
    let nodes: Vec<usize> = (0..client.graph.num_nodes()).filter(|&k| client.graph.train_mask()[k]).collect();
    if nodes.is_empty() {
        return Err(Error::InvalidArgument(format!("client {} has no training samples", client.id)));
    }

    let mut params = init.clone();
    let (mut loss, mut acc) = (0.0, 0.0);
    for epoch in 0..client.epochs {
        let epoch_seed = rng::mix(seed, epoch as u64);
        let graph = match defense.max_out_degree {
            Some(d) => bound_degree(&client.graph, d, epoch_seed)?,
            None => client.graph.clone(),
        };
        let prep = Prepared::new(&graph, cfg.arch);
        let trace = forward_prepared(&params, cfg, &prep)?;
        acc = accuracy(&trace, graph.labels(), graph.train_mask());
        loss = nodes.iter().map(|&k| -trace.probs[[k, graph.labels()[k]]].max(f64::MIN_POSITIVE).ln()).sum::<f64>()
            / nodes.len() as f64;

        let mut sum = ModelParams::zeros(cfg);
        per_node_gradients(&params, cfg, &prep, &nodes, |_, g| {
            let scale = 1.0 / (g.global_norm() / clip).max(1.0);
            sum.add_scaled(scale, &g)
        })?;
        if sigma > 0.0 {
            sum.add_scaled(1.0, &gaussian_noise(cfg, sigma * clip, epoch_seed))?;
        }
        params = apply_sgd_step(&params, &sum.scaled(1.0 / nodes.len() as f64), client.lr)?;
    }
    ClientUpdate::new(client.id, init, params, client.epochs, loss, acc)
}

/// [`LocalTrainer`] running [`dp_gnn_local_train`] with a seed derived from
/// the round and client id.
#[derive(Debug, Clone)]
pub struct DpGnnTrainer {
    pub defense: DefenseConfig,
    pub seed: u64,
}

impl LocalTrainer for DpGnnTrainer {
    fn train(&self, init: &ModelParams, client: &ClientState, cfg: &ModelConfig, round: usize) -> Result<ClientUpdate> {
        let seed = rng::mix(rng::mix(self.seed, round as u64), client.id as u64);
        dp_gnn_local_train(init, client, cfg, &self.defense, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_probability_limits() {
        assert!((label_keep_probability(2, 1.0) - std::f64::consts::E / (std::f64::consts::E + 1.0)).abs() < 1e-15);
        assert!((label_keep_probability(5, 1e-12) - 0.2).abs() < 1e-9);
        assert!(label_keep_probability(5, 50.0) > 1.0 - 1e-15);
    }

    #[test]
    fn flips_are_nested_across_epsilon() {
        let labels: Vec<usize> = (0..2000).map(|i| i % 4).collect();
        let mut prev = vec![false; labels.len()];
        for eps in [8.0, 4.0, 2.0, 1.0, 0.5] {
            let out = label_dp_randomize(&labels, 4, eps, 11).unwrap();
            let flipped: Vec<bool> = out.iter().zip(&labels).map(|(a, b)| a != b).collect();
            assert!(prev.iter().zip(&flipped).all(|(&p, &f)| !p || f));
            prev = flipped;
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(label_dp_randomize(&[0, 0], 1, 1.0, 0).is_err());
        assert!(label_dp_randomize(&[0, 1], 2, 0.0, 0).is_err());
        assert!(label_dp_randomize(&[0, 3], 2, 1.0, 0).is_err());
    }

    #[test]
    fn validate_families() {
        let mut d = DefenseConfig::default();
        assert_eq!(d.validate().unwrap(), DefenseKind::None);
        d.label_dp_epsilon = Some(1.0);
        assert_eq!(d.validate().unwrap(), DefenseKind::LabelDp);
        d.dp_clip_norm = Some(1.0);
        assert!(d.validate().is_err());
        d.label_dp_epsilon = None;
        assert!(d.validate().is_err());
        d.dp_noise_multiplier = Some(0.5);
        assert_eq!(d.validate().unwrap(), DefenseKind::DpGnn);
    }
}
