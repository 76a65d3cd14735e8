//! Server-side label-distribution inference from client updates.
//!
//! In an attack round the server clips the global model to a small global
//! norm before broadcasting it. That squeezes the per-sample head input sums
//! `I_k` toward a common value, so the head's weight update, summed over its
//! input dimension, becomes an almost exact linear function of each client's
//! label counts. Dummy data pushed through the clipped model supplies the
//! softmax outputs and `I` statistics for that linear map.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedsim::{ClientUpdate, RoundHooks};
use crate::gnn::{forward_pass, link_pair_forward, ForwardTrace, LinkPair, ModelConfig, ModelParams};
use crate::graph::Graph;
use crate::rng;

pub use crate::metrics::compute_err;

/// Smallest `|Ī|` accepted by inference.
pub const MIN_INPUT_MEAN: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Target global ℓ2 norm `C` of the broadcast model.
    pub clip_threshold: f64,
    pub dummy_count: usize,
    pub dummy_std: f64,
    /// 1-based rounds in which the attack runs.
    pub attack_rounds: BTreeSet<usize>,
    /// Put the pre-attack global model back after an attack round.
    pub restore_after_attack: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            clip_threshold: 0.01,
            dummy_count: 1000,
            dummy_std: 0.001,
            attack_rounds: BTreeSet::new(),
            restore_after_attack: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, rounds: usize) -> Result<()> {
        if !(self.clip_threshold > 0.0) {
            return Err(Error::InvalidArgument("clip_threshold must be positive".into()));
        }
        if self.dummy_count == 0 {
            return Err(Error::InvalidArgument("dummy_count must be at least 1".into()));
        }
        if let Some(&r) = self.attack_rounds.iter().find(|&&r| r == 0 || r > rounds) {
            return Err(Error::InvalidArgument(format!("attack round {r} outside [1, {rounds}]")));
        }
        Ok(())
    }
}

/// Scales every parameter by `1 / max(1, ‖W‖₂ / C)`, where the norm runs
/// over all entries of all tensors jointly.
pub fn clip_global_model(params: &ModelParams, clip_threshold: f64) -> ModelParams {
    let norm = params.global_norm();
    let factor = 1.0 / (norm / clip_threshold).max(1.0);
    if factor == 1.0 {
        params.clone()
    } else {
        params.scaled(factor)
    }
}

/// Edgeless graph of `n_dummy` nodes with iid `N(0, std²)` features, all
/// labelled 0 and all in the training mask.
pub fn make_dummy_graph(feature_dim: usize, n_dummy: usize, std: f64, classes: usize, seed: u64) -> Result<Graph> {
    if n_dummy == 0 {
        return Err(Error::InvalidArgument("dummy graph needs at least one node".into()));
    }
    let mut r = rng::stream(seed, 0xd0d0);
    let features = Array2::from_shape_simple_fn((n_dummy, feature_dim), || std * r.sample::<f64, _>(StandardNormal));
    Graph::new(features, [], vec![0; n_dummy], classes.max(2), vec![true; n_dummy])
}

/// `count` random node pairs over a dummy graph of `n_dummy` nodes.
pub fn make_dummy_pairs(n_dummy: usize, count: usize, seed: u64) -> Vec<LinkPair> {
    let mut r = rng::stream(seed, 0xd0d1);
    (0..count)
        .map(|_| LinkPair { u: r.gen_range(0..n_dummy), v: r.gen_range(0..n_dummy), label: 0 })
        .collect()
}

/// Dummy-data statistics feeding the count estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackStats {
    pub probs: Array2<f64>,
    pub input_sums: Array1<f64>,
    pub input_mean: f64,
    /// Entry `l` is `Σ_k probs[k, l] · I_k`.
    pub weighted_prob_sum: Array1<f64>,
}

impl AttackStats {
    pub fn from_trace(trace: &ForwardTrace) -> Self {
        let weighted = &trace.probs * &trace.input_sums.view().insert_axis(Axis(1));
        Self {
            probs: trace.probs.clone(),
            input_sums: trace.input_sums.clone(),
            input_mean: trace.input_mean,
            weighted_prob_sum: weighted.sum_axis(Axis(0)),
        }
    }

    pub fn sample_count(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }
}

/// Forward pass of the dummy graph through the clipped model.
pub fn extract_attack_stats(clipped: &ModelParams, cfg: &ModelConfig, dummy: &Graph) -> Result<AttackStats> {
    Ok(AttackStats::from_trace(&forward_pass(clipped, cfg, dummy)?))
}

/// Link-prediction counterpart of [`extract_attack_stats`].
pub fn extract_link_attack_stats(
    clipped: &ModelParams,
    cfg: &ModelConfig,
    dummy: &Graph,
    pairs: &[LinkPair],
) -> Result<AttackStats> {
    Ok(AttackStats::from_trace(&link_pair_forward(clipped, cfg, dummy, pairs)?))
}

/// Inferred per-class counts and their normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferredDistribution {
    /// Estimated counts, scaled to the dummy sample count; may be negative.
    pub raw_counts: Vec<f64>,
    pub distribution: Vec<f64>,
}

/// Estimates a client's label distribution from the head-weight delta.
///
/// With `ΔW_l = Σ_m delta_fc[m, l] / lr` (the summed gradient over the
/// local epochs) and `K` the dummy sample count,
/// `d_l = (Σ_k p_kl I_k − K ΔW_l / E) / Ī`.
/// Negative estimates are clamped to zero before normalising. Since both
/// terms scale linearly in `K`, the normalised result does not depend on the
/// client's true sample count.
pub fn infer_label_distribution(
    stats: &AttackStats,
    delta_fc: ArrayView2<f64>,
    epochs: usize,
    lr: f64,
) -> Result<InferredDistribution> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    if delta_fc.ncols() != stats.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "head delta has {} outputs, statistics have {}",
            delta_fc.ncols(),
            stats.num_classes()
        )));
    }
    let i_bar = stats.input_mean;
    if !(i_bar.abs() > MIN_INPUT_MEAN) {
        return Err(Error::DegenerateEmbedding(i_bar));
    }
    let k = stats.sample_count() as f64;
    let summed = delta_fc.sum_axis(Axis(0));
    let raw_counts: Vec<f64> = stats
        .weighted_prob_sum
        .iter()
        .zip(&summed)
        .map(|(&wps, &dw)| (wps - k * (dw / lr) / epochs as f64) / i_bar)
        .collect();
    let clamped: Vec<f64> = raw_counts.iter().map(|&d| d.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllClamped);
    }
    let distribution = clamped.iter().map(|d| d / total).collect();
    Ok(InferredDistribution { raw_counts, distribution })
}

/// Link-prediction variant: entry 1 of the distribution is the inferred
/// fraction of positive pairs.
pub fn infer_graph_density(
    stats: &AttackStats,
    delta_fc: ArrayView2<f64>,
    epochs: usize,
    lr: f64,
) -> Result<InferredDistribution> {
    if stats.num_classes() != 2 {
        return Err(Error::InvalidArgument("graph density inference needs a two-output head".into()));
    }
    infer_label_distribution(stats, delta_fc, epochs, lr)
}

/// Which samples the attacked federation trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackTask {
    Nodes,
    /// Link prediction; the dummy data is this many random pairs over the
    /// dummy nodes.
    Links { dummy_pairs: usize },
}

/// Outcome of inferring one client in one attack round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientInference {
    pub client: usize,
    pub result: std::result::Result<InferredDistribution, String>,
}

/// Everything the server recorded in one attack round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundInference {
    pub round: usize,
    /// The clipped model clients trained from.
    pub broadcast: ModelParams,
    pub stats: AttackStats,
    pub clients: Vec<ClientInference>,
}

/// Round hooks running the attack in the configured rounds and behaving
/// like plain FedAvg otherwise.
///
/// In an attack round: save `W_{r-1}`, broadcast its clipped copy, push
/// dummy data through the clipped copy, infer each client from its head
/// delta, and (when configured) replace the aggregate with the saved model.
pub struct AttackSchedule {
    config: AttackConfig,
    model: ModelConfig,
    task: AttackTask,
    lr: f64,
    seed: u64,
    saved: Option<ModelParams>,
    pending: Option<(ModelParams, AttackStats)>,
    results: Vec<RoundInference>,
}

impl AttackSchedule {
    /// `lr` is the clients' learning rate, which the server sets.
    pub fn new(config: AttackConfig, model: ModelConfig, task: AttackTask, lr: f64, seed: u64) -> Self {
        Self { config, model, task, lr, seed, saved: None, pending: None, results: Vec::new() }
    }

    pub fn config(&self) -> &AttackConfig {
        &self.config
    }

    /// The attack result list, one entry per attack round.
    pub fn results(&self) -> &[RoundInference] {
        &self.results
    }

    pub fn into_results(self) -> Vec<RoundInference> {
        self.results
    }

    fn dummy_stats(&self, round: usize, clipped: &ModelParams) -> Result<AttackStats> {
        let seed = rng::mix(self.seed, round as u64);
        let dummy = make_dummy_graph(
            self.model.in_dim,
            self.config.dummy_count,
            self.config.dummy_std,
            self.model.out_dim,
            seed,
        )?;
        match self.task {
            AttackTask::Nodes => extract_attack_stats(clipped, &self.model, &dummy),
            AttackTask::Links { dummy_pairs } => {
                let pairs = make_dummy_pairs(self.config.dummy_count, dummy_pairs, seed);
                extract_link_attack_stats(clipped, &self.model, &dummy, &pairs)
            }
        }
    }
}

impl RoundHooks for AttackSchedule {
    fn before_round(&mut self, round: usize, global: &ModelParams) -> Result<Option<ModelParams>> {
        if !self.config.attack_rounds.contains(&round) {
            return Ok(None);
        }
        let clipped = clip_global_model(global, self.config.clip_threshold);
        let stats = self.dummy_stats(round, &clipped)?;
        self.saved = Some(global.clone());
        self.pending = Some((clipped.clone(), stats));
        Ok(Some(clipped))
    }

    fn after_aggregate(
        &mut self,
        round: usize,
        _broadcast: &ModelParams,
        updates: &[ClientUpdate],
        _aggregated: &ModelParams,
    ) -> Result<Option<ModelParams>> {
        let Some((broadcast, stats)) = self.pending.take() else {
            return Ok(None);
        };
        let clients = updates
            .iter()
            .map(|u| ClientInference {
                client: u.client,
                result: infer_label_distribution(&stats, u.delta.fc_weight(), u.epochs, self.lr)
                    .map_err(|e| e.to_string()),
            })
            .collect();
        self.results.push(RoundInference { round, broadcast, stats, clients });
        let saved = self.saved.take();
        Ok(if self.config.restore_after_attack { saved } else { None })
    }
}

/// Writes the attack result list as CSV with columns
/// `round,client,class,inferred_prob,true_prob`. `truth[c]` is client `c`'s
/// true distribution. Clients whose inference failed are skipped.
pub fn write_inference_csv(results: &[RoundInference], truth: &[Vec<f64>], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "client", "class", "inferred_prob", "true_prob"])?;
    for round in results {
        for c in &round.clients {
            let Ok(inferred) = &c.result else { continue };
            let t = truth
                .get(c.client)
                .ok_or_else(|| Error::InvalidArgument(format!("no ground truth for client {}", c.client)))?;
            for (class, (p, q)) in inferred.distribution.iter().zip(t).enumerate() {
                w.write_record([
                    round.round.to_string(),
                    c.client.to_string(),
                    class.to_string(),
                    p.to_string(),
                    q.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
