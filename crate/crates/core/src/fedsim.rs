//! FedAvg orchestration: local training, weighted aggregation, round loop.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gnn::{
    accuracy, apply_sgd_step, forward_prepared, link_loss_and_gradients_prepared, loss_and_gradients_prepared,
    LinkPair, ModelConfig, ModelParams, Prepared,
};
use crate::graph::Graph;

const WEIGHT_TOL: f64 = 1e-9;

/// What a client fits locally.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainTarget {
    /// Node classification on the graph's training mask.
    Nodes,
    /// Link prediction on the given labelled pairs.
    Links(Vec<LinkPair>),
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub graph: Graph,
    /// Aggregation weight `p_i`.
    pub weight: f64,
    pub epochs: usize,
    pub lr: f64,
    pub target: TrainTarget,
}

impl ClientState {
    /// Number of training samples (nodes or pairs).
    pub fn sample_count(&self) -> usize {
        match &self.target {
            TrainTarget::Nodes => self.graph.num_train(),
            TrainTarget::Links(pairs) => pairs.len(),
        }
    }
}

/// How aggregation weights are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Uniform,
    /// Proportional to each client's node count.
    Proportional,
}

/// Aggregation weights for `graphs` under `mode`; always sums to 1.
pub fn client_weights(graphs: &[&Graph], mode: WeightMode) -> Vec<f64> {
    match mode {
        WeightMode::Uniform => vec![1.0 / graphs.len() as f64; graphs.len()],
        WeightMode::Proportional => {
            let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
            graphs.iter().map(|g| g.num_nodes() as f64 / total as f64).collect()
        }
    }
}

/// One client's upload for a round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientUpdate {
    pub client: usize,
    pub trained_params: ModelParams,
    /// `initial − trained`.
    pub delta: ModelParams,
    pub epochs: usize,
    /// Loss and accuracy on the client's training samples at the last epoch,
    /// before its step.
    pub train_loss: f64,
    pub train_accuracy: f64,
}

impl ClientUpdate {
    pub fn new(client: usize, init: &ModelParams, trained: ModelParams, epochs: usize, loss: f64, acc: f64) -> Result<Self> {
        let delta = init.sub(&trained)?;
        Ok(Self { client, trained_params: trained, delta, epochs, train_loss: loss, train_accuracy: acc })
    }
}

/// Local update rule. Implementations must be deterministic in their inputs.
pub trait LocalTrainer: Sync {
    fn train(&self, init: &ModelParams, client: &ClientState, cfg: &ModelConfig, round: usize) -> Result<ClientUpdate>;
}

/// Plain full-batch SGD, see [`client_local_train`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PlainSgd;

impl LocalTrainer for PlainSgd {
    fn train(&self, init: &ModelParams, client: &ClientState, cfg: &ModelConfig, _round: usize) -> Result<ClientUpdate> {
        client_local_train(init, client, cfg)
    }
}

/// `E` full-batch SGD steps on the client's training samples.
pub fn client_local_train(init: &ModelParams, client: &ClientState, cfg: &ModelConfig) -> Result<ClientUpdate> {
    if client.epochs == 0 {
        return Err(Error::InvalidArgument(format!("client {} has zero epochs", client.id)));
    }
    if client.sample_count() == 0 {
        return Err(Error::InvalidArgument(format!("client {} has no training samples", client.id)));
    }
    let prep = Prepared::new(&client.graph, cfg.arch);
    let mut params = init.clone();
    let (mut loss, mut acc) = (0.0, 0.0);
    for _ in 0..client.epochs {
        let grads;
        match &client.target {
            TrainTarget::Nodes => {
                let mask = client.graph.train_mask();
                (loss, grads) = loss_and_gradients_prepared(&params, cfg, &prep, mask)?;
                let trace = forward_prepared(&params, cfg, &prep)?;
                acc = accuracy(&trace, client.graph.labels(), mask);
            }
            TrainTarget::Links(pairs) => {
                (loss, grads) = link_loss_and_gradients_prepared(&params, cfg, &prep, pairs)?;
            }
        }
        params = apply_sgd_step(&params, &grads, client.lr)?;
    }
    ClientUpdate::new(client.id, init, params, client.epochs, loss, acc)
}

/// `Σ p_i · W_i` over the uploaded models.
pub fn aggregate_models(updates: &[ClientUpdate], weights: &[f64]) -> Result<ModelParams> {
    let models: Vec<&ModelParams> = updates.iter().map(|u| &u.trained_params).collect();
    weighted_sum(&models, weights)
}

pub fn weighted_sum(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = models.first().ok_or(Error::NoUpdates)?;
    if models.len() != weights.len() {
        return Err(Error::InvalidArgument(format!("{} models but {} weights", models.len(), weights.len())));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::WeightSum(total));
    }
    let mut out = first.scaled(0.0);
    for (m, &w) in models.iter().zip(weights) {
        out.add_scaled(w, m)?;
    }
    Ok(out)
}

/// Server-side extension points around each round.
pub trait RoundHooks {
    /// Before broadcast; returning a model replaces the one sent to clients.
    fn before_round(&mut self, _round: usize, _global: &ModelParams) -> Result<Option<ModelParams>> {
        Ok(None)
    }

    /// After aggregation; returning a model replaces the new global model.
    fn after_aggregate(
        &mut self,
        _round: usize,
        _broadcast: &ModelParams,
        _updates: &[ClientUpdate],
        _aggregated: &ModelParams,
    ) -> Result<Option<ModelParams>> {
        Ok(None)
    }
}

/// Hooks that change nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoHooks;

impl RoundHooks for NoHooks {}

/// One round of the federation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub global_before: ModelParams,
    pub global_after: ModelParams,
    /// Empty unless the run keeps updates.
    pub updates: Vec<ClientUpdate>,
    pub client_loss: Vec<f64>,
    pub client_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Keep every client upload in the round log.
    pub keep_updates: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { keep_updates: true }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub final_params: ModelParams,
    pub log: Vec<RoundLog>,
}

/// FedAvg with plain local SGD; the initial model is `ModelParams::init(cfg, seed)`.
pub fn run_training(
    clients: &[ClientState],
    cfg: &ModelConfig,
    rounds: usize,
    seed: u64,
    hooks: &mut dyn RoundHooks,
) -> Result<TrainingRun> {
    run_training_with(clients, cfg, rounds, ModelParams::init(cfg, seed), &PlainSgd, hooks, RunOptions::default())
}

/// The general round loop: broadcast, local training (in parallel, results
/// in client order), aggregation, hooks.
pub fn run_training_with(
    clients: &[ClientState],
    cfg: &ModelConfig,
    rounds: usize,
    init: ModelParams,
    trainer: &dyn LocalTrainer,
    hooks: &mut dyn RoundHooks,
    options: RunOptions,
) -> Result<TrainingRun> {
    cfg.validate()?;
    if clients.is_empty() && rounds > 0 {
        return Err(Error::NoUpdates);
    }
    let weights: Vec<f64> = clients.iter().map(|c| c.weight).collect();
    if rounds > 0 {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::WeightSum(total));
        }
    }
    let mut global = init;
    let mut log = Vec::with_capacity(rounds);
    for round in 1..=rounds {
        let hook_err = |e: Error| Error::Hook { round, source: Box::new(e) };
        let broadcast = hooks.before_round(round, &global).map_err(hook_err)?.unwrap_or_else(|| global.clone());
        let updates: Vec<ClientUpdate> = clients
            .par_iter()
            .map(|c| trainer.train(&broadcast, c, cfg, round))
            .collect::<Result<_>>()?;
        let aggregated = aggregate_models(&updates, &weights)?;
        let next = hooks
            .after_aggregate(round, &broadcast, &updates, &aggregated)
            .map_err(hook_err)?
            .unwrap_or(aggregated);
        log.push(RoundLog {
            round,
            global_before: global,
            global_after: next.clone(),
            client_loss: updates.iter().map(|u| u.train_loss).collect(),
            client_accuracy: updates.iter().map(|u| u.train_accuracy).collect(),
            updates: if options.keep_updates { updates } else { Vec::new() },
        });
        global = next;
    }
    Ok(TrainingRun { final_params: global, log })
}

/// Writes one JSON object per round.
pub fn write_round_logs(log: &[RoundLog], mut out: impl Write) -> Result<()> {
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Accuracy of `params` on the nodes of `g` selected by `mask`.
pub fn evaluate_accuracy(params: &ModelParams, cfg: &ModelConfig, g: &Graph, mask: &[bool]) -> Result<f64> {
    let trace = forward_prepared(params, cfg, &Prepared::new(g, cfg.arch))?;
    Ok(accuracy(&trace, g.labels(), mask))
}
