//! Runs every (arm, seed) pair of an experiment and collects metric rows.

use fgl_core::attack::{AttackSchedule, AttackTask, RoundInference};
use fgl_core::defense::{apply_label_dp, DefenseKind, DpGnnTrainer};
use fgl_core::fedsim::{
    client_weights, evaluate_accuracy, run_training_with, ClientState, LocalTrainer, NoHooks, PlainSgd, RoundHooks,
    RunOptions, TrainTarget,
};
use fgl_core::gnn::{forward_pass, LinkPair, ModelConfig, ModelParams};
use fgl_core::graph::{generate_synthetic, load_graph, partition_graph, Graph, SyntheticSpec};
use fgl_core::metrics::{compute_err, cosine_similarity, js_divergence, to_distribution, variance};
use fgl_core::rng;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::config::{default_label_probs, Arm, DatasetConfig, ExperimentConfig, Task};
use crate::error::{HarnessError, Result};

/// Client column value for rows that describe the whole federation.
pub const ALL_CLIENTS: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub arm: String,
    pub seed: u64,
    pub round: usize,
    pub client: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    /// Arm names in run order.
    pub arms: Vec<String>,
    pub rows: Vec<MetricRow>,
}

impl ResultsTable {
    /// Values of `metric` in `arm`, in row order.
    pub fn values(&self, arm: &str, metric: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.arm == arm && r.metric == metric).map(|r| r.value).collect()
    }

    pub fn mean(&self, arm: &str, metric: &str) -> Option<f64> {
        let v = self.values(arm, metric);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Sub-seeds derived from the run seed, one per stochastic component.
mod stream {
    pub const DATA: u64 = 0xda7a;
    pub const PARTITION: u64 = 0x9a27;
    pub const INIT: u64 = 0x1417;
    pub const ATTACK: u64 = 0xa77;
    pub const DP: u64 = 0xd9;
    pub const LABEL_DP: u64 = 0x1abe;
    pub const LINKS: u64 = 0x11c;
}

/// Runs every arm of `config` for every seed. Pairs run in parallel; the
/// table is ordered by arm, then seed, whatever the thread schedule.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    run_arms(&config.arms()?)
}

pub fn run_arms(arms: &[Arm]) -> Result<ResultsTable> {
    let jobs: Vec<(&Arm, u64)> = arms.iter().flat_map(|a| a.config.seeds.iter().map(move |&s| (a, s))).collect();
    let parts: Vec<Vec<MetricRow>> = jobs
        .par_iter()
        .map(|&(arm, seed)| {
            run_single(&arm.config, seed)
                .map(|rows| {
                    rows.into_iter()
                        .map(|(round, client, metric, value)| MetricRow {
                            arm: arm.name.clone(),
                            seed,
                            round,
                            client,
                            metric: metric.to_string(),
                            value,
                        })
                        .collect()
                })
                .map_err(|e| match e {
                    HarnessError::Core(source) => HarnessError::Run { arm: arm.name.clone(), seed, source },
                    other => other,
                })
        })
        .collect::<Result<_>>()?;
    Ok(ResultsTable { arms: arms.iter().map(|a| a.name.clone()).collect(), rows: parts.concat() })
}

type Row = (usize, String, &'static str, f64);

/// Builds the graph a seed runs on.
pub fn build_graph(config: &ExperimentConfig, seed: u64) -> Result<Graph> {
    match &config.dataset {
        DatasetConfig::Synthetic { nodes, classes, feature_dim, label_probs, homophily, avg_degree, seed: fixed } => {
            Ok(generate_synthetic(&SyntheticSpec {
                nodes: *nodes,
                classes: *classes,
                feature_dim: *feature_dim,
                label_probs: label_probs.clone().unwrap_or_else(|| default_label_probs(*classes)),
                homophily: *homophily,
                avg_degree: *avg_degree,
                seed: fixed.unwrap_or_else(|| rng::mix(seed, stream::DATA)),
            })?)
        }
        DatasetConfig::Import { path } => Ok(load_graph(path)?),
    }
}

/// Training pairs for one client: a seeded sample of its edges plus random
/// non-edges in the configured proportion. Returns the pairs and the true
/// positive fraction.
pub fn link_pairs(g: &Graph, total: usize, positive_fraction: f64, seed: u64) -> Result<(Vec<LinkPair>, f64)> {
    let mut r = rng::stream(seed, stream::LINKS);
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut r);
    let pos = edges.len().min((total as f64 * positive_fraction).round() as usize);
    let neg = ((pos as f64) * (1.0 - positive_fraction) / positive_fraction).round() as usize;
    let n = g.num_nodes();
    let possible_neg = n * n.saturating_sub(1) / 2 - g.edges().len();
    if pos == 0 || neg > possible_neg {
        return Err(HarnessError::Core(fgl_core::Error::InvalidArgument(format!(
            "client graph with {n} nodes and {} edges cannot supply {pos} positive / {neg} negative pairs",
            g.edges().len()
        ))));
    }
    let mut pairs: Vec<LinkPair> = edges[..pos].iter().map(|&(u, v)| LinkPair { u, v, label: 1 }).collect();
    while pairs.len() < pos + neg {
        let (u, v) = (r.gen_range(0..n), r.gen_range(0..n));
        if u != v && !g.has_edge(u, v) {
            pairs.push(LinkPair { u, v, label: 0 });
        }
    }
    Ok((pairs, pos as f64 / (pos + neg) as f64))
}

/// Sums `I_k` over the training nodes of every client under `params`.
fn pooled_input_sums(params: &ModelParams, cfg: &ModelConfig, clients: &[ClientState]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for c in clients {
        let trace = forward_pass(params, cfg, &c.graph)?;
        out.extend(trace.input_sums.iter().zip(c.graph.train_mask()).filter(|(_, &m)| m).map(|(&v, _)| v));
    }
    Ok(out)
}

fn distribution(counts: &[usize]) -> Result<Vec<f64>> {
    Ok(to_distribution(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>())?)
}

/// One seed of one arm: returns `(round, client, metric, value)` rows.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<Vec<Row>> {
    let graph = build_graph(config, seed)?;
    let fed = &config.federation;
    let part = partition_graph(&graph, fed.clients, rng::mix(seed, stream::PARTITION))?;
    let links = fed.task == Task::Links;
    let cfg = ModelConfig {
        arch: config.model.arch,
        gnn_layers: config.model.gnn_layers,
        hidden_dim: config.model.hidden_dim,
        in_dim: graph.feature_dim(),
        out_dim: if links { 2 } else { graph.num_classes() },
    };
    cfg.validate()?;
    let defense = config.defense.validate()?;

    let graphs: Vec<&Graph> = part.client_graphs.iter().collect();
    let weights = client_weights(&graphs, fed.weights);
    let mut clients = Vec::with_capacity(part.num_clients());
    let mut truth = Vec::with_capacity(part.num_clients());
    let mut noised_truth = Vec::new();
    for (id, g) in part.client_graphs.iter().enumerate() {
        let (graph, target) = if links {
            let (pairs, density) = link_pairs(g, fed.link_pairs, fed.positive_fraction, rng::mix(seed, id as u64))?;
            truth.push(vec![1.0 - density, density]);
            (g.clone(), TrainTarget::Links(pairs))
        } else {
            truth.push(distribution(&part.client_label_counts[id])?);
            let graph = match (defense, config.defense.label_dp_epsilon) {
                (DefenseKind::LabelDp, Some(eps)) => {
                    let noised = apply_label_dp(g, eps, rng::mix(rng::mix(seed, stream::LABEL_DP), id as u64))?;
                    noised_truth.push(distribution(&noised.train_label_counts())?);
                    noised
                }
                _ => g.clone(),
            };
            (graph, TrainTarget::Nodes)
        };
        clients.push(ClientState { id, graph, weight: weights[id], epochs: fed.epochs, lr: fed.lr, target });
    }

    let init = ModelParams::init(&cfg, rng::mix(seed, stream::INIT));
    let mut rows: Vec<Row> = Vec::new();
    if !links {
        let trace = forward_pass(&init, &cfg, &graph)?;
        rows.push((0, ALL_CLIENTS.into(), "i_variance_init", variance(&trace.input_sums.to_vec())));
    }

    let dp_trainer;
    let trainer: &dyn LocalTrainer = if defense == DefenseKind::DpGnn {
        dp_trainer = DpGnnTrainer { defense: config.defense.clone(), seed: rng::mix(seed, stream::DP) };
        &dp_trainer
    } else {
        &PlainSgd
    };
    let task = if links { AttackTask::Links { dummy_pairs: config.attack.dummy_pairs } } else { AttackTask::Nodes };
    let mut schedule = config.attack.enabled.then(|| {
        AttackSchedule::new(
            config.attack.to_core(fed.rounds),
            cfg,
            task,
            fed.lr,
            rng::mix(seed, stream::ATTACK),
        )
    });
    let hooks: &mut dyn RoundHooks = match schedule.as_mut() {
        Some(s) => s,
        None => &mut NoHooks,
    };
    let run = run_training_with(
        &clients,
        &cfg,
        fed.rounds,
        init,
        trainer,
        hooks,
        RunOptions { keep_updates: false },
    )?;

    if let Some(s) = schedule {
        for res in s.into_results() {
            let unclipped = &run.log[res.round - 1].global_before;
            attack_rows(&mut rows, &res, unclipped, &cfg, &clients, &truth, &noised_truth, links)?;
        }
    }
    if !links {
        let acc = evaluate_accuracy(&run.final_params, &cfg, &graph, &graph.test_mask())?;
        rows.push((fed.rounds, ALL_CLIENTS.into(), "test_accuracy", acc));
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn attack_rows(
    rows: &mut Vec<Row>,
    res: &RoundInference,
    unclipped: &ModelParams,
    cfg: &ModelConfig,
    clients: &[ClientState],
    truth: &[Vec<f64>],
    noised_truth: &[Vec<f64>],
    links: bool,
) -> Result<()> {
    let r = res.round;
    if !links {
        let clipped = pooled_input_sums(&res.broadcast, cfg, clients)?;
        rows.push((r, ALL_CLIENTS.into(), "i_variance", variance(&clipped)));
        rows.push((r, ALL_CLIENTS.into(), "i_err", compute_err(&clipped)));
        let raw = pooled_input_sums(unclipped, cfg, clients)?;
        rows.push((r, ALL_CLIENTS.into(), "i_variance_unclipped", variance(&raw)));
    }
    rows.push((r, ALL_CLIENTS.into(), "dummy_i_mean", res.stats.input_mean));
    for ci in &res.clients {
        let client = ci.client.to_string();
        let inferred = match &ci.result {
            Ok(d) => &d.distribution,
            Err(_) => {
                rows.push((r, client, "inference_failed", 1.0));
                continue;
            }
        };
        let t = &truth[ci.client];
        rows.push((r, client.clone(), "cos_sim", cosine_similarity(inferred, t)?));
        rows.push((r, client.clone(), "js_div", js_divergence(inferred, t)?));
        if let Some(n) = noised_truth.get(ci.client) {
            rows.push((r, client.clone(), "cos_sim_noised", cosine_similarity(inferred, n)?));
            rows.push((r, client.clone(), "js_div_noised", js_divergence(inferred, n)?));
        }
        if links {
            rows.push((r, client.clone(), "density_inferred", inferred[1]));
            rows.push((r, client.clone(), "density_true", t[1]));
            rows.push((r, client, "density_abs_err", (inferred[1] - t[1]).abs()));
        }
    }
    Ok(())
}
