//! FedAvg loop: local SGD identities, aggregation arithmetic, determinism.

use fgl_core::attack::{AttackConfig, AttackSchedule, AttackTask};
use fgl_core::fedsim::{
    aggregate_models, client_local_train, evaluate_accuracy, run_training, weighted_sum, ClientState, ClientUpdate,
    NoHooks, RoundHooks, TrainTarget,
};
use fgl_core::gnn::{compute_loss_and_gradients, Arch, ModelConfig, ModelParams};
use fgl_core::graph::{generate_synthetic, partition_graph, Graph, SyntheticSpec};
use fgl_core::{Error, Result};

fn toy_graph(seed: u64) -> Graph {
    generate_synthetic(&SyntheticSpec {
        nodes: 60,
        classes: 3,
        feature_dim: 5,
        label_probs: vec![0.5, 0.3, 0.2],
        homophily: 0.8,
        avg_degree: 4.0,
        seed,
    })
    .unwrap()
}

fn cfg(arch: Arch) -> ModelConfig {
    ModelConfig { arch, gnn_layers: 2, hidden_dim: 8, in_dim: 5, out_dim: 3 }
}

fn client(graph: Graph, epochs: usize, lr: f64) -> ClientState {
    ClientState { id: 0, graph, weight: 1.0, epochs, lr, target: TrainTarget::Nodes }
}

fn federation(g: &Graph, n: usize, epochs: usize) -> Vec<ClientState> {
    let part = partition_graph(g, n, 5).unwrap();
    part.client_graphs
        .into_iter()
        .enumerate()
        .map(|(id, graph)| ClientState { id, graph, weight: 1.0 / n as f64, epochs, lr: 0.05, target: TrainTarget::Nodes })
        .collect()
}

#[test]
fn single_epoch_delta_is_lr_times_gradient() {
    let g = toy_graph(1);
    for arch in Arch::ALL {
        let c = cfg(arch);
        let init = ModelParams::init(&c, 3);
        let (_, grads) = compute_loss_and_gradients(&init, &c, &g, g.train_mask()).unwrap();
        let up = client_local_train(&init, &client(g.clone(), 1, 0.1), &c).unwrap();
        for (d, gr) in up.delta.values().iter().zip(grads.values()) {
            assert!((d - 0.1 * gr).abs() <= 1e-15 * (1.0 + gr.abs()), "{arch}: {d} vs {}", 0.1 * gr);
        }
        assert_eq!(up.delta, init.sub(&up.trained_params).unwrap());
    }
}

#[test]
fn zero_learning_rate_leaves_model_unchanged() {
    let g = toy_graph(2);
    let c = cfg(Arch::Sage);
    let init = ModelParams::init(&c, 4);
    let up = client_local_train(&init, &client(g, 3, 0.0), &c).unwrap();
    assert!(up.delta.values().iter().all(|&v| v == 0.0));
    assert_eq!(up.trained_params, init);
}

#[test]
fn small_lr_multi_epoch_delta_is_linear() {
    let g = toy_graph(3);
    for arch in Arch::ALL {
        let c = cfg(arch);
        let init = ModelParams::init(&c, 5);
        let one = client_local_train(&init, &client(g.clone(), 1, 1e-4), &c).unwrap();
        let five = client_local_train(&init, &client(g.clone(), 5, 1e-4), &c).unwrap();
        let diff = five.delta.sub(&one.delta.scaled(5.0)).unwrap();
        let rel = diff.global_norm() / (5.0 * one.delta.global_norm());
        assert!(rel < 0.05, "{arch}: relative error {rel}");
    }
}

#[test]
fn empty_client_is_rejected() {
    let g = toy_graph(4);
    let g = g.with_train_mask(vec![false; g.num_nodes()]).unwrap();
    let c = cfg(Arch::Gcn);
    assert!(client_local_train(&ModelParams::init(&c, 0), &client(g, 1, 0.1), &c).is_err());
}

fn scalar_update(values: &[f64]) -> ClientUpdate {
    let c = ModelConfig { arch: Arch::Gcn, gnn_layers: 1, hidden_dim: 1, in_dim: 1, out_dim: 2 };
    let mut p = ModelParams::zeros(&c);
    for (v, &x) in p.values_mut().iter_mut().zip(values.iter().cycle()) {
        *v = x;
    }
    ClientUpdate::new(0, &p, p.clone(), 1, 0.0, 0.0).unwrap()
}

#[test]
fn aggregation_examples() {
    let a = scalar_update(&[2.0]);
    let b = scalar_update(&[4.0]);
    let mid = aggregate_models(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap();
    assert!(mid.values().iter().all(|&v| v == 3.0));
    let first = aggregate_models(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap();
    assert_eq!(first, a.trained_params);
    let same = aggregate_models(&[a.clone(), a.clone()], &[0.5, 0.5]).unwrap();
    assert_eq!(same, a.trained_params);
    assert!(matches!(aggregate_models(&[a.clone(), b], &[0.5, 0.6]), Err(Error::WeightSum(_))));
    assert!(matches!(aggregate_models(&[], &[]), Err(Error::NoUpdates)));
}

#[test]
fn aggregation_is_affine_and_mean() {
    let c = cfg(Arch::Gat);
    let models: Vec<ModelParams> = (0..4).map(|s| ModelParams::init(&c, s)).collect();
    let refs: Vec<&ModelParams> = models.iter().collect();
    let w = [0.25; 4];
    let agg = weighted_sum(&refs, &w).unwrap();
    for a in [0.5, 2.0, 4.0] {
        let scaled: Vec<ModelParams> = models.iter().map(|m| m.scaled(a)).collect();
        let srefs: Vec<&ModelParams> = scaled.iter().collect();
        assert_eq!(weighted_sum(&srefs, &w).unwrap(), agg.scaled(a));
    }
    for (i, v) in agg.values().iter().enumerate() {
        let mean = models.iter().map(|m| m.values()[i]).fold(0.0, |s, x| s + 0.25 * x);
        assert_eq!(*v, mean);
    }
}

#[test]
fn zero_rounds_returns_initial_model() {
    let g = toy_graph(5);
    let c = cfg(Arch::Gcn);
    let run = run_training(&federation(&g, 2, 1), &c, 0, 9, &mut NoHooks).unwrap();
    assert_eq!(run.final_params, ModelParams::init(&c, 9));
    assert!(run.log.is_empty());
}

#[test]
fn runs_are_bit_identical() {
    let g = toy_graph(6);
    let c = cfg(Arch::Gat);
    let clients = federation(&g, 3, 2);
    let a = run_training(&clients, &c, 4, 1, &mut NoHooks).unwrap();
    let b = run_training(&clients, &c, 4, 1, &mut NoHooks).unwrap();
    assert_eq!(a.final_params.to_json().unwrap(), b.final_params.to_json().unwrap());
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    fgl_core::fedsim::write_round_logs(&a.log, &mut la).unwrap();
    fgl_core::fedsim::write_round_logs(&b.log, &mut lb).unwrap();
    assert_eq!(la, lb);
    assert_eq!(String::from_utf8(la).unwrap().lines().count(), 4);
}

/// Hooks that observe but never intervene.
struct Watcher(usize);

impl RoundHooks for Watcher {
    fn before_round(&mut self, _round: usize, _global: &ModelParams) -> Result<Option<ModelParams>> {
        self.0 += 1;
        Ok(None)
    }
}

#[test]
fn passive_hooks_and_empty_attack_match_plain_run() {
    let g = toy_graph(7);
    let c = cfg(Arch::Sage);
    let clients = federation(&g, 3, 2);
    let plain = run_training(&clients, &c, 3, 2, &mut NoHooks).unwrap();
    let mut w = Watcher(0);
    let watched = run_training(&clients, &c, 3, 2, &mut w).unwrap();
    assert_eq!(w.0, 3);
    let mut sched = AttackSchedule::new(AttackConfig::default(), c, AttackTask::Nodes, 0.05, 0);
    let idle = run_training(&clients, &c, 3, 2, &mut sched).unwrap();
    assert!(sched.results().is_empty());
    for other in [&watched, &idle] {
        assert_eq!(other.final_params.to_json().unwrap(), plain.final_params.to_json().unwrap());
        assert_eq!(other.log, plain.log);
    }
}

struct Failing;

impl RoundHooks for Failing {
    fn before_round(&mut self, round: usize, _global: &ModelParams) -> Result<Option<ModelParams>> {
        if round == 2 {
            Err(Error::InvalidArgument("boom".into()))
        } else {
            Ok(None)
        }
    }
}

#[test]
fn hook_failure_names_the_round() {
    let g = toy_graph(8);
    let c = cfg(Arch::Gcn);
    let err = run_training(&federation(&g, 2, 1), &c, 3, 0, &mut Failing).unwrap_err();
    assert!(matches!(err, Error::Hook { round: 2, .. }), "{err}");
}

#[test]
fn federated_training_beats_majority_rate() {
    let g = generate_synthetic(&SyntheticSpec {
        nodes: 600,
        classes: 4,
        feature_dim: 16,
        label_probs: vec![0.4, 0.3, 0.2, 0.1],
        homophily: 0.8,
        avg_degree: 5.0,
        seed: 21,
    })
    .unwrap();
    let c = ModelConfig { arch: Arch::Gcn, gnn_layers: 2, hidden_dim: 32, in_dim: 16, out_dim: 4 };
    let run = run_training(&federation(&g, 3, 2), &c, 30, 4, &mut NoHooks).unwrap();
    let test = g.test_mask();
    let acc = evaluate_accuracy(&run.final_params, &c, &g, &test).unwrap();
    let counts = g.label_counts(&test);
    let majority = *counts.iter().max().unwrap() as f64 / counts.iter().sum::<usize>() as f64;
    assert!(acc > majority, "accuracy {acc} vs majority {majority}");
}
