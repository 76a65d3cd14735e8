//! Oracle checks for the message-passing engine: finite differences,
//! the head-gradient closed form and hand-computed matrix chains.

use fgl_core::gnn::{
    apply_sgd_step, compute_link_loss_and_gradients, compute_loss_and_gradients, forward_pass,
    link_pair_forward, Arch, LinkPair, ModelConfig, ModelParams,
};
use fgl_core::graph::{generate_synthetic, normalize_adjacency, Graph, SyntheticSpec};
use ndarray::{array, Array2};

fn small_graph(n: usize, f: usize, seed: u64) -> Graph {
    generate_synthetic(&SyntheticSpec {
        nodes: n,
        classes: 3,
        feature_dim: f,
        label_probs: vec![0.5, 0.3, 0.2],
        homophily: 0.7,
        avg_degree: 3.0,
        seed,
    })
    .unwrap()
}

fn cfg(arch: Arch, layers: usize, f: usize) -> ModelConfig {
    ModelConfig { arch, gnn_layers: layers, hidden_dim: 6, in_dim: f, out_dim: 3 }
}

/// Central-difference gradient of `loss` at every parameter.
fn numeric_gradient(params: &ModelParams, step: f64, loss: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
    let mut probe = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + step;
            let up = loss(&probe);
            probe.values_mut()[i] = orig - step;
            let down = loss(&probe);
            probe.values_mut()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn finite_difference_all_architectures_and_depths() {
    let g = small_graph(20, 4, 11);
    let mask = g.train_mask().to_vec();
    for arch in Arch::ALL {
        for layers in 1..=3 {
            let c = cfg(arch, layers, 4);
            let params = ModelParams::init(&c, 100 + layers as u64);
            let (_, grads) = compute_loss_and_gradients(&params, &c, &g, &mask).unwrap();
            let numeric = numeric_gradient(&params, 1e-5, |p| {
                compute_loss_and_gradients(p, &c, &g, &mask).unwrap().0
            });
            let err = max_rel_error(grads.values(), &numeric);
            assert!(err <= 1e-4, "{arch} depth {layers}: relative error {err:e}");
        }
    }
}

#[test]
fn finite_difference_link_head() {
    let g = small_graph(20, 4, 12);
    let pairs: Vec<LinkPair> = g
        .edges()
        .iter()
        .take(8)
        .map(|&(u, v)| LinkPair { u, v, label: 1 })
        .chain((0..8).map(|i| LinkPair { u: i, v: 19 - i, label: 0 }))
        .collect();
    for arch in Arch::ALL {
        let c = ModelConfig { out_dim: 2, ..cfg(arch, 2, 4) };
        let params = ModelParams::init(&c, 7);
        let (_, grads) = compute_link_loss_and_gradients(&params, &c, &g, &pairs).unwrap();
        let numeric = numeric_gradient(&params, 1e-5, |p| {
            compute_link_loss_and_gradients(p, &c, &g, &pairs).unwrap().0
        });
        let err = max_rel_error(grads.values(), &numeric);
        assert!(err <= 1e-4, "{arch}: relative error {err:e}");
    }
}

#[test]
fn head_gradient_matches_closed_form() {
    let g = small_graph(40, 5, 13);
    let mask = g.train_mask().to_vec();
    for arch in Arch::ALL {
        let c = ModelConfig { hidden_dim: 8, ..cfg(arch, 2, 5) };
        let mut params = ModelParams::init(&c, 3);
        for _ in 0..5 {
            let (_, grads) = compute_loss_and_gradients(&params, &c, &g, &mask).unwrap();
            let trace = forward_pass(&params, &c, &g).unwrap();
            let k = mask.iter().filter(|&&m| m).count() as f64;
            let mut expected = Array2::<f64>::zeros((8, 3));
            for (row, &y) in g.labels().iter().enumerate() {
                if !mask[row] {
                    continue;
                }
                for l in 0..3 {
                    let coeff = trace.probs[[row, l]] - if y == l { 1.0 } else { 0.0 };
                    for m in 0..8 {
                        expected[[m, l]] += coeff * trace.fc_input[[row, m]] / k;
                    }
                }
            }
            let diff = (&grads.fc_weight() - &expected).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff <= 1e-10, "{arch}: {diff:e}");
            params = apply_sgd_step(&params, &grads, 0.5).unwrap();
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let g = small_graph(30, 4, 14);
    for arch in Arch::ALL {
        for layers in 1..=3 {
            let c = cfg(arch, layers, 4);
            let trace = forward_pass(&ModelParams::init(&c, 9), &c, &g).unwrap();
            for row in trace.probs.rows() {
                assert!((row.sum() - 1.0).abs() <= 1e-9);
            }
            assert_eq!(trace.input_mean, trace.input_sums.mean().unwrap());
        }
    }
}

#[test]
fn zero_head_gives_uniform_probs_and_ln_l_loss() {
    let g = small_graph(15, 4, 15);
    let c = cfg(Arch::Gat, 2, 4);
    let mut params = ModelParams::init(&c, 1);
    params.fc_weight_mut().fill(0.0);
    let trace = forward_pass(&params, &c, &g).unwrap();
    assert!(trace.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    let (loss, _) = compute_loss_and_gradients(&params, &c, &g, g.train_mask()).unwrap();
    assert!((loss - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_predictions_have_vanishing_loss() {
    // One-hot features through an identity-like GCN layer on an edgeless
    // graph; the head maps each class to a logit margin of 40.
    let n = 6;
    let mut features = Array2::zeros((n, 3));
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    for (i, &y) in labels.iter().enumerate() {
        features[[i, y]] = 1.0;
    }
    let g = Graph::new(features, [], labels, 3, vec![true; n]).unwrap();
    let c = ModelConfig { arch: Arch::Gcn, gnn_layers: 1, hidden_dim: 3, in_dim: 3, out_dim: 3 };
    let named = serde_json::json!({"tensors": [
        {"name": "gnn.0.weight", "shape": [3, 3], "values": [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]},
        {"name": "gnn.0.bias", "shape": [1, 3], "values": [0.0, 0.0, 0.0]},
        {"name": "fc.weight", "shape": [3, 3], "values": [40.0, 0.0, 0.0, 0.0, 40.0, 0.0, 0.0, 0.0, 40.0]}
    ]});
    let params = ModelParams::from_json(&c, &named.to_string()).unwrap();
    let (loss, _) = compute_loss_and_gradients(&params, &c, &g, g.train_mask()).unwrap();
    assert!(loss < 1e-6, "{loss}");
}

#[test]
fn empty_mask_is_rejected() {
    let g = small_graph(10, 4, 16);
    let c = cfg(Arch::Gcn, 1, 4);
    let params = ModelParams::init(&c, 1);
    assert!(compute_loss_and_gradients(&params, &c, &g, &vec![false; 10]).is_err());
}

#[test]
fn edgeless_gcn_isolates_nodes() {
    let mut g = small_graph(12, 4, 17);
    g = g.with_edges([]).unwrap();
    let c = cfg(Arch::Gcn, 1, 4);
    let params = ModelParams::init(&c, 2);
    let full = forward_pass(&params, &c, &g).unwrap();
    let single = g.induced_subgraph(&[5]).unwrap();
    let alone = forward_pass(&params, &c, &single).unwrap();
    assert_eq!(full.fc_input.row(5), alone.fc_input.row(0));
}

#[test]
fn two_layer_gcn_on_path_matches_hand_chain() {
    let features = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0], [-1.0, 0.5]];
    let g = Graph::new(features.clone(), [(0, 1), (1, 2), (2, 3), (3, 4)], vec![0, 1, 0, 1, 0], 2, vec![true; 5])
        .unwrap();
    let c = ModelConfig { arch: Arch::Gcn, gnn_layers: 2, hidden_dim: 3, in_dim: 2, out_dim: 2 };
    let params = ModelParams::init(&c, 21);

    // Â for the path P5 written out by hand: degrees with self loops are
    // (2, 3, 3, 3, 2).
    let d = [2.0f64, 3.0, 3.0, 3.0, 2.0];
    let mut a_hat = Array2::<f64>::zeros((5, 5));
    for i in 0..5 {
        a_hat[[i, i]] = 1.0 / d[i];
    }
    for i in 0..4 {
        let v = 1.0 / (d[i] * d[i + 1]).sqrt();
        a_hat[[i, i + 1]] = v;
        a_hat[[i + 1, i]] = v;
    }
    let dense = normalize_adjacency(&g, Arch::Gcn).to_dense();
    assert!((&dense - &a_hat).mapv(f64::abs).iter().all(|&v| v < 1e-15));

    let w1 = params.tensor("gnn.0.weight").unwrap();
    let b1 = params.tensor("gnn.0.bias").unwrap();
    let w2 = params.tensor("gnn.1.weight").unwrap();
    let b2 = params.tensor("gnn.1.bias").unwrap();
    let fc = params.fc_weight();
    let h1 = (a_hat.dot(&features).dot(&w1) + &b1.row(0)).mapv(|v| v.max(0.0));
    let h2 = a_hat.dot(&h1).dot(&w2) + &b2.row(0);
    let logits = h2.dot(&fc);

    let trace = forward_pass(&params, &c, &g).unwrap();
    let max_diff = |a: &Array2<f64>, b: &Array2<f64>| (a - b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
    assert!(max_diff(&trace.fc_input, &h2) <= 1e-10);
    assert!(max_diff(&trace.logits, &logits) <= 1e-10);
}

#[test]
fn link_pairs_use_hadamard_products() {
    let features = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0], [-2.0, 1.0]];
    let g = Graph::new(features, [(0, 1), (1, 2), (2, 3)], vec![0, 1, 0, 1], 2, vec![true; 4]).unwrap();
    let c = ModelConfig { arch: Arch::Sage, gnn_layers: 1, hidden_dim: 3, in_dim: 2, out_dim: 2 };
    let params = ModelParams::init(&c, 4);
    let pairs = [LinkPair { u: 0, v: 1, label: 1 }, LinkPair { u: 2, v: 3, label: 1 }, LinkPair { u: 0, v: 3, label: 0 }];
    let trace = link_pair_forward(&params, &c, &g, &pairs).unwrap();
    let emb = forward_pass(&ModelParams::from_named(&c, &params.to_named()).unwrap(), &c, &g).unwrap().fc_input;
    for (q, p) in pairs.iter().enumerate() {
        for m in 0..3 {
            let expected = emb[[p.u, m]] * emb[[p.v, m]];
            assert!((trace.fc_input[[q, m]] - expected).abs() <= 1e-10);
        }
    }

    // A node whose embedding is zero yields a zero head input and uniform probabilities.
    let mut zero = ModelParams::zeros(&c);
    zero.fc_weight_mut().fill(1.0);
    let trace = link_pair_forward(&zero, &c, &g, &[LinkPair { u: 1, v: 1, label: 0 }]).unwrap();
    assert!(trace.fc_input.iter().all(|&v| v == 0.0));
    assert_eq!(trace.probs.row(0).to_vec(), vec![0.5, 0.5]);

    let bad = ModelConfig { out_dim: 3, ..c };
    assert!(link_pair_forward(&ModelParams::zeros(&bad), &bad, &g, &pairs).is_err());
}

#[test]
fn sgd_step_definition() {
    let c = ModelConfig { arch: Arch::Gcn, gnn_layers: 1, hidden_dim: 1, in_dim: 1, out_dim: 2 };
    let params = ModelParams::init(&c, 1);
    let grads = ModelParams::init(&c, 2);
    assert_eq!(apply_sgd_step(&params, &grads, 0.0).unwrap(), params);
    assert_eq!(apply_sgd_step(&params, &ModelParams::zeros(&c), 0.3).unwrap(), params);

    let mut w = ModelParams::zeros(&c);
    w.values_mut()[0] = 2.0;
    let mut g = ModelParams::zeros(&c);
    g.values_mut()[0] = 1.0;
    assert_eq!(apply_sgd_step(&w, &g, 0.5).unwrap().values()[0], 1.5);
}
