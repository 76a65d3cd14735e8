use std::collections::BTreeSet;

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;

/// Fraction of generated nodes marked as training nodes.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Parameters of the planted-partition generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub label_probs: Vec<f64>,
    /// Probability that a drawn edge joins two nodes of the same class.
    pub homophily: f64,
    pub avg_degree: f64,
    pub seed: u64,
}

/// Draws a labelled graph with class-dependent features and homophilous edges.
///
/// Labels are iid from `label_probs`. Every class gets a mean vector with
/// standard normal entries, and each node's features are its class mean plus
/// unit Gaussian noise. `round(n * avg_degree / 2)` distinct edges are drawn:
/// a uniformly chosen endpoint is paired with a same-class node with
/// probability `homophily`, otherwise with a node of another class. A random
/// [`TRAIN_FRACTION`] of nodes forms the training mask.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Graph> {
    let n = spec.nodes;
    let l = spec.classes;
    if l < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {l}")));
    }
    if spec.label_probs.len() != l {
        return Err(Error::InvalidArgument(format!(
            "label_probs has {} entries for {l} classes",
            spec.label_probs.len()
        )));
    }
    if spec.label_probs.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidArgument("label_probs has a negative entry".into()));
    }
    let total: f64 = spec.label_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("label_probs sums to {total}, expected 1")));
    }
    if n < l {
        return Err(Error::InvalidArgument(format!("{n} nodes cannot cover {l} classes")));
    }
    if !(spec.avg_degree > 0.0) || spec.avg_degree >= n as f64 {
        return Err(Error::InvalidArgument(format!(
            "avg_degree {} must lie in (0, {n})",
            spec.avg_degree
        )));
    }
    if !(0.0..=1.0).contains(&spec.homophily) {
        return Err(Error::InvalidArgument(format!("homophily {} outside [0, 1]", spec.homophily)));
    }

    let mut r = rng::stream(spec.seed, 0x5e7);
    let dist = WeightedIndex::new(&spec.label_probs)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let labels: Vec<usize> = (0..n).map(|_| dist.sample(&mut r)).collect();

    let f = spec.feature_dim;
    let means = Array2::from_shape_simple_fn((l, f), || r.sample::<f64, _>(StandardNormal));
    let mut features = Array2::zeros((n, f));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = means[[labels[i], j]] + r.sample::<f64, _>(StandardNormal);
        }
    }

    let mut members = vec![Vec::new(); l];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    let target = (n as f64 * spec.avg_degree / 2.0).round() as usize;
    let mut edges = BTreeSet::new();
    let max_attempts = 50 * target + 1000;
    for _ in 0..max_attempts {
        if edges.len() >= target {
            break;
        }
        let u = r.gen_range(0..n);
        let same = r.gen_bool(spec.homophily);
        let v = if same {
            let pool = &members[labels[u]];
            if pool.len() < 2 {
                continue;
            }
            pool[r.gen_range(0..pool.len())]
        } else {
            if members[labels[u]].len() == n {
                continue;
            }
            let mut v = r.gen_range(0..n);
            while labels[v] == labels[u] {
                v = r.gen_range(0..n);
            }
            v
        };
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
    let mut train_mask = vec![false; n];
    for &i in &order[..n_train] {
        train_mask[i] = true;
    }
    Graph::new(features, edges, labels, l, train_mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            nodes: 400,
            classes: 4,
            feature_dim: 8,
            label_probs: vec![0.4, 0.3, 0.2, 0.1],
            homophily: 0.8,
            avg_degree: 4.0,
            seed,
        }
    }

    #[test]
    fn deterministic_for_seed() {
        assert_eq!(generate_synthetic(&spec(9)).unwrap(), generate_synthetic(&spec(9)).unwrap());
        assert_ne!(generate_synthetic(&spec(9)).unwrap(), generate_synthetic(&spec(10)).unwrap());
    }

    #[test]
    fn full_homophily_is_intra_class() {
        let g = generate_synthetic(&SyntheticSpec { homophily: 1.0, ..spec(1) }).unwrap();
        assert!(!g.edges().is_empty());
        assert!(g.edges().iter().all(|&(a, b)| g.labels()[a] == g.labels()[b]));
    }

    #[test]
    fn edge_count_matches_degree() {
        let g = generate_synthetic(&spec(2)).unwrap();
        assert_eq!(g.edges().len(), 800);
        assert_eq!(g.num_train(), 320);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad = |s: SyntheticSpec| generate_synthetic(&s).is_err();
        assert!(bad(SyntheticSpec { label_probs: vec![0.5, 0.6, -0.2, 0.1], ..spec(1) }));
        assert!(bad(SyntheticSpec { label_probs: vec![0.5, 0.3, 0.1, 0.0], ..spec(1) }));
        assert!(bad(SyntheticSpec { avg_degree: 400.0, ..spec(1) }));
        assert!(bad(SyntheticSpec { nodes: 3, ..spec(1) }));
    }
}
