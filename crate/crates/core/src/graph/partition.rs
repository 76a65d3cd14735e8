use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;

/// Iteration cap for label propagation.
pub const MAX_LPA_ITERATIONS: usize = 50;

/// Node-disjoint split of a graph across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub client_graphs: Vec<Graph>,
    /// Source-graph node indices held by each client, ascending.
    pub client_nodes: Vec<Vec<usize>>,
    /// Row `i` is the training-label histogram of client `i`.
    pub client_label_counts: Vec<Vec<usize>>,
    /// Set when community detection yielded fewer communities than clients
    /// (or left a client without training nodes) and nodes were dealt
    /// round-robin instead.
    pub round_robin_fallback: bool,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_graphs.len()
    }
}

/// Synchronous label propagation.
///
/// Initial labels are a seeded permutation of `0..n`. Each sweep, every node
/// adopts the most frequent label among itself and its neighbours, ties
/// going to the lowest label. Stops at a fixed point or after
/// [`MAX_LPA_ITERATIONS`] sweeps. Returns one community label per node.
pub fn label_propagation(g: &Graph, seed: u64) -> Vec<usize> {
    let n = g.num_nodes();
    let neighbors = g.neighbors();
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(&mut rng::stream(seed, 0x1a9));

    let mut counts: HashMap<usize, usize> = HashMap::new();
    for _ in 0..MAX_LPA_ITERATIONS {
        let next: Vec<usize> = (0..n)
            .map(|i| {
                counts.clear();
                *counts.entry(labels[i]).or_default() += 1;
                for &j in &neighbors[i] {
                    *counts.entry(labels[j]).or_default() += 1;
                }
                counts
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(&label, _)| label)
                    .unwrap_or(labels[i])
            })
            .collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Splits `g` across `num_clients` clients along detected communities.
///
/// Communities are sorted by size (descending, ties by smallest member) and
/// each is handed to the client currently holding the fewest nodes. Each
/// client receives the induced subgraph over its nodes.
pub fn partition_graph(g: &Graph, num_clients: usize, seed: u64) -> Result<Partition> {
    if num_clients == 0 {
        return Err(Error::InvalidArgument("client count must be at least 1".into()));
    }
    if g.num_train() < num_clients {
        return Err(Error::InvalidArgument(format!(
            "{} training nodes cannot cover {num_clients} clients",
            g.num_train()
        )));
    }

    let community = label_propagation(g, seed);
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &c) in community.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    let mut assignment = vec![Vec::new(); num_clients];
    let mut fallback = groups.len() < num_clients;
    if !fallback {
        for group in groups {
            let target = (0..num_clients)
                .min_by_key(|&c| (assignment[c].len(), c))
                .expect("at least one client");
            assignment[target].extend(group);
        }
        fallback = assignment
            .iter()
            .any(|nodes| !nodes.iter().any(|&i| g.train_mask()[i]));
    }
    if fallback {
        assignment = vec![Vec::new(); num_clients];
        let train = (0..g.num_nodes()).filter(|&i| g.train_mask()[i]);
        let rest = (0..g.num_nodes()).filter(|&i| !g.train_mask()[i]);
        for (k, i) in train.enumerate() {
            assignment[k % num_clients].push(i);
        }
        for (k, i) in rest.enumerate() {
            assignment[k % num_clients].push(i);
        }
    }
    for nodes in &mut assignment {
        nodes.sort_unstable();
    }

    let client_graphs = assignment
        .iter()
        .map(|nodes| g.induced_subgraph(nodes))
        .collect::<Result<Vec<_>>>()?;
    let client_label_counts = client_graphs.iter().map(Graph::train_label_counts).collect();
    Ok(Partition {
        client_graphs,
        client_nodes: assignment,
        client_label_counts,
        round_robin_fallback: fallback,
    })
}
