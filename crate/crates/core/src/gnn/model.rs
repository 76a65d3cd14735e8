use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::network::{backprop_embeddings, embed, softmax_rows, EmbeddingCache};
use super::params::ModelParams;
use super::{Arch, ModelConfig};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, Graph, SparseMatrix};

/// A graph together with its aggregation operator for one architecture.
pub struct Prepared<'g> {
    pub graph: &'g Graph,
    pub adj: SparseMatrix,
    pub arch: Arch,
}

impl<'g> Prepared<'g> {
    pub fn new(graph: &'g Graph, arch: Arch) -> Self {
        Self { graph, adj: normalize_adjacency(graph, arch), arch }
    }
}

/// Outputs of one forward pass.
///
/// `fc_input` holds the rows entering the head (node embeddings, or
/// endpoint products for link pairs); `input_sums[k]` is the sum of row
/// `k` and `input_mean` their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    pub fc_input: Array2<f64>,
    pub input_sums: Array1<f64>,
    pub input_mean: f64,
}

impl ForwardTrace {
    fn from_fc_input(params: &ModelParams, fc_input: Array2<f64>) -> Result<Self> {
        let logits = fc_input.dot(&params.fc_weight());
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("fc head".into()));
        }
        let probs = softmax_rows(&logits);
        let input_sums = fc_input.sum_axis(Axis(1));
        let input_mean = input_sums.mean().unwrap_or(0.0);
        Ok(Self { logits, probs, fc_input, input_sums, input_mean })
    }

    pub fn num_samples(&self) -> usize {
        self.probs.nrows()
    }
}

/// Endpoint pair for link prediction; `label` is 1 for an edge, 0 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkPair {
    pub u: usize,
    pub v: usize,
    pub label: usize,
}

fn check_config(params: &ModelParams, cfg: &ModelConfig, g: &Graph) -> Result<()> {
    cfg.validate()?;
    if params.config() != cfg {
        return Err(Error::ShapeMismatch("parameters were built for a different model config".into()));
    }
    if g.feature_dim() != cfg.in_dim {
        return Err(Error::ShapeMismatch(format!(
            "graph has {} features, model expects {}",
            g.feature_dim(),
            cfg.in_dim
        )));
    }
    Ok(())
}

fn check_prepared(params: &ModelParams, cfg: &ModelConfig, prep: &Prepared<'_>) -> Result<()> {
    check_config(params, cfg, prep.graph)?;
    if prep.arch != cfg.arch {
        return Err(Error::ShapeMismatch("adjacency was normalised for another architecture".into()));
    }
    Ok(())
}

fn run_embed(params: &ModelParams, prep: &Prepared<'_>) -> Result<EmbeddingCache> {
    embed(params, prep.graph.features().view(), &prep.adj)
}

/// Node-classification forward pass over every node of `g`.
pub fn forward_pass(params: &ModelParams, cfg: &ModelConfig, g: &Graph) -> Result<ForwardTrace> {
    forward_prepared(params, cfg, &Prepared::new(g, cfg.arch))
}

pub fn forward_prepared(params: &ModelParams, cfg: &ModelConfig, prep: &Prepared<'_>) -> Result<ForwardTrace> {
    check_prepared(params, cfg, prep)?;
    let cache = run_embed(params, prep)?;
    ForwardTrace::from_fc_input(params, cache.embeddings)
}

/// Mean cross-entropy and its gradient over rows where `mask` holds.
/// Returns `(loss, d_logits)`.
fn cross_entropy(trace: &ForwardTrace, targets: &[usize], mask: &[bool]) -> Result<(f64, Array2<f64>)> {
    let k = mask.iter().filter(|&&m| m).count();
    if k == 0 {
        return Err(Error::EmptyMask);
    }
    let inv_k = 1.0 / k as f64;
    let mut d_logits = Array2::zeros(trace.logits.raw_dim());
    let mut loss = 0.0;
    for (row, (&y, _)) in targets.iter().zip(mask).enumerate().filter(|(_, (_, &m))| m) {
        let logits = trace.logits.row(row);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += log_z - logits[y];
        let mut d = d_logits.row_mut(row);
        d.assign(&trace.probs.row(row));
        d[y] -= 1.0;
        d *= inv_k;
    }
    Ok((loss * inv_k, d_logits))
}

/// Mean cross-entropy over the masked nodes and its gradient with respect
/// to every parameter.
///
/// The head gradient is `fc_inputᵀ · (probs − onehot) / K` restricted to
/// masked rows.
pub fn compute_loss_and_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    g: &Graph,
    mask: &[bool],
) -> Result<(f64, ModelParams)> {
    loss_and_gradients_prepared(params, cfg, &Prepared::new(g, cfg.arch), mask)
}

pub fn loss_and_gradients_prepared(
    params: &ModelParams,
    cfg: &ModelConfig,
    prep: &Prepared<'_>,
    mask: &[bool],
) -> Result<(f64, ModelParams)> {
    check_prepared(params, cfg, prep)?;
    if mask.len() != prep.graph.num_nodes() {
        return Err(Error::ShapeMismatch("mask length differs from node count".into()));
    }
    let cache = run_embed(params, prep)?;
    let trace = ForwardTrace::from_fc_input(params, cache.embeddings.clone())?;
    let (loss, d_logits) = cross_entropy(&trace, prep.graph.labels(), mask)?;
    let mut grads = ModelParams::zeros(cfg);
    grads.fc_weight_mut().assign(&trace.fc_input.t().dot(&d_logits));
    let d_embed = d_logits.dot(&params.fc_weight().t());
    backprop_embeddings(params, &prep.adj, &cache, d_embed, &mut grads);
    Ok((loss, grads))
}

/// Calls `f(node, grad)` with the gradient of each listed node's own
/// cross-entropy loss (unaveraged), sharing one forward pass.
pub fn per_node_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    prep: &Prepared<'_>,
    nodes: &[usize],
    mut f: impl FnMut(usize, ModelParams) -> Result<()>,
) -> Result<()> {
    check_prepared(params, cfg, prep)?;
    let cache = run_embed(params, prep)?;
    let probs = softmax_rows(&cache.embeddings.dot(&params.fc_weight()));
    let labels = prep.graph.labels();
    let fc_t = params.fc_weight().t().to_owned();
    for &k in nodes {
        let mut d = probs.row(k).to_owned();
        d[labels[k]] -= 1.0;
        let mut grads = ModelParams::zeros(cfg);
        {
            let mut fc = grads.fc_weight_mut();
            let x = cache.embeddings.row(k);
            for (m, &xm) in x.iter().enumerate() {
                fc.row_mut(m).scaled_add(xm, &d);
            }
        }
        let mut d_embed = Array2::zeros(cache.embeddings.raw_dim());
        d_embed.row_mut(k).assign(&d.dot(&fc_t));
        backprop_embeddings(params, &prep.adj, &cache, d_embed, &mut grads);
        f(k, grads)?;
    }
    Ok(())
}

fn check_pairs(cfg: &ModelConfig, g: &Graph, pairs: &[LinkPair]) -> Result<()> {
    if cfg.out_dim != 2 {
        return Err(Error::InvalidArgument(format!(
            "link prediction needs out_dim = 2, model has {}",
            cfg.out_dim
        )));
    }
    let n = g.num_nodes();
    if let Some(p) = pairs.iter().find(|p| p.u >= n || p.v >= n || p.label > 1) {
        return Err(Error::InvalidArgument(format!("invalid link pair {p:?}")));
    }
    Ok(())
}

fn hadamard_rows(emb: &Array2<f64>, pairs: &[LinkPair]) -> Array2<f64> {
    let mut out = Array2::zeros((pairs.len(), emb.ncols()));
    for (q, p) in pairs.iter().enumerate() {
        out.row_mut(q).assign(&(&emb.row(p.u) * &emb.row(p.v)));
    }
    out
}

/// Link-prediction forward pass: the head input of pair `(u, v)` is the
/// elementwise product of the two node embeddings. Rows follow `pairs`.
pub fn link_pair_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    g: &Graph,
    pairs: &[LinkPair],
) -> Result<ForwardTrace> {
    check_pairs(cfg, g, pairs)?;
    let prep = Prepared::new(g, cfg.arch);
    check_prepared(params, cfg, &prep)?;
    let cache = run_embed(params, &prep)?;
    ForwardTrace::from_fc_input(params, hadamard_rows(&cache.embeddings, pairs))
}

/// Mean cross-entropy over `pairs` and its parameter gradient.
pub fn compute_link_loss_and_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    g: &Graph,
    pairs: &[LinkPair],
) -> Result<(f64, ModelParams)> {
    link_loss_and_gradients_prepared(params, cfg, &Prepared::new(g, cfg.arch), pairs)
}

pub fn link_loss_and_gradients_prepared(
    params: &ModelParams,
    cfg: &ModelConfig,
    prep: &Prepared<'_>,
    pairs: &[LinkPair],
) -> Result<(f64, ModelParams)> {
    check_pairs(cfg, prep.graph, pairs)?;
    check_prepared(params, cfg, prep)?;
    let cache = run_embed(params, prep)?;
    let emb = &cache.embeddings;
    let trace = ForwardTrace::from_fc_input(params, hadamard_rows(emb, pairs))?;
    let targets: Vec<usize> = pairs.iter().map(|p| p.label).collect();
    let (loss, d_logits) = cross_entropy(&trace, &targets, &vec![true; pairs.len()])?;
    let mut grads = ModelParams::zeros(cfg);
    grads.fc_weight_mut().assign(&trace.fc_input.t().dot(&d_logits));
    let d_x = d_logits.dot(&params.fc_weight().t());
    let mut d_embed = Array2::zeros(emb.raw_dim());
    for (q, p) in pairs.iter().enumerate() {
        let dq = d_x.row(q);
        d_embed.row_mut(p.u).scaled_add(1.0, &(&dq * &emb.row(p.v)));
        d_embed.row_mut(p.v).scaled_add(1.0, &(&dq * &emb.row(p.u)));
    }
    backprop_embeddings(params, &prep.adj, &cache, d_embed, &mut grads);
    Ok((loss, grads))
}

/// `w ← w − lr·g` for every parameter.
pub fn apply_sgd_step(params: &ModelParams, grads: &ModelParams, lr: f64) -> Result<ModelParams> {
    let mut out = params.clone();
    out.add_scaled(-lr, grads)?;
    Ok(out)
}

/// Fraction of masked nodes whose arg-max prediction equals the label.
pub fn accuracy(trace: &ForwardTrace, labels: &[usize], mask: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (row, (&y, _)) in labels.iter().zip(mask).enumerate().filter(|(_, (_, &m))| m) {
        let probs = trace.probs.row(row);
        let pred = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &p)| if p > best.1 { (c, p) } else { best })
            .0;
        hits += usize::from(pred == y);
        total += 1;
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
