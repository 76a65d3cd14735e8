//! Message-passing forward and backward passes over a prepared graph.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::params::{LayerSlots, ModelParams};
use super::Arch;
use crate::error::{Error, Result};
use crate::graph::SparseMatrix;

const GAT_NEGATIVE_SLOPE: f64 = 0.2;

struct LayerCache {
    input: Array2<f64>,
    /// GCN: `Â·H`; GraphSAGE: neighbour mean `A·H`; GAT: `H·W`.
    aux: Array2<f64>,
    /// GAT attention coefficients and raw scores in CSR order.
    alpha: Vec<f64>,
    raw: Vec<f64>,
    /// Pre-activation output (ReLU mask for inner layers).
    pre: Array2<f64>,
}

/// Node embeddings entering the head, plus everything needed to backprop.
pub(crate) struct EmbeddingCache {
    layers: Vec<LayerCache>,
    pub embeddings: Array2<f64>,
}

fn check_finite(m: &Array2<f64>, what: impl FnOnce() -> String) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericOverflow(what()))
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        GAT_NEGATIVE_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        GAT_NEGATIVE_SLOPE
    }
}

pub(crate) fn embed(params: &ModelParams, features: ArrayView2<f64>, adj: &SparseMatrix) -> Result<EmbeddingCache> {
    let layout = params.layout();
    let arch = layout.cfg.arch;
    let depth = layout.layers.len();
    let mut h = features.to_owned();
    let mut caches = Vec::with_capacity(depth);
    for (idx, slots) in layout.layers.iter().enumerate() {
        let w = params.view(slots.weight);
        let bias = params.view(slots.bias);
        let (mut out, aux, alpha, raw) = match arch {
            Arch::Gcn => {
                let agg = adj.matmul(h.view());
                (agg.dot(&w), agg, Vec::new(), Vec::new())
            }
            Arch::Sage => {
                let mean = adj.matmul(h.view());
                let wn = params.view(slots.neigh_weight.expect("sage neighbour weight"));
                (h.dot(&w) + mean.dot(&wn), mean, Vec::new(), Vec::new())
            }
            Arch::Gat => {
                let z = h.dot(&w);
                let a_src = params.view(slots.att_src.expect("gat attention")).row(0).to_owned();
                let a_dst = params.view(slots.att_dst.expect("gat attention")).row(0).to_owned();
                let s = z.dot(&a_src);
                let t = z.dot(&a_dst);
                let mut alpha = Vec::with_capacity(adj.nnz());
                let mut raw = Vec::with_capacity(adj.nnz());
                let mut out = Array2::zeros(z.raw_dim());
                for i in 0..adj.dim() {
                    let start = raw.len();
                    for (j, _) in adj.row(i) {
                        raw.push(s[i] + t[j]);
                    }
                    let scores: Vec<f64> = raw[start..].iter().map(|&x| leaky(x)).collect();
                    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|&e| (e - max).exp()).collect();
                    let denom: f64 = exps.iter().sum();
                    let mut row = out.row_mut(i);
                    for ((j, _), e) in adj.row(i).zip(exps) {
                        let a = e / denom;
                        alpha.push(a);
                        row.scaled_add(a, &z.row(j));
                    }
                }
                (out, z, alpha, raw)
            }
        };
        out += &bias.row(0);
        check_finite(&out, || format!("gnn layer {idx}"))?;
        let pre = out.clone();
        if idx + 1 < depth {
            out.mapv_inplace(|v| v.max(0.0));
        }
        caches.push(LayerCache { input: h, aux, alpha, raw, pre });
        h = out;
    }
    Ok(EmbeddingCache { layers: caches, embeddings: h })
}

/// Backpropagates `d_embed` (gradient w.r.t. the final embeddings) through
/// the message-passing stack, accumulating into `grads`.
pub(crate) fn backprop_embeddings(
    params: &ModelParams,
    adj: &SparseMatrix,
    cache: &EmbeddingCache,
    d_embed: Array2<f64>,
    grads: &mut ModelParams,
) {
    let layout = params.layout();
    let arch = layout.cfg.arch;
    let mut d_out = d_embed;
    for (idx, (slots, lc)) in layout.layers.iter().zip(&cache.layers).enumerate().rev() {
        if idx + 1 < layout.layers.len() {
            ndarray::Zip::from(&mut d_out).and(&lc.pre).for_each(|d, &p| {
                if p <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        let need_input_grad = idx > 0;
        let d_in = layer_backward(params, arch, *slots, adj, lc, &d_out, grads, need_input_grad);
        if let Some(d) = d_in {
            d_out = d;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    params: &ModelParams,
    arch: Arch,
    slots: LayerSlots,
    adj: &SparseMatrix,
    lc: &LayerCache,
    d_out: &Array2<f64>,
    grads: &mut ModelParams,
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    let w = params.view(slots.weight);
    grads.view_mut(slots.bias).row_mut(0).scaled_add(1.0, &d_out.sum_axis(Axis(0)));
    match arch {
        Arch::Gcn => {
            grads.view_mut(slots.weight).scaled_add(1.0, &lc.aux.t().dot(d_out));
            need_input_grad.then(|| adj.transpose_matmul(d_out.dot(&w.t()).view()))
        }
        Arch::Sage => {
            let wn_idx = slots.neigh_weight.expect("sage neighbour weight");
            grads.view_mut(slots.weight).scaled_add(1.0, &lc.input.t().dot(d_out));
            grads.view_mut(wn_idx).scaled_add(1.0, &lc.aux.t().dot(d_out));
            need_input_grad.then(|| {
                let wn = params.view(wn_idx);
                d_out.dot(&w.t()) + adj.transpose_matmul(d_out.dot(&wn.t()).view())
            })
        }
        Arch::Gat => {
            let src_idx = slots.att_src.expect("gat attention");
            let dst_idx = slots.att_dst.expect("gat attention");
            let a_src = params.view(src_idx).row(0).to_owned();
            let a_dst = params.view(dst_idx).row(0).to_owned();
            let z = &lc.aux;
            let n = adj.dim();
            let mut dz = Array2::<f64>::zeros(z.raw_dim());
            let mut ds = Array1::<f64>::zeros(n);
            let mut dt = Array1::<f64>::zeros(n);
            let mut k = 0;
            let mut d_alpha = Vec::new();
            for i in 0..n {
                let start = k;
                d_alpha.clear();
                let d_row = d_out.row(i);
                for (j, _) in adj.row(i) {
                    d_alpha.push(d_row.dot(&z.row(j)));
                    dz.row_mut(j).scaled_add(lc.alpha[k], &d_row);
                    k += 1;
                }
                let centre: f64 = d_alpha.iter().zip(&lc.alpha[start..k]).map(|(d, a)| d * a).sum();
                for (off, (j, _)) in adj.row(i).enumerate() {
                    let e = start + off;
                    let d_raw = lc.alpha[e] * (d_alpha[off] - centre) * leaky_grad(lc.raw[e]);
                    ds[i] += d_raw;
                    dt[j] += d_raw;
                }
            }
            for i in 0..n {
                let mut row = dz.row_mut(i);
                row.scaled_add(ds[i], &a_src);
                row.scaled_add(dt[i], &a_dst);
            }
            grads.view_mut(src_idx).row_mut(0).scaled_add(1.0, &z.t().dot(&ds));
            grads.view_mut(dst_idx).row_mut(0).scaled_add(1.0, &z.t().dot(&dt));
            grads.view_mut(slots.weight).scaled_add(1.0, &lc.input.t().dot(&dz));
            need_input_grad.then(|| dz.dot(&w.t()))
        }
    }
}

/// Row-wise softmax.
pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    probs
}
