//! Distribution comparison and embedding-variance reporting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// Per-client attack quality summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cos_sim: f64,
    pub js_div: f64,
    pub err: f64,
    pub variance_of_i: f64,
    pub normalized_variance: f64,
}

/// `dot(a, b) / (‖a‖ ‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UndefinedMetric(format!("length {} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedMetric("cosine similarity of a zero vector".into()));
    }
    Ok(dot / (na * nb))
}

/// Jensen–Shannon divergence with base-2 logarithms, so the result lies in
/// `[0, 1]`. Terms with a zero weight contribute nothing.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::UndefinedMetric(format!("length {} vs {}", p.len(), q.len())));
    }
    for (name, d) in [("first", p), ("second", q)] {
        if d.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::UndefinedMetric(format!("{name} distribution has a negative entry")));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::UndefinedMetric(format!("{name} distribution sums to {s}")));
        }
    }
    let half_kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (2.0 * x / (x + y)).log2())
            .sum::<f64>()
            / 2.0
    };
    Ok((half_kl(p, q) + half_kl(q, p)).clamp(0.0, 1.0))
}

/// Mean absolute deviation of `values` from their mean.
pub fn compute_err(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = mean(values);
    values.iter().map(|v| (v - mean).abs()).sum::<f64>() / values.len() as f64
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

/// Min-max scaling to `[0, 1]`; all-equal inputs map to zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// One row of [`variance_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthVariance {
    pub depth: usize,
    pub variance: f64,
    pub normalized: f64,
}

/// Population variance of `I` per depth, min-max scaled across depths.
pub fn variance_report(samples: &[(usize, Vec<f64>)]) -> Result<Vec<DepthVariance>> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("variance report needs at least two depths".into()));
    }
    let vars: Vec<f64> = samples.iter().map(|(_, i)| variance(i)).collect();
    let norm = min_max_normalize(&vars);
    Ok(samples
        .iter()
        .zip(vars.iter().zip(norm))
        .map(|((depth, _), (&variance, normalized))| DepthVariance { depth: *depth, variance, normalized })
        .collect())
}

/// Fractional ranks (ties share their average rank), 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::UndefinedMetric("spearman needs two equal-length series of length ≥ 2".into()));
    }
    let rho = pearson(&ranks(a), &ranks(b));
    if rho.is_nan() {
        return Err(Error::UndefinedMetric("spearman of a constant series".into()));
    }
    Ok(rho)
}

/// Normalises nonnegative counts to a probability vector.
pub fn to_distribution(counts: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) || counts.iter().any(|&c| c < 0.0) {
        return Err(Error::UndefinedMetric("counts must be nonnegative with a positive sum".into()));
    }
    Ok(counts.iter().map(|c| c / total).collect())
}
