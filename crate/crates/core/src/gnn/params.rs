use std::sync::Arc;

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Arch, ModelConfig};
use crate::error::{Error, Result};
use crate::rng;

/// Name and shape of one tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tensor indices used by one message-passing layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub weight: usize,
    pub neigh_weight: Option<usize>,
    pub att_src: Option<usize>,
    pub att_dst: Option<usize>,
    pub bias: usize,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub cfg: ModelConfig,
    pub tensors: Vec<TensorSpec>,
    pub layers: Vec<LayerSlots>,
    pub fc: usize,
    pub len: usize,
}

impl Layout {
    fn new(cfg: ModelConfig) -> Self {
        let mut tensors = Vec::new();
        let mut len = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            tensors.push(TensorSpec { name, rows, cols, offset: len });
            len += rows * cols;
            tensors.len() - 1
        };
        let mut layers = Vec::with_capacity(cfg.gnn_layers);
        for h in 0..cfg.gnn_layers {
            let fan_in = if h == 0 { cfg.in_dim } else { cfg.hidden_dim };
            let d = cfg.hidden_dim;
            let weight = push(format!("gnn.{h}.weight"), fan_in, d);
            let neigh_weight = (cfg.arch == Arch::Sage).then(|| push(format!("gnn.{h}.neigh_weight"), fan_in, d));
            let (att_src, att_dst) = if cfg.arch == Arch::Gat {
                (Some(push(format!("gnn.{h}.att_src"), 1, d)), Some(push(format!("gnn.{h}.att_dst"), 1, d)))
            } else {
                (None, None)
            };
            let bias = push(format!("gnn.{h}.bias"), 1, d);
            layers.push(LayerSlots { weight, neigh_weight, att_src, att_dst, bias });
        }
        let fc = push("fc.weight".into(), cfg.hidden_dim, cfg.out_dim);
        Self { cfg, tensors, layers, fc, len }
    }
}

/// All trainable parameters of a model, stored as one flat buffer.
///
/// Message-passing layers hold a weight matrix (GraphSAGE adds a neighbour
/// weight, GAT two attention vectors) and a bias vector; the head is a
/// single `hidden_dim × out_dim` matrix without bias. Gradients, deltas and
/// noise share this type.
#[derive(Debug, Clone)]
pub struct ModelParams {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.values == other.values
    }
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layout = Arc::new(Layout::new(*cfg));
        let values = vec![0.0; layout.len];
        Self { layout, values }
    }

    /// Seeded initialisation. Weight matrices and attention vectors are
    /// uniform in `±sqrt(6 / (fan_in + fan_out))`; layer biases are uniform
    /// in `±1 / sqrt(fan_in)`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut params = Self::zeros(cfg);
        let mut r = rng::stream(seed, 0x1417);
        let layout = Arc::clone(&params.layout);
        for spec in &layout.tensors {
            let (fan_in, fan_out) = if spec.name.ends_with(".bias") {
                let h: usize = spec.name.split('.').nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
                let fan_in = if h == 0 { cfg.in_dim } else { cfg.hidden_dim };
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in params.slice_mut(spec) {
                    *v = r.gen_range(-bound..=bound);
                }
                continue;
            } else if spec.rows == 1 {
                (spec.cols, 1)
            } else {
                (spec.rows, spec.cols)
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in params.slice_mut(spec) {
                *v = r.gen_range(-bound..=bound);
            }
        }
        params
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.cfg
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    fn slice_mut(&mut self, spec: &TensorSpec) -> &mut [f64] {
        &mut self.values[spec.offset..spec.offset + spec.len()]
    }

    pub(crate) fn view(&self, idx: usize) -> ArrayView2<'_, f64> {
        let spec = &self.layout.tensors[idx];
        ArrayView2::from_shape((spec.rows, spec.cols), &self.values[spec.offset..spec.offset + spec.len()])
            .expect("layout shape")
    }

    pub(crate) fn view_mut(&mut self, idx: usize) -> ArrayViewMut2<'_, f64> {
        let spec = self.layout.tensors[idx].clone();
        ArrayViewMut2::from_shape((spec.rows, spec.cols), self.slice_mut(&spec)).expect("layout shape")
    }

    /// Tensor by name, if present.
    pub fn tensor(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let idx = self.layout.tensors.iter().position(|t| t.name == name)?;
        Some(self.view(idx))
    }

    /// The `hidden_dim × out_dim` head matrix.
    pub fn fc_weight(&self) -> ArrayView2<'_, f64> {
        self.view(self.layout.fc)
    }

    pub fn fc_weight_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let fc = self.layout.fc;
        self.view_mut(fc)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layout == other.layout
    }

    pub(crate) fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "parameter layouts differ ({} vs {} values)",
                self.len(),
                other.len()
            )))
        }
    }

    /// Global ℓ2 norm over every entry of every tensor.
    pub fn global_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { layout: Arc::clone(&self.layout), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination; panics on layout mismatch.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(self.same_shape(other), "parameter layout mismatch");
        Self {
            layout: Arc::clone(&self.layout),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// `self - other`
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_shape(other)?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_shape(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn to_named(&self) -> NamedTensors {
        NamedTensors {
            tensors: self
                .layout
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: [t.rows, t.cols],
                    values: self.values[t.offset..t.offset + t.len()].to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds parameters for `cfg` from a named-tensor container; every
    /// expected tensor must be present with the expected shape.
    pub fn from_named(cfg: &ModelConfig, named: &NamedTensors) -> Result<Self> {
        cfg.validate()?;
        let mut params = Self::zeros(cfg);
        if named.tensors.len() != params.layout.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                params.layout.tensors.len(),
                named.tensors.len()
            )));
        }
        let layout = Arc::clone(&params.layout);
        for spec in &layout.tensors {
            let t = named
                .tensors
                .iter()
                .find(|t| t.name == spec.name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor `{}`", spec.name)))?;
            if t.shape != [spec.rows, spec.cols] || t.values.len() != spec.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor `{}` has shape {:?}, expected [{}, {}]",
                    spec.name, t.shape, spec.rows, spec.cols
                )));
            }
            params.slice_mut(spec).copy_from_slice(&t.values);
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_named())?)
    }

    pub fn from_json(cfg: &ModelConfig, json: &str) -> Result<Self> {
        Self::from_named(cfg, &serde_json::from_str(json)?)
    }
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_named().serialize(serializer)
    }
}

/// Checkpoint layout: `{"tensors": [{"name", "shape": [rows, cols], "values"}]}`
/// with row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensors {
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}
