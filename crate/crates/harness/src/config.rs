//! Experiment configuration: TOML schema, desk-scale defaults and sweep
//! expansion.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fgl_core::attack::AttackConfig;
use fgl_core::defense::DefenseConfig;
use fgl_core::fedsim::WeightMode;
use fgl_core::gnn::Arch;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
    /// Comma-separated substrings; only arms whose name contains one run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<String>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: default_name(),
            seeds: default_seeds(),
            dataset: DatasetConfig::default(),
            model: ModelSection::default(),
            federation: FederationConfig::default(),
            attack: AttackSection::default(),
            defense: DefenseConfig::default(),
            sweep: SweepAxes::default(),
            arms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default = "d_nodes")]
        nodes: usize,
        #[serde(default = "d_classes")]
        classes: usize,
        #[serde(default = "d_feature_dim")]
        feature_dim: usize,
        /// Defaults to probabilities proportional to `classes, classes−1, …, 1`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label_probs: Option<Vec<f64>>,
        #[serde(default = "d_homophily")]
        homophily: f64,
        #[serde(default = "d_avg_degree")]
        avg_degree: f64,
        /// Fixes the graph across seeds; otherwise each seed draws its own.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Import {
        path: PathBuf,
    },
}

fn d_nodes() -> usize {
    3000
}
fn d_classes() -> usize {
    5
}
fn d_feature_dim() -> usize {
    32
}
fn d_homophily() -> f64 {
    0.8
}
fn d_avg_degree() -> f64 {
    6.0
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            nodes: d_nodes(),
            classes: d_classes(),
            feature_dim: d_feature_dim(),
            label_probs: None,
            homophily: d_homophily(),
            avg_degree: d_avg_degree(),
            seed: None,
        }
    }
}

/// Label probabilities used when a synthetic dataset does not give any.
pub fn default_label_probs(classes: usize) -> Vec<f64> {
    let total = (classes * (classes + 1) / 2) as f64;
    (1..=classes).rev().map(|c| c as f64 / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Arch,
    pub gnn_layers: usize,
    pub hidden_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { arch: Arch::Gcn, gnn_layers: 2, hidden_dim: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Nodes,
    Links,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weights: WeightMode,
    pub task: Task,
    /// Link task: fraction of each client's training pairs that are edges.
    pub positive_fraction: f64,
    /// Link task: training pairs per client (capped by available edges).
    pub link_pairs: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            rounds: 20,
            epochs: 5,
            lr: 0.05,
            weights: WeightMode::Uniform,
            task: Task::Nodes,
            positive_fraction: 0.5,
            link_pairs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub enabled: bool,
    pub clip_threshold: f64,
    pub dummy_count: usize,
    pub dummy_std: f64,
    /// Attack rounds; empty means the middle round `⌈R/2⌉`.
    pub rounds: Vec<usize>,
    pub restore_after_attack: bool,
    /// Link task: random dummy pairs fed through the clipped model.
    pub dummy_pairs: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            enabled: true,
            clip_threshold: a.clip_threshold,
            dummy_count: a.dummy_count,
            dummy_std: a.dummy_std,
            rounds: Vec::new(),
            restore_after_attack: a.restore_after_attack,
            dummy_pairs: 1000,
        }
    }
}

impl AttackSection {
    pub fn resolved_rounds(&self, total: usize) -> BTreeSet<usize> {
        if self.rounds.is_empty() {
            if total == 0 {
                BTreeSet::new()
            } else {
                BTreeSet::from([total.div_ceil(2)])
            }
        } else {
            self.rounds.iter().copied().collect()
        }
    }

    pub fn to_core(&self, total_rounds: usize) -> AttackConfig {
        AttackConfig {
            clip_threshold: self.clip_threshold,
            dummy_count: self.dummy_count,
            dummy_std: self.dummy_std,
            attack_rounds: self.resolved_rounds(total_rounds),
            restore_after_attack: self.restore_after_attack,
        }
    }
}

/// Swept values; every non-empty axis multiplies the arm count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub arch: Vec<Arch>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub clip_threshold: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub gnn_layers: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub clients: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dummy_std: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub noise_multiplier: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub label_dp_epsilon: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub attack_enabled: Vec<bool>,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    /// `axis=value` pairs joined by `/`; `base` when nothing is swept.
    pub name: String,
    pub config: ExperimentConfig,
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Checks every field; errors name the offending path.
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, why: String| Err(HarnessError::Config(format!("{path}: {why}")));
        if self.seeds.is_empty() {
            return bad("seeds", "must not be empty".into());
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return bad("seeds", "must be distinct".into());
        }
        match &self.dataset {
            DatasetConfig::Synthetic { nodes, classes, feature_dim, label_probs, homophily, avg_degree, .. } => {
                if *classes < 2 {
                    return bad("dataset.classes", format!("must be >= 2, got {classes}"));
                }
                if *nodes < *classes {
                    return bad("dataset.nodes", format!("must be >= classes, got {nodes}"));
                }
                if *feature_dim == 0 {
                    return bad("dataset.feature_dim", "must be >= 1".into());
                }
                if let Some(p) = label_probs {
                    if p.len() != *classes {
                        return bad("dataset.label_probs", format!("needs {classes} entries, got {}", p.len()));
                    }
                    if p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return bad("dataset.label_probs", "must be a probability vector".into());
                    }
                }
                if !(0.0..=1.0).contains(homophily) {
                    return bad("dataset.homophily", format!("must lie in [0, 1], got {homophily}"));
                }
                if !(*avg_degree > 0.0) || *avg_degree >= *nodes as f64 {
                    return bad("dataset.avg_degree", format!("must lie in (0, nodes), got {avg_degree}"));
                }
            }
            DatasetConfig::Import { path } => {
                if path.as_os_str().is_empty() {
                    return bad("dataset.path", "must not be empty".into());
                }
            }
        }
        if !(1..=3).contains(&self.model.gnn_layers) {
            return bad("model.gnn_layers", format!("must be 1, 2 or 3, got {}", self.model.gnn_layers));
        }
        if self.model.hidden_dim == 0 {
            return bad("model.hidden_dim", "must be >= 1".into());
        }
        let f = &self.federation;
        if f.clients == 0 {
            return bad("federation.clients", "must be >= 1".into());
        }
        if f.epochs == 0 {
            return bad("federation.epochs", "must be >= 1".into());
        }
        if !(f.lr > 0.0 && f.lr.is_finite()) {
            return bad("federation.lr", format!("must be > 0, got {}", f.lr));
        }
        if !(f.positive_fraction > 0.0 && f.positive_fraction <= 1.0) {
            return bad("federation.positive_fraction", format!("must lie in (0, 1], got {}", f.positive_fraction));
        }
        if f.task == Task::Links && f.link_pairs == 0 {
            return bad("federation.link_pairs", "must be >= 1".into());
        }
        let a = &self.attack;
        if !(a.clip_threshold > 0.0) {
            return bad("attack.clip_threshold", format!("must be > 0, got {}", a.clip_threshold));
        }
        if a.dummy_count == 0 {
            return bad("attack.dummy_count", "must be >= 1".into());
        }
        if !(a.dummy_std >= 0.0 && a.dummy_std.is_finite()) {
            return bad("attack.dummy_std", format!("must be >= 0, got {}", a.dummy_std));
        }
        if let Some(&r) = a.rounds.iter().find(|&&r| r == 0 || r > f.rounds) {
            return bad("attack.rounds", format!("round {r} outside [1, {}]", f.rounds));
        }
        if f.task == Task::Links && a.dummy_pairs == 0 {
            return bad("attack.dummy_pairs", "must be >= 1".into());
        }
        // swept values fill in settings the base section may leave unset
        let mut defense = self.defense.clone();
        if let Some(&v) = self.sweep.noise_multiplier.first() {
            defense.dp_noise_multiplier = Some(v);
        }
        if let Some(&v) = self.sweep.label_dp_epsilon.first() {
            defense.label_dp_epsilon = Some(v);
        }
        defense.validate().map_err(|e| HarnessError::Config(format!("defense: {e}")))?;
        if f.task == Task::Links && self.defense != DefenseConfig::default() {
            return bad("defense", "defenses apply to the node task only".into());
        }

        let s = &self.sweep;
        if s.clip_threshold.iter().any(|&c| !(c > 0.0)) {
            return bad("sweep.clip_threshold", "values must be > 0".into());
        }
        if s.epochs.contains(&0) {
            return bad("sweep.epochs", "values must be >= 1".into());
        }
        if s.gnn_layers.iter().any(|d| !(1..=3).contains(d)) {
            return bad("sweep.gnn_layers", "values must be 1, 2 or 3".into());
        }
        if s.clients.contains(&0) {
            return bad("sweep.clients", "values must be >= 1".into());
        }
        if s.dummy_std.iter().any(|&v| !(v >= 0.0)) {
            return bad("sweep.dummy_std", "values must be >= 0".into());
        }
        if s.noise_multiplier.iter().any(|&v| !(v >= 0.0)) {
            return bad("sweep.noise_multiplier", "values must be >= 0".into());
        }
        if !s.noise_multiplier.is_empty() && self.defense.dp_clip_norm.is_none() {
            return bad("sweep.noise_multiplier", "needs defense.dp_clip_norm".into());
        }
        if s.label_dp_epsilon.iter().any(|&v| !(v > 0.0)) {
            return bad("sweep.label_dp_epsilon", "values must be > 0".into());
        }
        if !s.label_dp_epsilon.is_empty() && !s.noise_multiplier.is_empty() {
            return bad("sweep", "label_dp_epsilon and noise_multiplier cannot be swept together".into());
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, in axis declaration order.
    pub fn arms(&self) -> Result<Vec<Arm>> {
        let mut base = self.clone();
        base.sweep = SweepAxes::default();
        base.arms = None;
        let mut arms = vec![(Vec::<String>::new(), base)];
        fn expand<T: Clone>(
            arms: Vec<(Vec<String>, ExperimentConfig)>,
            values: &[T],
            label: impl Fn(&T) -> String,
            set: impl Fn(&mut ExperimentConfig, &T),
        ) -> Vec<(Vec<String>, ExperimentConfig)> {
            if values.is_empty() {
                return arms;
            }
            let mut out = Vec::with_capacity(arms.len() * values.len());
            for (names, cfg) in arms {
                for v in values {
                    let mut n = names.clone();
                    n.push(label(v));
                    let mut c = cfg.clone();
                    set(&mut c, v);
                    out.push((n, c));
                }
            }
            out
        }
        let s = &self.sweep;
        arms = expand(arms, &s.arch, |v| format!("arch={v}"), |c, v| c.model.arch = *v);
        arms = expand(arms, &s.clip_threshold, |v| format!("clip_threshold={}", fmt_f64(*v)), |c, v| {
            c.attack.clip_threshold = *v
        });
        arms = expand(arms, &s.epochs, |v| format!("epochs={v}"), |c, v| c.federation.epochs = *v);
        arms = expand(arms, &s.gnn_layers, |v| format!("gnn_layers={v}"), |c, v| c.model.gnn_layers = *v);
        arms = expand(arms, &s.clients, |v| format!("clients={v}"), |c, v| c.federation.clients = *v);
        arms = expand(arms, &s.dummy_std, |v| format!("dummy_std={}", fmt_f64(*v)), |c, v| c.attack.dummy_std = *v);
        arms = expand(arms, &s.noise_multiplier, |v| format!("noise_multiplier={}", fmt_f64(*v)), |c, v| {
            c.defense.dp_noise_multiplier = Some(*v)
        });
        arms = expand(arms, &s.label_dp_epsilon, |v| format!("label_dp_epsilon={}", fmt_f64(*v)), |c, v| {
            c.defense.label_dp_epsilon = Some(*v)
        });
        arms = expand(arms, &s.attack_enabled, |v| format!("attack_enabled={v}"), |c, v| c.attack.enabled = *v);
        let arms = arms
            .into_iter()
            .map(|(names, config)| {
                config.validate().map_err(|e| match e {
                    HarnessError::Config(m) => HarnessError::Config(format!("arm {}: {m}", names.join("/"))),
                    other => other,
                })?;
                let name = if names.is_empty() { "base".to_string() } else { names.join("/") };
                Ok(Arm { name, config })
            })
            .collect::<Result<Vec<_>>>()?;
        match &self.arms {
            Some(filter) => filter_arms(arms, filter),
            None => Ok(arms),
        }
    }
}

/// Keeps arms whose name contains any of the comma-separated patterns.
pub fn filter_arms(arms: Vec<Arm>, filter: &str) -> Result<Vec<Arm>> {
    let patterns: Vec<&str> = filter.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if patterns.is_empty() {
        return Ok(arms);
    }
    let kept: Vec<Arm> = arms.into_iter().filter(|a| patterns.iter().any(|p| a.name.contains(p))).collect();
    if kept.is_empty() {
        return Err(HarnessError::Config(format!("--arms {filter:?} matches no arm")));
    }
    Ok(kept)
}
