//! Result files: `results.csv`, `summary.json` and `config.resolved.toml`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::{MetricRow, ResultsTable};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_ECHO_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation over all rows of the metric.
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSummary>,
}

pub fn summarize(name: &str, seeds: &[u64], table: &ResultsTable) -> Summary {
    let arms = table
        .arms
        .iter()
        .map(|arm| {
            let mut by_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for row in table.rows.iter().filter(|r| &r.arm == arm) {
                by_metric.entry(row.metric.clone()).or_default().push(row.value);
            }
            let metrics = by_metric
                .into_iter()
                .map(|(m, v)| {
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                    (m, MetricSummary { mean, std, count: v.len() })
                })
                .collect();
            ArmSummary { arm: arm.clone(), metrics }
        })
        .collect();
    Summary { name: name.to_string(), seeds: seeds.to_vec(), arms }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    arm: String,
    seed: u64,
    round: usize,
    client: String,
    metric: String,
    value: f64,
}

pub fn write_results_csv(table: &ResultsTable, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &table.rows {
        w.serialize(CsvRow {
            arm: r.arm.clone(),
            seed: r.seed,
            round: r.round,
            client: r.client.clone(),
            metric: r.metric.clone(),
            value: r.value,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        let r: CsvRow = rec?;
        rows.push(MetricRow { arm: r.arm, seed: r.seed, round: r.round, client: r.client, metric: r.metric, value: r.value });
    }
    Ok(rows)
}

/// Writes the three result files into `out_dir`, creating it if needed.
pub fn emit_results(table: &ResultsTable, config: &ExperimentConfig, out_dir: &Path) -> Result<Summary> {
    fs::create_dir_all(out_dir)?;
    write_results_csv(table, fs::File::create(out_dir.join(RESULTS_FILE))?)?;
    let summary = summarize(&config.name, &config.seeds, table);
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(out_dir.join(SUMMARY_FILE), json)?;
    fs::write(out_dir.join(CONFIG_ECHO_FILE), config.to_toml_string()?)?;
    Ok(summary)
}
