//! CSV ingestion and export.
//!
//! `nodes.csv` has header `id,label,f0,...,f{f-1}` with an optional `train`
//! column (0/1) between `label` and the first feature; when it is absent
//! every node is a training node. `edges.csv` has header `src,dst` and
//! refers to node ids from `nodes.csv`.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use ndarray::Array2;

use super::Graph;
use crate::error::{Error, Result};

const NODES_FILE: &str = "nodes.csv";
const EDGES_FILE: &str = "edges.csv";

fn open(path: &Path) -> Result<csv::Reader<File>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(csv::ReaderBuilder::new().flexible(true).from_path(path)?)
}

fn malformed(file: &str, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow { file: file.to_string(), line, reason: reason.into() }
}

/// Reads `nodes.csv` and `edges.csv` from `dir`.
///
/// Node ids are remapped to `0..n` in file order. Self-loops and repeated
/// edges are dropped. The class count is one more than the largest label.
pub fn load_graph(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    let mut nodes = open(&dir.join(NODES_FILE))?;
    let header = nodes.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "label" {
        return Err(malformed(NODES_FILE, 1, "header must start with `id,label`"));
    }
    let has_train = cols.get(2) == Some(&"train");
    let first_feature = if has_train { 3 } else { 2 };
    let width = cols.len() - first_feature;

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut raw_labels = Vec::new();
    let mut train = Vec::new();
    let mut values = Vec::new();
    for record in nodes.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != cols.len() {
            return Err(Error::RaggedFeatures {
                file: NODES_FILE.into(),
                line,
                expected: width,
                found: record.len().saturating_sub(first_feature),
            });
        }
        let id = record[0].to_string();
        if ids.insert(id.clone(), ids.len()).is_some() {
            return Err(Error::DuplicateNode { file: NODES_FILE.into(), line, node: id });
        }
        let label: i64 = record[1]
            .trim()
            .parse()
            .map_err(|_| malformed(NODES_FILE, line, format!("label `{}` is not an integer", &record[1])))?;
        raw_labels.push((label, line));
        if has_train {
            train.push(match record[2].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(malformed(NODES_FILE, line, format!("train flag `{other}`"))),
            });
        } else {
            train.push(true);
        }
        for field in record.iter().skip(first_feature) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(NODES_FILE, line, format!("feature `{field}` is not a number")))?;
            values.push(v);
        }
    }

    let max_label = raw_labels.iter().map(|&(y, _)| y).max().unwrap_or(0);
    let num_classes = (max_label + 1).max(2) as usize;
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (y, line) in raw_labels {
        if y < 0 || y as usize >= num_classes {
            return Err(Error::LabelOutOfRange { file: NODES_FILE.into(), line, label: y, num_classes });
        }
        labels.push(y as usize);
    }

    let mut edge_reader = open(&dir.join(EDGES_FILE))?;
    let header = edge_reader.headers()?.clone();
    if header.len() != 2 || &header[0] != "src" || &header[1] != "dst" {
        return Err(malformed(EDGES_FILE, 1, "header must be `src,dst`"));
    }
    let mut edges = Vec::new();
    for record in edge_reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(malformed(EDGES_FILE, line, format!("expected 2 fields, found {}", record.len())));
        }
        let lookup = |field: &str| {
            ids.get(field).copied().ok_or_else(|| Error::DanglingEndpoint {
                file: EDGES_FILE.into(),
                line,
                node: field.to_string(),
            })
        };
        edges.push((lookup(&record[0])?, lookup(&record[1])?));
    }

    let n = labels.len();
    let features = Array2::from_shape_vec((n, width), values)
        .map_err(|e| Error::InvalidGraph(e.to_string()))?;
    Graph::new(features, edges, labels, num_classes, train)
}

/// Writes `g` as `nodes.csv` / `edges.csv` under `dir` (created if needed).
///
/// Feature values use the shortest representation that parses back to the
/// same `f64`, so `load_graph(save_graph(g)) == g` whenever every class
/// below `num_classes` is present.
pub fn save_graph(g: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(NODES_FILE))?;
    let mut header = vec!["id".to_string(), "label".into(), "train".into()];
    header.extend((0..g.feature_dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (i, row) in g.features().rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string(), g.labels()[i].to_string()];
        rec.push(if g.train_mask()[i] { "1" } else { "0" }.into());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(EDGES_FILE))?;
    w.write_record(["src", "dst"])?;
    for &(a, b) in g.edges() {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, nodes: &str, edges: &str) {
        std::fs::write(dir.join(NODES_FILE), nodes).unwrap();
        std::fs::write(dir.join(EDGES_FILE), edges).unwrap();
    }

    #[test]
    fn duplicate_directions_collapse() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "id,label,f0\na,0,1.5\nb,1,2\n", "src,dst\na,b\nb,a\na,a\n");
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.num_classes(), 2);
        assert!(g.train_mask().iter().all(|&m| m));
    }

    #[test]
    fn dangling_endpoint_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut nodes = String::from("id,label,f0\n");
        for i in 0..10 {
            nodes.push_str(&format!("{i},{},0\n", i % 2));
        }
        write(dir.path(), &nodes, "src,dst\n0,1\n3,99\n");
        match load_graph(dir.path()) {
            Err(Error::DanglingEndpoint { line, node, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(node, "99");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_and_bad_labels() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "id,label,f0,f1\n0,0,1,2\n1,1,3\n", "src,dst\n");
        assert!(matches!(load_graph(dir.path()), Err(Error::RaggedFeatures { line: 3, .. })));

        write(dir.path(), "id,label,f0\n0,0,1\n1,-1,3\n", "src,dst\n");
        assert!(matches!(load_graph(dir.path()), Err(Error::LabelOutOfRange { line: 3, label: -1, .. })));

        write(dir.path(), "id,label,f0\n0,0,1\n1,x,3\n", "src,dst\n");
        assert!(matches!(load_graph(dir.path()), Err(Error::MalformedRow { line: 3, .. })));
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(NODES_FILE), "id,label,f0\n0,0,1\n").unwrap();
        assert!(matches!(load_graph(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn train_column_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "id,label,train,f0\n0,0,1,1\n1,1,0,3\n", "src,dst\n");
        let g = load_graph(dir.path()).unwrap();
        assert_eq!(g.train_mask(), &[true, false]);
        assert_eq!(g.feature_dim(), 1);
    }
}
