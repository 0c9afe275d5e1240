//! File formats: JSON-lines datasets and samples, calibration CSV.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::GraphInstance;
use crate::posterior::AtomDataset;
use crate::simplex::{CategoricalDist, Layout};
use crate::voronoi::CalibrationPoint;

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("{}:{}", path.display(), lineno + 1),
            source,
        })?);
    }
    Ok(out)
}

/// `{"n": 4, "edges": [[0, 1], [1, 2]], "node_cats": [0, 0, 0, 0]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub node_cats: Vec<usize>,
}

impl GraphRecord {
    pub fn from_graph(g: &GraphInstance) -> Result<Self> {
        if g.edge_cats().iter().any(|c| *c > 1) {
            return Err(invalid("the JSON-lines graph format stores only plain edges"));
        }
        Ok(Self {
            n: g.n(),
            edges: g.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            node_cats: g.node_cats().to_vec(),
        })
    }

    pub fn to_graph(&self) -> Result<GraphInstance> {
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let g = GraphInstance::from_edges(self.n, &edges)?;
        if self.node_cats.is_empty() {
            return Ok(g);
        }
        GraphInstance::new(self.n, self.node_cats.clone(), g.edge_cats().to_vec())
    }
}

pub fn write_graphs(path: &Path, graphs: &[GraphInstance]) -> Result<()> {
    let records = graphs.iter().map(GraphRecord::from_graph).collect::<Result<Vec<_>>>()?;
    write_jsonl(path, &records)
}

pub fn read_graphs(path: &Path) -> Result<Vec<GraphInstance>> {
    read_jsonl::<GraphRecord>(path)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.to_graph()
                .map_err(|e| invalid(format!("{}: record {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// `{"atom": [0, 2, 1], "weight": 0.25}`; `weight` defaults to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomRecord {
    pub atom: Vec<usize>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

pub fn write_flat_dataset(path: &Path, dataset: &AtomDataset) -> Result<()> {
    let records: Vec<AtomRecord> = dataset
        .atoms()
        .iter()
        .zip(dataset.weights().probs())
        .map(|(a, w)| AtomRecord {
            atom: a.clone(),
            weight: *w,
        })
        .collect();
    write_jsonl(path, &records)
}

/// Reads a flat dataset with `k` categories per dimension (inferred as
/// `max + 1`, at least 2, when `None`). Repeated atoms are merged.
pub fn read_flat_dataset(path: &Path, k: Option<usize>) -> Result<AtomDataset> {
    let records: Vec<AtomRecord> = read_jsonl(path)?;
    let first = records
        .first()
        .ok_or_else(|| invalid(format!("{}: dataset is empty", path.display())))?;
    let len = first.atom.len();
    if records.iter().any(|r| r.atom.len() != len) {
        return Err(invalid(format!("{}: atoms differ in length", path.display())));
    }
    let k = k.unwrap_or_else(|| records.iter().flat_map(|r| r.atom.iter()).max().map_or(2, |m| (m + 1).max(2)));
    let layout = Layout::flat(len, k)?;
    let mut merged: std::collections::BTreeMap<Vec<usize>, f64> = Default::default();
    for r in &records {
        if !(r.weight >= 0.0) || !r.weight.is_finite() {
            return Err(invalid(format!("{}: weights must be finite and >= 0", path.display())));
        }
        *merged.entry(r.atom.clone()).or_default() += r.weight;
    }
    let (atoms, weights): (Vec<Vec<usize>>, Vec<f64>) = merged.into_iter().unzip();
    AtomDataset::new(layout, atoms, CategoricalDist::from_weights(&weights)?)
}

/// One decoded sample of flat categorical data: `{"sample": [0, 2, 1]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample: Vec<usize>,
}

pub fn write_calibration_csv(path: &Path, points: &[CalibrationPoint]) -> Result<()> {
    let mut s = String::from("t,alpha,voronoi_prob\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.t, p.alpha, p.voronoi_prob));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_calibration_csv(path: &Path) -> Result<Vec<CalibrationPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("t,alpha,voronoi_prob") {
        return Err(invalid(format!("{}: missing calibration header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            match v.as_slice() {
                [t, alpha, p] => Ok(CalibrationPoint {
                    t: *t,
                    alpha: *alpha,
                    voronoi_prob: *p,
                }),
                _ => Err(invalid(format!("{}: expected three columns", path.display()))),
            }
        })
        .collect()
}

/// A loss trace as `step,loss` CSV.
pub fn write_loss_csv(path: &Path, trace: &[f64]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_dataset, Generator, GraphDatasetSpec};
    use crate::paths::NoiseSchedule;
    use crate::toy::toy_dataset;
    use crate::voronoi::calibration_curve;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("unside-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn graphs_round_trip() {
        let graphs = generate_dataset(&GraphDatasetSpec {
            generator: Generator::ErdosRenyi { p: 0.5 },
            n: 6,
            count: 10,
            seed: 1,
        })
        .unwrap();
        let p = tmp("graphs.jsonl");
        write_graphs(&p, &graphs).unwrap();
        assert_eq!(read_graphs(&p).unwrap(), graphs);
    }

    #[test]
    fn graph_record_parses_documented_shape() {
        let r: GraphRecord = serde_json::from_str(r#"{"n": 3, "edges": [[0, 1], [1, 2]], "node_cats": [0, 0, 0]}"#).unwrap();
        assert_eq!(r.to_graph().unwrap(), GraphInstance::path(3).unwrap());
        let bad: GraphRecord = serde_json::from_str(r#"{"n": 2, "edges": [[0, 5]]}"#).unwrap();
        assert!(bad.to_graph().is_err());
    }

    #[test]
    fn flat_dataset_round_trip() {
        let ds = toy_dataset();
        let p = tmp("flat.jsonl");
        write_flat_dataset(&p, &ds).unwrap();
        let back = read_flat_dataset(&p, Some(3)).unwrap();
        assert_eq!(back.layout(), ds.layout());
        for a in ds.atoms() {
            assert!((back.prob(a) - 0.25).abs() < 1e-12);
        }
        assert_eq!(read_flat_dataset(&p, None).unwrap().layout(), ds.layout());
    }

    #[test]
    fn calibration_round_trip() {
        let pts = calibration_curve(&NoiseSchedule::default(), 3, 7).unwrap();
        let p = tmp("cal.csv");
        write_calibration_csv(&p, &pts).unwrap();
        assert_eq!(read_calibration_csv(&p).unwrap(), pts);
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_graphs(Path::new("/nonexistent/graphs.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/graphs.jsonl"));
    }
}
