//! Datasets on disk, the synthetic stochastic block model, and per-epoch
//! metrics files.
//!
//! A dataset directory holds:
//!
//! * `edges.tsv`: `u<TAB>v` per line, 0-based ids, `#` comments
//! * `features.csv`: one comma-separated feature row per node, in id order
//! * `labels.csv`: one comma-separated one-hot row per node, in id order
//! * `split.json`: `{"train": [ids], "test": [ids]}`
//! * `manifest.json`: node, train, test, class and feature counts

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::{self, Graph};
use crate::nn::LabelMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub nodes: usize,
    pub train: usize,
    pub test: usize,
    pub classes: usize,
    pub features: usize,
}

impl Manifest {
    pub const AMAZON_COMPUTERS: Manifest = Manifest {
        nodes: 13752,
        train: 1000,
        test: 1000,
        classes: 10,
        features: 767,
    };

    pub const AMAZON_PHOTO: Manifest = Manifest {
        nodes: 7650,
        train: 800,
        test: 1000,
        classes: 8,
        features: 745,
    };
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: DenseMatrix,
    pub train_mask: LabelMask,
    pub test_mask: LabelMask,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.n()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            nodes: self.num_nodes(),
            train: self.train_mask.len(),
            test: self.test_mask.len(),
            classes: self.num_classes(),
            features: self.num_features(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.features.rows() != n || self.labels.rows() != n {
            return Err(Error::InvalidDataset(format!(
                "{n} nodes but {} feature rows and {} label rows",
                self.features.rows(),
                self.labels.rows()
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        for i in 0..n {
            let row = self.labels.row(i);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::InvalidDataset(format!(
                    "label row {i} is not one-hot"
                )));
            }
        }
        for ids in [self.train_mask.ids(), self.test_mask.ids()] {
            if let Some(&last) = ids.last() {
                if last >= n {
                    return Err(Error::InvalidDataset(format!(
                        "split id {last} out of range for {n} nodes"
                    )));
                }
            }
        }
        if let Some(&id) = self
            .train_mask
            .ids()
            .iter()
            .find(|&&id| self.test_mask.contains(id))
        {
            return Err(Error::InvalidDataset(format!(
                "node {id} is in both the train and the test split"
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn read_csv_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    DenseMatrix::from_rows(&rows).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })
}

fn write_csv_matrix(m: &DenseMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let features = read_csv_matrix(&dir.join("features.csv"))?;
    let labels = read_csv_matrix(&dir.join("labels.csv"))?;
    let graph = graph::read_edge_list(&dir.join("edges.tsv"), Some(features.rows()))?;
    let split: Split = serde_json::from_str(&fs::read_to_string(dir.join("split.json"))?)?;
    let n = graph.n();
    let train_mask = LabelMask::new(split.train, n)?;
    let test_mask = LabelMask::new(split.test, n)?;
    let dataset = Dataset {
        graph,
        features,
        labels,
        train_mask,
        test_mask,
    };
    dataset.validate()?;
    let found = dataset.manifest();
    if found != manifest {
        return Err(Error::InvalidDataset(format!(
            "counts {found:?} do not match manifest {manifest:?}"
        )));
    }
    Ok(dataset)
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    graph::write_edge_list(&dataset.graph, &dir.join("edges.tsv"))?;
    write_csv_matrix(&dataset.features, &dir.join("features.csv"))?;
    write_csv_matrix(&dataset.labels, &dir.join("labels.csv"))?;
    let split = Split {
        train: dataset.train_mask.ids().to_vec(),
        test: dataset.test_mask.ids().to_vec(),
    };
    fs::write(dir.join("split.json"), serde_json::to_string(&split)?)?;
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&dataset.manifest())?,
    )?;
    Ok(())
}

/// Parameters of the stochastic block model generator. Block `b` holds
/// nodes `b·size .. (b+1)·size` and its label is `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub communities: usize,
    pub nodes_per_community: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Length of the class-mean vector; noise has unit variance per entry.
    pub signal: f64,
    /// Labelled training nodes per block; the rest form the test split.
    pub train_per_community: usize,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            communities: 4,
            nodes_per_community: 50,
            p_in: 0.2,
            p_out: 0.01,
            feature_dim: 16,
            signal: 1.0,
            train_per_community: 10,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.communities == 0 || self.nodes_per_community == 0 {
            return Err(Error::InvalidConfig("SBM needs at least one node".into()));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")));
            }
        }
        if self.communities > 1 && self.p_in <= self.p_out {
            return Err(Error::InvalidConfig(
                "p_in must exceed p_out for community structure".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.train_per_community > self.nodes_per_community {
            return Err(Error::InvalidConfig(
                "more training nodes than block members".into(),
            ));
        }
        Ok(())
    }
}

pub fn generate_sbm(spec: &SbmSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = spec.nodes_per_community;
    let n = spec.communities * size;
    let block = |v: usize| v / size;

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block(u) == block(v) { spec.p_in } else { spec.p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::from_edges(n, &edges)?;

    let means: Vec<Vec<f64>> = (0..spec.communities)
        .map(|_| {
            let raw: Vec<f64> = (0..spec.feature_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            raw.into_iter().map(|v| spec.signal * v / norm).collect()
        })
        .collect();
    let features = DenseMatrix::from_fn(n, spec.feature_dim, |i, j| {
        means[block(i)][j] + rng.sample::<f64, _>(StandardNormal)
    });
    let labels = DenseMatrix::from_fn(n, spec.communities, |i, c| {
        if block(i) == c {
            1.0
        } else {
            0.0
        }
    });

    let mut train = Vec::new();
    let mut test = Vec::new();
    for b in 0..spec.communities {
        let mut ids: Vec<usize> = (b * size..(b + 1) * size).collect();
        ids.shuffle(&mut rng);
        let (tr, te) = ids.split_at(spec.train_per_community);
        train.extend_from_slice(tr);
        test.extend_from_slice(te);
    }
    let dataset = Dataset {
        graph,
        features,
        labels,
        train_mask: LabelMask::new(train, n)?,
        test_mask: LabelMask::new(test, n)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// One row of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub method: String,
    pub train_acc: f64,
    pub test_acc: f64,
    pub loss: f64,
    pub train_time_s: f64,
    pub comm_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    pub fn total_train_time(&self) -> f64 {
        self.epochs.iter().map(|e| e.train_time_s).sum()
    }

    pub fn total_comm_time(&self) -> f64 {
        self.epochs.iter().map(|e| e.comm_time_s).sum()
    }
}

const METRICS_HEADER: &str = "epoch,method,train_acc,test_acc,loss,train_time_s,comm_time_s";

fn encode_rows(rows: &[EpochMetrics], with_header: bool) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    if with_header {
        writer.write_record(METRICS_HEADER.split(','))?;
    }
    for row in rows {
        writer.serialize(row)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Io(e.into_error()))
}

fn replace_atomically(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes the run as a fresh CSV file, replacing any existing one.
pub fn write_metrics(run: &RunMetrics, path: &Path) -> Result<()> {
    replace_atomically(path, &encode_rows(&run.epochs, true)?)
}

/// Appends rows to a metrics file, creating it with a header if needed.
pub fn append_metrics(rows: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut contents = match fs::read(path) {
        Ok(existing) => existing,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => encode_rows(&[], true)?,
        Err(e) => return Err(e.into()),
    };
    contents.extend(encode_rows(rows, false)?);
    replace_atomically(path, &contents)
}

pub fn read_metrics(path: &Path) -> Result<RunMetrics> {
    let mut reader = csv::Reader::from_path(path)?;
    let epochs = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(RunMetrics { epochs })
}
