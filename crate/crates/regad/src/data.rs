//! Dataset bundles: the on-disk layout, a synthetic planted-anomaly
//! generator, stratified split assignment, and parameter checkpoints.
//!
//! A dataset directory holds four files:
//!   manifest   key/value text: counts, split seed, file checksums
//!   edges      one `i<TAB>j` canonical pair per line
//!   features   header `n d`, then one whitespace-separated row per node
//!   labels     one 0/1 per line
//!
//! A checkpoint is a text shape table, a `---` separator, a little-endian
//! f64 payload in name order, and a sha256 trailer over header + payload.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::graph::{build_graph, AttributedGraph, GraphError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file} line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("manifest mismatch: {0}")]
    Manifest(String),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("unsupported checkpoint version: {0}")]
    Version(String),
    #[error("invalid synthetic config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub graph: AttributedGraph,
    pub clean: Vec<u8>,
    pub splits: Vec<Split>,
    pub name: String,
    pub split_seed: u64,
}

impl DatasetBundle {
    pub fn anomaly_ratio(&self) -> f64 {
        self.clean.iter().filter(|&&c| c == 1).count() as f64 / self.clean.len() as f64
    }

    pub fn nodes_in(&self, split: Split) -> Vec<u32> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i as u32))
            .collect()
    }
}

/// Deterministic 40/20/40 train/val/test assignment, stratified per class
/// so small anomaly populations land proportionally in every split.
pub fn make_splits(seed: u64, clean: &[u8]) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![Split::Test; clean.len()];
    for class in [1u8, 0u8] {
        let mut ids: Vec<usize> = (0..clean.len()).filter(|&i| clean[i] == class).collect();
        ids.shuffle(&mut rng);
        let n_train = (ids.len() as f64 * 0.4).round() as usize;
        let n_val = (ids.len() as f64 * 0.2).round() as usize;
        for (k, &i) in ids.iter().enumerate() {
            splits[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    splits
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub feature_dim: usize,
    pub anomaly_ratio: f64,
    pub communities: usize,
    /// L2 magnitude of the anomaly attribute shift, in noise-sigma units.
    pub shift: f64,
    pub intra_edge_prob: f64,
    /// Fraction of each anomaly's edges rewired across communities.
    pub rewire_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            feature_dim: 16,
            anomaly_ratio: 0.05,
            communities: 10,
            shift: 7.0,
            intra_edge_prob: 0.02,
            rewire_fraction: 0.3,
            seed: 0,
        }
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Community-structured random graph with `round(n * r)` planted anomalies:
/// attribute outliers (mean-shifted features) whose edges are partially
/// rewired to foreign communities.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DatasetBundle, DataError> {
    if !(cfg.anomaly_ratio > 0.0 && cfg.anomaly_ratio < 0.5) {
        return Err(DataError::BadConfig(format!(
            "anomaly ratio {} outside (0, 0.5)",
            cfg.anomaly_ratio
        )));
    }
    if !(0.0..=1.0).contains(&cfg.intra_edge_prob) || !(0.0..=1.0).contains(&cfg.rewire_fraction) {
        return Err(DataError::BadConfig("probabilities must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, d, c) = (cfg.n, cfg.feature_dim, cfg.communities.max(1));
    let community = |i: usize| i * c / n;

    // Community means at unit scale: enough nuisance structure to matter
    // without drowning the anomaly shift.
    let mut means = vec![0.0; c * d];
    for m in means.iter_mut() {
        *m = normal(&mut rng);
    }
    let num_anomalies = (n as f64 * cfg.anomaly_ratio).round() as usize;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut clean = vec![0u8; n];
    for &i in &ids[..num_anomalies] {
        clean[i] = 1;
    }

    let per_dim_shift = cfg.shift / (d as f64).sqrt();
    let mut x = vec![0.0; n * d];
    for i in 0..n {
        let m = &means[community(i) * d..(community(i) + 1) * d];
        for k in 0..d {
            x[i * d + k] = m[k] + normal(&mut rng) + f64::from(clean[i]) * per_dim_shift;
        }
    }

    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for j in (i + 1)..n as u32 {
            if community(i as usize) == community(j as usize)
                && rng.random_bool(cfg.intra_edge_prob)
            {
                edges.push((i, j));
            }
        }
    }
    // Structural anomalies: rewire a fraction of anomaly edges to a random
    // node outside the anomaly's community.
    if cfg.rewire_fraction > 0.0 {
        for e in edges.iter_mut() {
            let (i, j) = *e;
            let anchor = if clean[i as usize] == 1 {
                Some(i)
            } else if clean[j as usize] == 1 {
                Some(j)
            } else {
                None
            };
            if let Some(a) = anchor {
                if rng.random_bool(cfg.rewire_fraction) {
                    loop {
                        let t = rng.random_range(0..n as u32);
                        if t != a && community(t as usize) != community(a as usize) {
                            *e = if a < t { (a, t) } else { (t, a) };
                            break;
                        }
                    }
                }
            }
        }
    }

    let graph = build_graph(n, d, &edges, x)?;
    let splits = make_splits(cfg.seed ^ 0x5eed_5047, &clean);
    Ok(DatasetBundle {
        graph,
        clean,
        splits,
        name: format!("synthetic-n{}-s{}", n, cfg.seed),
        split_seed: cfg.seed ^ 0x5eed_5047,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    out.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<(), DataError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>, DataError> {
    let path = dir.join(name);
    fs::read(&path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Write the four-file dataset layout. Deterministic: identical bundles
/// produce byte-identical directories.
pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let g = &bundle.graph;
    let mut edges = String::new();
    for &(i, j) in g.edges() {
        let _ = writeln!(edges, "{i}\t{j}");
    }
    let mut features = format!("{} {}\n", g.n(), g.feature_dim());
    for i in 0..g.n() {
        let row = &g.features()[i * g.feature_dim()..(i + 1) * g.feature_dim()];
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(features, "{}", line.join(" "));
    }
    let mut labels = String::new();
    for &c in &bundle.clean {
        let _ = writeln!(labels, "{c}");
    }
    let manifest = format!(
        "name {}\nn {}\nd {}\nedges {}\nanomalies {}\nsplit_seed {}\nchecksum_edges {}\nchecksum_features {}\nchecksum_labels {}\n",
        bundle.name,
        g.n(),
        g.feature_dim(),
        g.num_edges(),
        bundle.clean.iter().filter(|&&c| c == 1).count(),
        bundle.split_seed,
        sha256_hex(edges.as_bytes()),
        sha256_hex(features.as_bytes()),
        sha256_hex(labels.as_bytes()),
    );
    write_file(dir, "edges", edges.as_bytes())?;
    write_file(dir, "features", features.as_bytes())?;
    write_file(dir, "labels", labels.as_bytes())?;
    write_file(dir, "manifest", manifest.as_bytes())
}

fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>, DataError> {
    let mut map = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(' ').ok_or_else(|| DataError::Parse {
            file: "manifest".into(),
            line: ln + 1,
            msg: "expected `key value`".into(),
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

fn manifest_get<'a>(
    m: &'a BTreeMap<String, String>,
    key: &str,
) -> Result<&'a String, DataError> {
    m.get(key)
        .ok_or_else(|| DataError::Manifest(format!("missing key `{key}`")))
}

/// Load and cross-check a dataset directory against its manifest.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle, DataError> {
    let manifest = parse_manifest(&String::from_utf8_lossy(&read_file(dir, "manifest")?))?;
    let parse_num = |key: &str| -> Result<usize, DataError> {
        manifest_get(&manifest, key)?
            .parse()
            .map_err(|_| DataError::Manifest(format!("key `{key}` is not a number")))
    };
    let n = parse_num("n")?;
    let d = parse_num("d")?;
    let want_edges = parse_num("edges")?;
    let want_anoms = parse_num("anomalies")?;
    let split_seed: u64 = manifest_get(&manifest, "split_seed")?
        .parse()
        .map_err(|_| DataError::Manifest("split_seed is not a number".into()))?;

    let edges_raw = read_file(dir, "edges")?;
    let features_raw = read_file(dir, "features")?;
    let labels_raw = read_file(dir, "labels")?;
    for (name, raw) in [
        ("edges", &edges_raw),
        ("features", &features_raw),
        ("labels", &labels_raw),
    ] {
        let want = manifest_get(&manifest, &format!("checksum_{name}"))?;
        if &sha256_hex(raw) != want {
            return Err(DataError::Checksum(name.into()));
        }
    }

    let mut edges = Vec::new();
    for (ln, line) in String::from_utf8_lossy(&edges_raw).lines().enumerate() {
        let parse = || -> Option<(u32, u32)> {
            let (a, b) = line.split_once('\t')?;
            Some((a.parse().ok()?, b.parse().ok()?))
        };
        edges.push(parse().ok_or_else(|| DataError::Parse {
            file: "edges".into(),
            line: ln + 1,
            msg: format!("bad edge row `{line}`"),
        })?);
    }
    if edges.len() != want_edges {
        return Err(DataError::Manifest(format!(
            "edge count {} != manifest {}",
            edges.len(),
            want_edges
        )));
    }

    let ftext = String::from_utf8_lossy(&features_raw);
    let mut flines = ftext.lines().enumerate();
    let (_, header) = flines.next().ok_or_else(|| DataError::Parse {
        file: "features".into(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let hdr: Vec<usize> = header
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    if hdr != [n, d] {
        return Err(DataError::Manifest(format!(
            "feature header {header:?} disagrees with manifest n={n} d={d}"
        )));
    }
    let mut x = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (ln, line) in flines {
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(|t| t.parse()).collect();
        let row = row.map_err(|_| DataError::Parse {
            file: "features".into(),
            line: ln + 1,
            msg: format!("bad float in row `{line}`"),
        })?;
        if row.len() != d {
            return Err(DataError::Parse {
                file: "features".into(),
                line: ln + 1,
                msg: format!("expected {d} values, got {}", row.len()),
            });
        }
        x.extend(row);
        rows += 1;
    }
    if rows != n {
        return Err(DataError::Parse {
            file: "features".into(),
            line: rows + 1,
            msg: format!("expected {n} feature rows, got {rows}"),
        });
    }

    let mut clean = Vec::with_capacity(n);
    for (ln, line) in String::from_utf8_lossy(&labels_raw).lines().enumerate() {
        match line.trim() {
            "0" => clean.push(0u8),
            "1" => clean.push(1u8),
            other => {
                return Err(DataError::Parse {
                    file: "labels".into(),
                    line: ln + 1,
                    msg: format!("non-binary label `{other}`"),
                })
            }
        }
    }
    if clean.len() != n {
        return Err(DataError::Manifest(format!(
            "label count {} != n {}",
            clean.len(),
            n
        )));
    }
    let got_anoms = clean.iter().filter(|&&c| c == 1).count();
    if got_anoms != want_anoms {
        return Err(DataError::Manifest(format!(
            "anomaly count {got_anoms} != manifest {want_anoms}"
        )));
    }

    let graph = build_graph(n, d, &edges, x)?;
    let splits = make_splits(split_seed, &clean);
    Ok(DatasetBundle {
        graph,
        clean,
        splits,
        name: manifest_get(&manifest, "name")?.clone(),
        split_seed,
    })
}

const CHECKPOINT_MAGIC: &str = "paramstore v1";

/// Save a parameter store: text shape table, `---`, little-endian f64
/// payload, sha256 trailer.
pub fn save_params(params: &ParamStore, path: &Path) -> Result<(), DataError> {
    let mut header = format!("{CHECKPOINT_MAGIC}\n");
    let mut payload = Vec::with_capacity(params.num_values() * 8);
    for (name, p) in params.iter() {
        let _ = writeln!(header, "{name} {} {}", p.rows, p.cols);
        for &v in &p.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    header.push_str("---\n");
    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&payload);
    let mut h = Sha256::new();
    h.update(&bytes);
    let digest = h.finalize();
    bytes.extend_from_slice(&digest);
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a checkpoint, verifying version, shapes, and checksum.
pub fn load_params(path: &Path) -> Result<ParamStore, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.len() < 32 {
        return Err(DataError::Checksum("checkpoint too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let mut h = Sha256::new();
    h.update(body);
    if h.finalize().as_slice() != trailer {
        return Err(DataError::Checksum(path.display().to_string()));
    }
    let sep = b"---\n";
    let sep_pos = body
        .windows(sep.len())
        .position(|w| w == sep)
        .ok_or_else(|| DataError::Version("missing shape-table separator".into()))?;
    let header = String::from_utf8_lossy(&body[..sep_pos]);
    let payload = &body[sep_pos + sep.len()..];
    let mut lines = header.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != CHECKPOINT_MAGIC {
        return Err(DataError::Version(magic.to_string()));
    }
    let mut params = ParamStore::new();
    let mut offset = 0usize;
    for (ln, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 3 {
            return Err(DataError::Parse {
                file: "checkpoint".into(),
                line: ln + 2,
                msg: format!("bad shape row `{line}`"),
            });
        }
        let rows: usize = parts[1].parse().map_err(|_| DataError::Parse {
            file: "checkpoint".into(),
            line: ln + 2,
            msg: "bad row count".into(),
        })?;
        let cols: usize = parts[2].parse().map_err(|_| DataError::Parse {
            file: "checkpoint".into(),
            line: ln + 2,
            msg: "bad col count".into(),
        })?;
        let len = rows * cols * 8;
        if offset + len > payload.len() {
            return Err(DataError::Manifest(
                "shape table inconsistent with payload length".into(),
            ));
        }
        let data: Vec<f64> = payload[offset..offset + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(parts[0], rows, cols, data);
        offset += len;
    }
    if offset != payload.len() {
        return Err(DataError::Manifest(
            "payload longer than shape table".into(),
        ));
    }
    Ok(params)
}
