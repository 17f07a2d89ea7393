//! Experiment driver: TOML experiment configs, the (dataset x ratio x
//! budget x seed) cell grid, CSV/JSON artifacts, and the command cores
//! behind the CLI.
//!
//! Artifacts per run directory:
//!   metrics.csv             dataset,ratio,budget,seed,variant,auc,aupr,wallclock
//!   edges_per_episode.csv   epoch,episode,step,edges_cut,reward
//!   summary.json            mean +/- std per (dataset, ratio, budget, variant)
//!   failures.json           per-cell error messages, if any
//!
//! Ground-truth labels are read exactly once per variant, at metric time;
//! the run itself only ever sees the injected noisy labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{self, DataError, DatasetBundle, Split, SyntheticConfig};
use crate::metrics::{self, MetricError};
use crate::pipeline::{self, LoopConfig, PipelineError, Variant};

/// Environment variable overriding the default output root.
pub const OUTPUT_ROOT_ENV: &str = "REGAD_OUT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{file} line {line}: {msg}")]
    Csv {
        file: String,
        line: usize,
        msg: String,
    },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated per seed; the experiment seed is folded into the generator
    /// seed so every seed sees a fresh graph.
    Synthetic { config: SyntheticConfig },
    /// A saved dataset directory, shared by all seeds.
    Dir { path: String },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    /// Label-noise ratios, each in [0, 1].
    pub ratios: Vec<f64>,
    /// Labeled-anomaly budgets.
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Labeled normals drawn per labeled anomaly.
    pub normal_multiple: usize,
    /// Variant names to run; must be a subset of the known variants.
    pub variants: Vec<String>,
    pub run: LoopConfig,
    /// Confident-set rates swept by `sweep-hyper`.
    pub alpha_grid: Vec<f64>,
    /// Per-step edge caps swept by `sweep-hyper`.
    pub edge_cap_grid: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: DatasetSource::Synthetic {
                config: SyntheticConfig::default(),
            },
            ratios: vec![0.5],
            budgets: vec![30],
            seeds: (0..10).collect(),
            normal_multiple: 10,
            variants: Variant::ALL.iter().map(|v| v.name().to_string()).collect(),
            run: LoopConfig::default(),
            alpha_grid: vec![0.01, 0.02, 0.03, 0.04, 0.05],
            edge_cap_grid: vec![10, 15, 20, 25, 30],
        }
    }
}

pub fn parse_variant(name: &str) -> Result<Variant, HarnessError> {
    Variant::ALL
        .iter()
        .copied()
        .find(|v| v.name() == name)
        .ok_or_else(|| HarnessError::Invalid(format!("unknown variant `{name}`")))
}

pub fn validate_config(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    if cfg.seeds.is_empty() {
        return Err(HarnessError::Invalid("seed list is empty".into()));
    }
    if cfg.ratios.is_empty() || cfg.budgets.is_empty() {
        return Err(HarnessError::Invalid(
            "ratio and budget lists must be nonempty".into(),
        ));
    }
    if cfg.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(HarnessError::Invalid("ratios must lie in [0, 1]".into()));
    }
    if cfg.variants.is_empty() {
        return Err(HarnessError::Invalid("variant list is empty".into()));
    }
    for v in &cfg.variants {
        parse_variant(v)?;
    }
    if !(cfg.run.alpha > 0.0 && cfg.run.alpha <= 0.5) {
        return Err(HarnessError::Invalid(format!(
            "alpha {} outside (0, 0.5]",
            cfg.run.alpha
        )));
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| HarnessError::Invalid(e.to_string()))?;
    validate_config(&cfg)?;
    Ok(cfg)
}

pub fn emit_config(cfg: &ExperimentConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}

/// Output root: explicit flag, then `REGAD_OUT`, then `./runs`.
pub fn output_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub dataset: String,
    pub ratio: f64,
    pub budget: usize,
    pub seed: u64,
    pub variant: String,
    pub auc: f64,
    pub aupr: f64,
    pub wallclock: f64,
}

impl MetricRow {
    /// Everything except the timing column, which legitimately varies
    /// between reruns of an otherwise deterministic cell.
    pub fn deterministic_part(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.dataset, self.ratio, self.budget, self.seed, self.variant, self.auc, self.aupr
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCsvRow {
    pub epoch: usize,
    pub episode: usize,
    pub step: usize,
    pub edges_cut: usize,
    pub reward: f64,
}

pub const METRICS_HEADER: &str = "dataset,ratio,budget,seed,variant,auc,aupr,wallclock";
pub const EPISODES_HEADER: &str = "epoch,episode,step,edges_cut,reward";

pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{}",
            r.deterministic_part(),
            r.wallclock
        );
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>, HarnessError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        other => {
            return Err(HarnessError::Csv {
                file: "metrics.csv".into(),
                line: 1,
                msg: format!("bad header {:?}", other.map(|(_, h)| h)),
            })
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        let err = |msg: &str| HarnessError::Csv {
            file: "metrics.csv".into(),
            line: ln + 1,
            msg: msg.into(),
        };
        if f.len() != 8 {
            return Err(err("expected 8 columns"));
        }
        rows.push(MetricRow {
            dataset: f[0].to_string(),
            ratio: f[1].parse().map_err(|_| err("bad ratio"))?,
            budget: f[2].parse().map_err(|_| err("bad budget"))?,
            seed: f[3].parse().map_err(|_| err("bad seed"))?,
            variant: f[4].to_string(),
            auc: f[5].parse().map_err(|_| err("bad auc"))?,
            aupr: f[6].parse().map_err(|_| err("bad aupr"))?,
            wallclock: f[7].parse().map_err(|_| err("bad wallclock"))?,
        });
    }
    Ok(rows)
}

pub fn episodes_to_csv(rows: &[EpisodeCsvRow]) -> String {
    let mut out = format!("{EPISODES_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.episode, r.step, r.edges_cut, r.reward
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SummaryCell {
    pub dataset: String,
    pub ratio: f64,
    pub budget: usize,
    pub variant: String,
    pub runs: usize,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_aupr: f64,
    pub std_aupr: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregate metric rows over seeds, keyed by (dataset, ratio, budget,
/// variant), in key order.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryCell> {
    let mut groups: BTreeMap<(String, String, usize, String), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((
                r.dataset.clone(),
                // Key ratios by their printed form to avoid float map keys.
                format!("{}", r.ratio),
                r.budget,
                r.variant.clone(),
            ))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((dataset, ratio, budget, variant), rs)| {
            let aucs: Vec<f64> = rs.iter().map(|r| r.auc).collect();
            let auprs: Vec<f64> = rs.iter().map(|r| r.aupr).collect();
            let (mean_auc, std_auc) = mean_std(&aucs);
            let (mean_aupr, std_aupr) = mean_std(&auprs);
            SummaryCell {
                dataset,
                ratio: ratio.parse().expect("ratio printed from f64"),
                budget,
                variant,
                runs: rs.len(),
                mean_auc,
                std_auc,
                mean_aupr,
                std_aupr,
            }
        })
        .collect()
}

/// One grid point: a dataset, a noise setting, and one seed.
#[derive(Debug, Clone)]
pub struct Cell {
    pub ratio: f64,
    pub budget: usize,
    pub seed: u64,
}

pub struct CellOutcome {
    pub rows: Vec<MetricRow>,
    pub episode_rows: Vec<EpisodeCsvRow>,
}

fn dataset_for_seed(cfg: &ExperimentConfig, seed: u64) -> Result<DatasetBundle, HarnessError> {
    match &cfg.dataset {
        DatasetSource::Synthetic { config } => {
            let mut c = config.clone();
            c.seed ^= seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            Ok(data::generate_synthetic(&c)?)
        }
        DatasetSource::Dir { path } => Ok(data::load_dataset(Path::new(path))?),
    }
}

/// Execute one cell: inject label noise over the train+val supervision
/// pool, run every requested variant, and score each on the held-out test
/// split against the hidden clean labels (read exactly once per variant).
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<CellOutcome, HarnessError> {
    let bundle = dataset_for_seed(cfg, cell.seed)?;
    let mut pool = bundle.nodes_in(Split::Train);
    pool.extend(bundle.nodes_in(Split::Val));
    pool.sort_unstable();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cell.seed ^ 0x6e6f_6973);
    let table = metrics::inject_label_noise(
        &bundle.clean,
        &pool,
        cell.budget,
        cell.ratio,
        cfg.normal_multiple,
        &mut noise_rng,
    )?;
    let test_nodes = bundle.nodes_in(Split::Test);
    let mut run_cfg = cfg.run.clone();
    run_cfg.seed = cell.seed;

    let mut rows = Vec::new();
    let mut episode_rows = Vec::new();
    for name in &cfg.variants {
        let variant = parse_variant(name)?;
        let t0 = Instant::now();
        let res = pipeline::run_loop(
            &bundle.graph,
            table.noisy(),
            &run_cfg,
            variant.switches(),
        )?;
        let wallclock = t0.elapsed().as_secs_f64();
        let clean = table.clean_for_eval();
        let s: Vec<f64> = test_nodes
            .iter()
            .map(|&v| res.scores.scores[v as usize])
            .collect();
        let y: Vec<u8> = test_nodes.iter().map(|&v| clean[v as usize]).collect();
        let report = metrics::report(&s, &y, "test")?;
        rows.push(MetricRow {
            dataset: bundle.name.clone(),
            ratio: cell.ratio,
            budget: cell.budget,
            seed: cell.seed,
            variant: name.clone(),
            auc: report.auc,
            aupr: report.aupr,
            wallclock,
        });
        if variant == Variant::Full {
            episode_rows.extend(res.episode_rows.iter().map(|e| EpisodeCsvRow {
                epoch: e.epoch,
                episode: e.episode,
                step: e.step,
                edges_cut: e.edges_cut,
                reward: e.reward,
            }));
        }
    }
    // One clean read per variant, at metric time; anything else is a leak.
    assert_eq!(table.clean_read_count(), cfg.variants.len());
    Ok(CellOutcome {
        rows,
        episode_rows,
    })
}

fn grid(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &ratio in &cfg.ratios {
        for &budget in &cfg.budgets {
            for &seed in &cfg.seeds {
                cells.push(Cell {
                    ratio,
                    budget,
                    seed,
                });
            }
        }
    }
    cells
}

/// Run cells across a worker pool. Results come back in grid order so
/// artifacts are byte-deterministic regardless of scheduling.
pub fn run_cells(
    cfg: &ExperimentConfig,
    cells: &[Cell],
) -> Vec<(Cell, Result<CellOutcome, HarnessError>)> {
    let workers = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(cells.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CellOutcome, HarnessError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let out = run_cell(cfg, &cells[i]);
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, r)| (cells[i].clone(), r.expect("worker filled slot")))
        .collect()
}

pub struct RunArtifacts {
    pub rows: Vec<MetricRow>,
    pub episode_rows: Vec<EpisodeCsvRow>,
    pub summary: Vec<SummaryCell>,
    /// (cell description, error message) for every failed cell.
    pub failures: Vec<(String, String)>,
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The `run` command core: execute the grid, write metrics.csv,
/// edges_per_episode.csv, summary.json, and (when any cell fails)
/// failures.json. Partial results are preserved on failure.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts, HarnessError> {
    validate_config(cfg)?;
    fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    let mut episode_rows = Vec::new();
    let mut failures = Vec::new();
    for (cell, result) in run_cells(cfg, &grid(cfg)) {
        match result {
            Ok(outcome) => {
                rows.extend(outcome.rows);
                episode_rows.extend(outcome.episode_rows);
            }
            Err(e) => failures.push((
                format!(
                    "ratio={} budget={} seed={}",
                    cell.ratio, cell.budget, cell.seed
                ),
                e.to_string(),
            )),
        }
    }
    let summary = summarize(&rows);
    write_artifact(out_dir, "metrics.csv", &metrics_to_csv(&rows))?;
    write_artifact(out_dir, "edges_per_episode.csv", &episodes_to_csv(&episode_rows))?;
    write_artifact(
        out_dir,
        "summary.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write_artifact(out_dir, "config.toml", &emit_config(cfg))?;
    if !failures.is_empty() {
        let manifest: Vec<serde_json::Value> = failures
            .iter()
            .map(|(cell, err)| serde_json::json!({ "cell": cell, "error": err }))
            .collect();
        write_artifact(
            out_dir,
            "failures.json",
            &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
    }
    Ok(RunArtifacts {
        rows,
        episode_rows,
        summary,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub runs: usize,
}

/// The `sweep-hyper` command core: sweep the confident-set rate grid and
/// the per-step edge-cap grid, full variant only, one point per grid value.
pub fn cmd_sweep_hyper(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<SweepPoint>, HarnessError> {
    validate_config(cfg)?;
    if cfg.alpha_grid.is_empty() && cfg.edge_cap_grid.is_empty() {
        return Err(HarnessError::Invalid("both sweep grids are empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut base = cfg.clone();
    base.variants = vec![Variant::Full.name().to_string()];
    let mut points = Vec::new();
    let mut sweep_one = |axis: &str, value: f64, point_cfg: &ExperimentConfig| -> Result<(), HarnessError> {
        let mut aucs = Vec::new();
        for (cell, result) in run_cells(point_cfg, &grid(point_cfg)) {
            let outcome = result.map_err(|e| {
                HarnessError::Invalid(format!(
                    "{axis}={value} ratio={} budget={} seed={}: {e}",
                    cell.ratio, cell.budget, cell.seed
                ))
            })?;
            aucs.extend(outcome.rows.iter().map(|r| r.auc));
        }
        let (mean_auc, std_auc) = mean_std(&aucs);
        points.push(SweepPoint {
            axis: axis.to_string(),
            value,
            mean_auc,
            std_auc,
            runs: aucs.len(),
        });
        Ok(())
    };
    for &alpha in &cfg.alpha_grid {
        let mut c = base.clone();
        c.run.alpha = alpha;
        sweep_one("alpha", alpha, &c)?;
    }
    for &cap in &cfg.edge_cap_grid {
        let mut c = base.clone();
        c.run.pruner.edge_cap = cap;
        sweep_one("edge_cap", cap as f64, &c)?;
    }
    let mut csv = String::from("axis,value,mean_auc,std_auc,runs\n");
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            p.axis, p.value, p.mean_auc, p.std_auc, p.runs
        );
    }
    write_artifact(out_dir, "sweep.csv", &csv)?;
    write_artifact(
        out_dir,
        "sweep.json",
        &serde_json::to_string_pretty(&points).expect("points serialize"),
    )?;
    Ok(points)
}

/// The `gen` command core: generate and save a synthetic dataset, returning
/// the manifest text for display.
pub fn cmd_gen(config: &SyntheticConfig, out_dir: &Path) -> Result<String, HarnessError> {
    let bundle = data::generate_synthetic(config)?;
    data::save_dataset(&bundle, out_dir)?;
    let path = out_dir.join("manifest");
    fs::read_to_string(&path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}
