use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use h2c_core::checkpoint::Checkpoint;
use h2c_core::experiment::{evaluate_checkpoints, run_cell, CellConfig, CellRun, ExperimentData};
use h2c_core::learner::{StrategyKind, TaskCheckpoint, TrainStats};
use h2c_core::metrics::EvalReport;
use h2c_core::predictor::Predictor;
use h2c_core::scenarios::{generate_episodes, ingest_csv, write_episodes_csv, StreamSpec};
use h2c_core::SceneGeometry;

use crate::config::ExperimentConfig;

pub const STREAM_MANIFEST: &str = "stream.json";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const MATRIX_FILE: &str = "matrix.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub label: u32,
    pub file: String,
    pub samples: usize,
}

/// Written next to the task CSVs; lists them in stream order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub stream: StreamSpec,
    pub geometry: SceneGeometry,
    pub tasks: Vec<TaskFile>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn task_file_name(label: u32) -> String {
    format!("task_{label:02}.csv")
}

/// Writes one CSV per task and the stream manifest.
pub fn cmd_gen(cfg: &ExperimentConfig) -> anyhow::Result<StreamManifest> {
    let dir = cfg.data_dir();
    let mut tasks = Vec::new();
    for (i, spec) in cfg.stream.tasks.iter().enumerate() {
        let label = i as u32 + 1;
        let episodes = generate_episodes(spec, label, &cfg.geometry)?;
        let mut buf = Vec::new();
        write_episodes_csv(&mut buf, &episodes, &cfg.geometry)?;
        let file = task_file_name(label);
        write(&dir.join(&file), buf)?;
        tasks.push(TaskFile {
            label,
            file,
            samples: episodes.len(),
        });
    }
    let manifest = StreamManifest {
        stream: cfg.stream.clone(),
        geometry: cfg.geometry,
        tasks,
    };
    write(&dir.join(STREAM_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads the generated dataset back from disk.
pub fn load_data(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentData> {
    let dir = cfg.data_dir();
    let path = dir.join(STREAM_MANIFEST);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {} (run `gen` first)", path.display()))?;
    let manifest: StreamManifest = serde_json::from_str(&text)?;
    if manifest.geometry != cfg.geometry {
        bail!("dataset geometry differs from the config; regenerate the data");
    }
    let mut tasks = Vec::new();
    for t in &manifest.tasks {
        let ingested = ingest_csv(&dir.join(&t.file), &cfg.geometry)?;
        if ingested.samples.len() != t.samples {
            bail!("{}: expected {} samples, read {}", t.file, t.samples, ingested.samples.len());
        }
        tasks.push(ingested.samples);
    }
    Ok(ExperimentData::from_tasks(tasks))
}

pub fn cell_dir(runs: &Path, strategy: StrategyKind, seed: u64) -> PathBuf {
    runs.join(strategy.name()).join(format!("seed_{seed}"))
}

/// One finished or failed (strategy, seed) job.
pub struct CellResult {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub result: h2c_core::Result<CellRun>,
    pub seconds: f64,
}

/// Runs every (strategy, seed) pair on a bounded pool. Failures are
/// returned per cell.
pub fn run_grid(
    data: &ExperimentData,
    cell: &CellConfig,
    strategies: &[StrategyKind],
    seeds: &[u64],
    workers: Option<usize>,
) -> anyhow::Result<Vec<CellResult>> {
    let jobs: Vec<(StrategyKind, u64)> = strategies
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&k| (s, k)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| anyhow!("worker pool: {e}"))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(strategy, seed)| {
                let start = Instant::now();
                let result = run_cell(data, cell, strategy, seed);
                log::info!("{strategy} seed {seed} finished in {:.1}s", start.elapsed().as_secs_f64());
                CellResult {
                    strategy,
                    seed,
                    result,
                    seconds: start.elapsed().as_secs_f64(),
                }
            })
            .collect()
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub matrix: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<TrainStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub cells: Vec<CellEntry>,
}

fn checkpoint_name(cp: &TaskCheckpoint) -> String {
    format!("after_task_{:02}.json", cp.after_task)
}

fn save_cell(cfg: &ExperimentConfig, dir: &Path, run: &CellRun) -> anyhow::Result<(PathBuf, PathBuf, Vec<PathBuf>)> {
    let matrix = dir.join(MATRIX_FILE);
    let report = dir.join(REPORT_FILE);
    write(&matrix, run.report.to_csv())?;
    write(&report, run.report.to_json()?)?;
    let mut checkpoints = Vec::new();
    for cp in &run.outcome.checkpoints {
        let path = dir.join("checkpoints").join(checkpoint_name(cp));
        let file = Checkpoint::new(cfg.predictor_config(run.seed), cp.params.clone(), Some(cp.after_task));
        write(&path, file.to_json()?)?;
        checkpoints.push(path);
    }
    Ok((matrix, report, checkpoints))
}

/// Trains and evaluates every cell, writes artifacts and the manifest, then
/// the summary. Returns the manifest.
pub fn cmd_run(cfg: &ExperimentConfig) -> anyhow::Result<RunManifest> {
    let data = load_data(cfg)?;
    let runs = cfg.runs_dir();
    let results = run_grid(&data, &cfg.cell_config(), &cfg.strategies, &cfg.seeds(), cfg.workers)?;
    let mut cells = Vec::new();
    for r in results {
        let dir = cell_dir(&runs, r.strategy, r.seed);
        let entry = match r.result {
            Ok(run) => {
                let (matrix, report, checkpoints) = save_cell(cfg, &dir, &run)?;
                CellEntry {
                    strategy: r.strategy,
                    seed: r.seed,
                    status: "ok".into(),
                    error: None,
                    matrix: Some(matrix),
                    report: Some(report),
                    checkpoints,
                    wall_clock_seconds: r.seconds,
                    stats: Some(run.outcome.stats),
                }
            }
            Err(e) => {
                log::error!("{} seed {} failed: {e}", r.strategy, r.seed);
                CellEntry {
                    strategy: r.strategy,
                    seed: r.seed,
                    status: "failed".into(),
                    error: Some(e.to_string()),
                    matrix: None,
                    report: None,
                    checkpoints: Vec::new(),
                    wall_clock_seconds: r.seconds,
                    stats: None,
                }
            }
        };
        cells.push(entry);
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        cells,
    };
    write(&runs.join(RUN_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    cmd_report(cfg)?;
    Ok(manifest)
}

/// Re-evaluates the saved checkpoints of one run directory and rewrites its
/// matrix and report.
pub fn cmd_eval(cfg: &ExperimentConfig, run_dir: &Path) -> anyhow::Result<EvalReport> {
    let data = load_data(cfg)?;
    let cp_dir = run_dir.join("checkpoints");
    let mut files: Vec<PathBuf> = fs::read_dir(&cp_dir)
        .with_context(|| format!("listing {}", cp_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no checkpoints in {}", cp_dir.display());
    }
    let mut checkpoints = Vec::new();
    let mut predictor = None;
    for f in &files {
        let cp = Checkpoint::load(f)?;
        let after_task = cp
            .after_task
            .ok_or_else(|| anyhow!("{} has no task index", f.display()))?;
        predictor.get_or_insert(cp.predictor.clone());
        checkpoints.push(TaskCheckpoint {
            after_task,
            params: cp.params,
        });
    }
    let model = Predictor::new(predictor.expect("at least one checkpoint"))?;
    let report = evaluate_checkpoints(&model, &checkpoints, &data, cfg.endpoints)?;
    write(&run_dir.join(MATRIX_FILE), report.to_csv())?;
    write(&run_dir.join(REPORT_FILE), report.to_json()?)?;
    Ok(report)
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: StrategyKind,
    pub seeds: Vec<u64>,
    pub fde_avg: Option<Stat>,
    pub mr_avg: Option<Stat>,
    pub fde_bwt: Option<Stat>,
    pub mr_bwt: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategies: Vec<StrategySummary>,
}

impl Summary {
    pub fn from_reports(reports: &BTreeMap<StrategyKind, Vec<(u64, EvalReport)>>) -> Summary {
        let strategies = reports
            .iter()
            .map(|(&strategy, runs)| {
                let col = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
                    let v: Vec<f64> = runs.iter().filter_map(|(_, r)| f(r)).collect();
                    Stat::of(&v)
                };
                StrategySummary {
                    strategy,
                    seeds: runs.iter().map(|(s, _)| *s).collect(),
                    fde_avg: col(&|r| Some(r.fde_avg)),
                    mr_avg: col(&|r| Some(r.mr_avg)),
                    fde_bwt: col(&|r| r.fde_bwt),
                    mr_bwt: col(&|r| r.mr_bwt),
                }
            })
            .collect();
        Summary { strategies }
    }

    pub fn get(&self, strategy: StrategyKind) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    /// Plain-text table, one row per strategy.
    pub fn to_table(&self) -> String {
        let cell = |s: &Option<Stat>| match s {
            Some(s) => format!("{:.3} ± {:.3}", s.mean, s.std),
            None => "N/A".to_string(),
        };
        let mut out = format!(
            "{:<10} {:>5} {:>17} {:>17} {:>17} {:>17}\n",
            "strategy", "runs", "FDE-AVG (m)", "MR-AVG (%)", "FDE-BWT (m)", "MR-BWT (%)"
        );
        for s in &self.strategies {
            out.push_str(&format!(
                "{:<10} {:>5} {:>17} {:>17} {:>17} {:>17}\n",
                s.strategy.name(),
                s.seeds.len(),
                cell(&s.fde_avg),
                cell(&s.mr_avg),
                cell(&s.fde_bwt),
                cell(&s.mr_bwt)
            ));
        }
        out
    }
}

/// Reads every `matrix.csv` under the runs directory.
pub fn collect_reports(runs: &Path) -> anyhow::Result<BTreeMap<StrategyKind, Vec<(u64, EvalReport)>>> {
    let mut out: BTreeMap<StrategyKind, Vec<(u64, EvalReport)>> = BTreeMap::new();
    let Ok(entries) = fs::read_dir(runs) else {
        bail!("no runs directory at {}", runs.display());
    };
    for entry in entries {
        let dir = entry?.path();
        let Some(strategy) = dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<StrategyKind>().ok())
        else {
            continue;
        };
        for seed_entry in fs::read_dir(&dir)? {
            let seed_dir = seed_entry?.path();
            let Some(seed) = seed_dir
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("seed_"))
                .and_then(|n| n.parse::<u64>().ok())
            else {
                continue;
            };
            let matrix = seed_dir.join(MATRIX_FILE);
            if !matrix.exists() {
                continue;
            }
            let text = fs::read_to_string(&matrix).with_context(|| format!("reading {}", matrix.display()))?;
            let report = EvalReport::from_csv(&text).with_context(|| format!("parsing {}", matrix.display()))?;
            out.entry(strategy).or_default().push((seed, report));
        }
    }
    for runs in out.values_mut() {
        runs.sort_by_key(|(s, _)| *s);
    }
    Ok(out)
}

/// Rebuilds the summary from the matrix files alone and writes
/// `summary.txt` and `summary.json`.
pub fn cmd_report(cfg: &ExperimentConfig) -> anyhow::Result<Summary> {
    let reports = collect_reports(&cfg.runs_dir())?;
    if reports.is_empty() {
        bail!("no result matrices under {}", cfg.runs_dir().display());
    }
    let summary = Summary::from_reports(&reports);
    write(&cfg.output_dir.join("summary.txt"), summary.to_table())?;
    write(&cfg.output_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_of_three() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert_eq!(Stat::of(&[4.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }
}
