//! Command-line front end: `run`, `bench`, `validate` and `gen`.
//!
//! Every command reads an optional TOML run configuration (`--config`),
//! applies flag overrides and writes its artifacts into `--out`. On failure
//! the message is also written to `error.txt` in the output directory and
//! the exit status is nonzero.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd;
use crate::datagen::{generate, ScenarioSpec};
use crate::engine::{run_stream, EngineConfig, StreamOutcome};
use crate::error::{Error, Result};
use crate::filtering::NoiseSpec;
use crate::io::{self, ColumnMapping, Dataset};
use crate::metrics::median;
use crate::moments::MomentConfig;
use crate::realization::{RealizationOptions, StateDim, DEFAULT_ENERGY_THRESHOLD};
use crate::syslin::{detect_delay, spectral_norm_profile, DEFAULT_DELAY_THRESHOLD};

pub const THREADS_ENV: &str = "DELAYMIX_THREADS";
pub const DEFAULT_OUT_DIR: &str = "delaymix-out";

// ---------------------------------------------------------------------------
// Configuration file

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub engine: EngineSection,
    pub validate: ValidateSection,
    pub bench: BenchSection,
}

/// Where the stream comes from. Exactly one of `csv` and `scenario`.
/// Empty `outputs`/`inputs` mean "infer from the header".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub outputs: Vec<String>,
    pub inputs: Vec<String>,
    pub time: Option<String>,
    pub labels: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub lag: usize,
    pub rank: usize,
    pub rho: f64,
    pub window: usize,
    pub horizons: Vec<usize>,
    pub forgetting: f64,
    pub seed: u64,
    pub warm_start: bool,
    pub als_tol: f64,
    pub cold_max_iters: usize,
    pub warm_max_iters: usize,
    /// Fixed realization order; automatic when absent.
    pub state_dim: Option<usize>,
    pub energy_threshold: f64,
    pub process_var: f64,
    pub obs_var: f64,
    pub prior_var: f64,
    pub center: bool,
}

impl Default for EngineSection {
    fn default() -> Self {
        let noise = NoiseSpec::default();
        Self {
            lag: 3,
            rank: 2,
            rho: 0.7,
            window: 100,
            horizons: vec![1, 10, 30],
            forgetting: 1.0,
            seed: 0,
            warm_start: true,
            als_tol: cpd::DEFAULT_TOL,
            cold_max_iters: cpd::DEFAULT_COLD_ITERS,
            warm_max_iters: cpd::DEFAULT_WARM_ITERS,
            state_dim: None,
            energy_threshold: DEFAULT_ENERGY_THRESHOLD,
            process_var: noise.process_var,
            obs_var: noise.obs_var,
            prior_var: noise.prior_var,
            center: false,
        }
    }
}

impl EngineSection {
    pub fn engine_config(&self, output_dim: usize, input_dim: usize, horizon: usize) -> EngineConfig {
        let state_dim = match self.state_dim {
            Some(n) => StateDim::Fixed(n),
            None => StateDim::Auto {
                energy_threshold: self.energy_threshold,
            },
        };
        let mut cfg = EngineConfig::new(output_dim, input_dim);
        cfg.moment = MomentConfig::new(output_dim, input_dim, self.lag).with_forgetting(self.forgetting);
        cfg.rank = self.rank;
        cfg.rho = self.rho;
        cfg.window_len = self.window;
        cfg.horizon = horizon;
        cfg.center = self.center;
        cfg.als.seed = self.seed;
        cfg.als.warm_start = self.warm_start;
        cfg.als.tol = self.als_tol;
        cfg.als.cold_max_iters = self.cold_max_iters;
        cfg.als.warm_max_iters = self.warm_max_iters;
        cfg.realization = RealizationOptions {
            state_dim,
            lag: self.lag,
        };
        cfg.noise = NoiseSpec::new(self.process_var, self.obs_var, self.prior_var);
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    /// Leading fraction of the stream used for the grid search.
    pub fraction: f64,
    pub rho: Vec<f64>,
    pub rank: Vec<usize>,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            fraction: 0.2,
            rho: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            rank: vec![2, 4, 8, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub lengths: Vec<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            lengths: vec![1_000, 10_000, 100_000],
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    /// Loads a file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&fs::read_to_string(path).map_err(Error::at_path(path))?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.csv, &mut cfg.data.scenario].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Csv(PathBuf),
    Scenario(PathBuf),
}

impl Source {
    /// `.toml` files are scenarios, anything else CSV.
    pub fn from_path(path: PathBuf) -> Self {
        if path.extension().is_some_and(|e| e == "toml") {
            Source::Scenario(path)
        } else {
            Source::Csv(path)
        }
    }
}

/// Everything a command needs: data source, column mapping, settings and
/// output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub source: Source,
    /// `None` infers the mapping from the CSV header.
    pub mapping: Option<ColumnMapping>,
    pub config: RunConfig,
    /// Overrides the scenario file's seed.
    pub scenario_seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl RunManifest {
    pub fn new(source: Source, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            source,
            mapping: None,
            config: RunConfig::default(),
            scenario_seed: None,
            out_dir: out_dir.into(),
        }
    }

    pub fn from_config(config: RunConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        let source = match (&config.data.csv, &config.data.scenario) {
            (Some(p), None) => Source::Csv(p.clone()),
            (None, Some(p)) => Source::Scenario(p.clone()),
            (Some(_), Some(_)) => return Err(Error::Config(vec!["data: set only one of `csv` and `scenario`".into()])),
            (None, None) => return Err(Error::Config(vec!["data: no `csv` or `scenario` source given".into()])),
        };
        let d = &config.data;
        let mapping = if d.outputs.is_empty() && d.inputs.is_empty() {
            None
        } else {
            Some(ColumnMapping {
                outputs: d.outputs.clone(),
                inputs: d.inputs.clone(),
                time: d.time.clone(),
                labels: d.labels.clone(),
            })
        };
        Ok(Self {
            source,
            mapping,
            config,
            scenario_seed: None,
            out_dir: out_dir.into(),
        })
    }

    fn scenario(&self, path: &Path) -> Result<ScenarioSpec> {
        let mut spec = ScenarioSpec::load(path)?;
        if let Some(seed) = self.scenario_seed {
            spec.seed = seed;
        }
        Ok(spec)
    }

    /// Loads the stream; a scenario is generated with at least `min_len`
    /// samples.
    pub fn load_data(&self, min_len: usize) -> Result<Dataset> {
        match &self.source {
            Source::Csv(path) => io::read_csv_file(path, self.mapping.as_ref()),
            Source::Scenario(path) => {
                let mut spec = self.scenario(path)?;
                spec.length = spec.length.max(min_len);
                Ok(Dataset::from_trajectory(generate(&spec)?))
            }
        }
    }

    fn horizons(&self) -> Result<Vec<usize>> {
        let h = &self.config.engine.horizons;
        if h.is_empty() || h.contains(&0) {
            return Err(Error::Config(vec![format!(
                "horizons must be a non-empty list of positive integers, got {h:?}"
            )]));
        }
        Ok(h.clone())
    }

    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub ls: usize,
    pub mse: f64,
    pub mae: f64,
    pub cumulative_se: f64,
    pub cumulative_ae: f64,
    pub count: u64,
    pub persistence_mse: f64,
    pub persistence_mae: f64,
    pub updates: usize,
    pub adaptations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub samples: usize,
    pub output_dim: usize,
    pub input_dim: usize,
    pub horizons: Vec<HorizonMetrics>,
    /// Engine settings of the first horizon's run.
    pub config: EngineConfig,
}

fn horizon_metrics(ls: usize, out: &StreamOutcome) -> HorizonMetrics {
    HorizonMetrics {
        ls,
        mse: out.metrics.mse,
        mae: out.metrics.mae,
        cumulative_se: out.metrics.cumulative_se,
        cumulative_ae: out.metrics.cumulative_ae,
        count: out.metrics.count,
        persistence_mse: out.persistence.mse,
        persistence_mae: out.persistence.mae,
        updates: out.reports.len(),
        adaptations: out.reports.iter().filter(|r| r.adapted).count(),
    }
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn forecast_rows(data: &Dataset, window_len: usize, out: &StreamOutcome) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (report, &start) in out.reports.iter().zip(&out.window_starts) {
        for (h, pred) in report.forecast.iter().enumerate() {
            let t = start + window_len + h;
            let actual = &data.trajectory.outputs[t];
            for ch in 0..pred.len() {
                rows.push(vec![fmt(data.times[t]), ch.to_string(), fmt(pred[ch]), fmt(actual[ch])]);
            }
        }
    }
    rows
}

fn profile_rows(out: &StreamOutcome) -> Vec<Vec<String>> {
    out.reports
        .iter()
        .zip(&out.window_starts)
        .enumerate()
        .map(|(i, (r, &start))| {
            vec![
                i.to_string(),
                start.to_string(),
                r.elapsed.as_micros().to_string(),
                u8::from(r.adapted).to_string(),
                r.active_regime.to_string(),
                fmt(r.window_fit),
                r.als_iters.to_string(),
            ]
        })
        .collect()
}

fn markov_rows(out: &StreamOutcome) -> Result<Vec<Vec<String>>> {
    let state = &out.final_state;
    let mut rows = Vec::new();
    for (regime, seq) in state
        .database()
        .markov_estimates(&state.config().moment)?
        .iter()
        .enumerate()
    {
        let norms: Vec<f64> = seq.blocks().iter().map(crate::linalg::spectral_norm).collect();
        let profile = spectral_norm_profile(seq);
        let delay = detect_delay(&profile, DEFAULT_DELAY_THRESHOLD);
        for (j, (n, p)) in norms.iter().zip(&profile).enumerate() {
            rows.push(vec![
                regime.to_string(),
                (j + 1).to_string(),
                fmt(*n),
                fmt(*p),
                delay.to_string(),
            ]);
        }
    }
    Ok(rows)
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    io::write_table(fs::File::create(path).map_err(Error::at_path(path))?, header, rows)
}

/// Runs the engine once per horizon and writes `metrics.json`,
/// `forecasts.csv` (first horizon; `forecasts_ls<h>.csv` for the rest),
/// `profile.csv` and `markov_profiles.csv`.
pub fn cmd_run(manifest: &RunManifest) -> Result<RunMetrics> {
    let horizons = manifest.horizons()?;
    let data = manifest.load_data(0)?;
    let (d, dc) = (data.trajectory.output_dim(), data.trajectory.input_dim());
    let configs: Vec<EngineConfig> = horizons
        .iter()
        .map(|&h| manifest.config.engine.engine_config(d, dc, h))
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    manifest.prepare_out()?;
    let outcomes: Vec<StreamOutcome> = configs
        .iter()
        .map(|cfg| run_stream(cfg.clone(), &data.trajectory))
        .collect::<Result<_>>()?;

    let metrics = RunMetrics {
        samples: data.len(),
        output_dim: d,
        input_dim: dc,
        horizons: horizons
            .iter()
            .zip(&outcomes)
            .map(|(&h, o)| horizon_metrics(h, o))
            .collect(),
        config: configs[0].clone(),
    };
    let json = serde_json::to_string_pretty(&metrics).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(manifest.out_dir.join("metrics.json"), json + "\n")?;

    let window = manifest.config.engine.window;
    for (i, (&h, out)) in horizons.iter().zip(&outcomes).enumerate() {
        let name = if i == 0 {
            "forecasts.csv".to_string()
        } else {
            format!("forecasts_ls{h}.csv")
        };
        write_rows(
            &manifest.out_dir.join(name),
            &["t", "channel", "predicted", "actual"],
            &forecast_rows(&data, window, out),
        )?;
    }
    write_rows(
        &manifest.out_dir.join("profile.csv"),
        &[
            "update",
            "start",
            "elapsed_us",
            "adapted",
            "active_regime",
            "window_fit",
            "als_iters",
        ],
        &profile_rows(&outcomes[0]),
    )?;
    write_rows(
        &manifest.out_dir.join("markov_profiles.csv"),
        &["regime", "lag", "spectral_norm", "normalized", "delay"],
        &markov_rows(&outcomes[0])?,
    )?;
    Ok(metrics)
}

// ---------------------------------------------------------------------------
// bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub length: usize,
    pub updates: usize,
    pub adaptations: usize,
    /// Median wall clock of updates that did not adapt.
    pub median_update_us: Option<f64>,
    pub max_adaptation_us: Option<f64>,
    pub footprint_bytes: usize,
}

/// Per-update timing record; `adapted` rows are the adaptation spikes.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchUpdate {
    pub length: usize,
    pub update: usize,
    pub elapsed_us: f64,
    pub adapted: bool,
}

/// Runs the engine over prefixes of `data` of each length.
pub fn bench_lengths(
    config: &EngineConfig,
    data: &Dataset,
    lengths: &[usize],
) -> Result<(Vec<BenchRow>, Vec<BenchUpdate>)> {
    let mut rows = Vec::new();
    let mut updates = Vec::new();
    for &length in lengths {
        if length > data.len() {
            return Err(Error::Data(format!(
                "bench length {length} exceeds the {} available samples",
                data.len()
            )));
        }
        let out = run_stream(config.clone(), &data.trajectory.slice(0, length))?;
        let mut steady = Vec::new();
        let mut spikes = Vec::new();
        for (i, r) in out.reports.iter().enumerate() {
            let us = r.elapsed.as_secs_f64() * 1e6;
            if r.adapted {
                spikes.push(us);
            } else {
                steady.push(us);
            }
            updates.push(BenchUpdate {
                length,
                update: i,
                elapsed_us: us,
                adapted: r.adapted,
            });
        }
        rows.push(BenchRow {
            length,
            updates: out.reports.len(),
            adaptations: spikes.len(),
            median_update_us: median(&steady),
            max_adaptation_us: spikes.iter().copied().reduce(f64::max),
            footprint_bytes: out.final_state.footprint_bytes(),
        });
    }
    Ok((rows, updates))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Writes `bench.csv` (one row per length) and `bench_updates.csv` (one
/// row per update, adaptation spikes flagged).
pub fn cmd_bench(manifest: &RunManifest, lengths: &[usize]) -> Result<Vec<BenchRow>> {
    if lengths.is_empty() {
        return Err(Error::Config(vec!["bench needs at least one length".into()]));
    }
    let horizon = manifest.horizons()?[0];
    let longest = lengths.iter().copied().max().unwrap_or(0);
    let data = manifest.load_data(longest)?;
    let cfg = manifest
        .config
        .engine
        .engine_config(data.trajectory.output_dim(), data.trajectory.input_dim(), horizon);
    cfg.validate()?;
    manifest.prepare_out()?;
    let (rows, updates) = bench_lengths(&cfg, &data, lengths)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.length.to_string(),
                r.updates.to_string(),
                r.adaptations.to_string(),
                opt(r.median_update_us),
                opt(r.max_adaptation_us),
                r.footprint_bytes.to_string(),
            ]
        })
        .collect();
    write_rows(
        &manifest.out_dir.join("bench.csv"),
        &[
            "length",
            "updates",
            "adaptations",
            "median_update_us",
            "max_adaptation_us",
            "footprint_bytes",
        ],
        &table,
    )?;
    let per_update: Vec<Vec<String>> = updates
        .iter()
        .map(|u| {
            vec![
                u.length.to_string(),
                u.update.to_string(),
                fmt(u.elapsed_us),
                u8::from(u.adapted).to_string(),
            ]
        })
        .collect();
    write_rows(
        &manifest.out_dir.join("bench_updates.csv"),
        &["length", "update", "elapsed_us", "adapted"],
        &per_update,
    )?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// validate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub rho: f64,
    pub rank: usize,
    /// `None` when the cell could not be evaluated (see `status`).
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub best: GridCell,
    pub validation_samples: usize,
}

/// Lowest MSE; ties go to the smaller rank, then the larger `ρ`.
pub fn select_cell(cells: &[GridCell]) -> Option<&GridCell> {
    cells
        .iter()
        .filter(|c| c.mse.is_some_and(f64::is_finite))
        .min_by(|a, b| {
            let (ma, mb) = (a.mse.unwrap_or(f64::INFINITY), b.mse.unwrap_or(f64::INFINITY));
            ma.total_cmp(&mb)
                .then(a.rank.cmp(&b.rank))
                .then(b.rho.total_cmp(&a.rho))
        })
}

/// Evaluates every `ρ × R` cell on `data` with the first horizon.
pub fn grid_search(
    base: &EngineConfig,
    data: &Dataset,
    rhos: &[f64],
    ranks: &[usize],
) -> Result<(Vec<GridCell>, GridCell)> {
    if rhos.is_empty() || ranks.is_empty() {
        return Err(Error::Config(vec!["validation grid is empty".into()]));
    }
    let grid: Vec<(f64, usize)> = rhos.iter().flat_map(|&r| ranks.iter().map(move |&k| (r, k))).collect();
    let cells: Vec<GridCell> = grid
        .par_iter()
        .map(|&(rho, rank)| {
            let mut cfg = base.clone();
            cfg.rho = rho;
            cfg.rank = rank;
            let result = cfg.validate().and_then(|_| run_stream(cfg, &data.trajectory));
            match result {
                Ok(out) => GridCell {
                    rho,
                    rank,
                    mse: Some(out.metrics.mse),
                    mae: Some(out.metrics.mae),
                    status: "ok".into(),
                },
                Err(e) => GridCell {
                    rho,
                    rank,
                    mse: None,
                    mae: None,
                    status: e.to_string(),
                },
            }
        })
        .collect();
    let best = select_cell(&cells)
        .cloned()
        .ok_or_else(|| Error::Config(vec!["no grid cell could be evaluated".into()]))?;
    Ok((cells, best))
}

/// Grid search on the validation prefix; writes `validate.csv` and
/// `best.json`.
pub fn cmd_validate(manifest: &RunManifest) -> Result<GridReport> {
    let v = &manifest.config.validate;
    if v.rho.is_empty() || v.rank.is_empty() {
        return Err(Error::Config(vec!["validation grid is empty".into()]));
    }
    if !(v.fraction > 0.0 && v.fraction <= 1.0) {
        return Err(Error::Config(vec![format!(
            "validation fraction must lie in (0, 1], got {}",
            v.fraction
        )]));
    }
    let horizon = manifest.horizons()?[0];
    let data = manifest.load_data(0)?;
    let n = ((data.len() as f64) * v.fraction).floor() as usize;
    let prefix = data.prefix(n.max(1).min(data.len()));
    let base = manifest
        .config
        .engine
        .engine_config(data.trajectory.output_dim(), data.trajectory.input_dim(), horizon);
    manifest.prepare_out()?;
    let (cells, best) = grid_search(&base, &prefix, &v.rho, &v.rank)?;
    let table: Vec<Vec<String>> = cells
        .iter()
        .map(|c| vec![fmt(c.rho), c.rank.to_string(), opt(c.mse), opt(c.mae), c.status.clone()])
        .collect();
    write_rows(
        &manifest.out_dir.join("validate.csv"),
        &["rho", "rank", "mse", "mae", "status"],
        &table,
    )?;
    let report = GridReport {
        cells,
        best,
        validation_samples: prefix.len(),
    };
    let json = serde_json::to_string_pretty(&report.best).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(manifest.out_dir.join("best.json"), json + "\n")?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// gen

/// Generates the scenario and writes `stream.csv`.
pub fn cmd_gen(manifest: &RunManifest) -> Result<PathBuf> {
    let Source::Scenario(path) = &manifest.source else {
        return Err(Error::Config(vec!["gen needs a scenario (.toml) source".into()]));
    };
    let data = Dataset::from_trajectory(generate(&manifest.scenario(path)?)?);
    manifest.prepare_out()?;
    let target = manifest.out_dir.join("stream.csv");
    io::write_csv_file(&target, &data)?;
    Ok(target)
}

// ---------------------------------------------------------------------------
// Argument handling

#[derive(Debug, Parser)]
#[command(
    name = "delaymix",
    version,
    about = "Streaming forecasting with mixtures of linear time-delay systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream the data through the engine and write metrics and forecasts.
    Run(CommonArgs),
    /// Time per-update cost over increasing stream lengths.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Stream lengths, e.g. 1000,10000,100000.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
    },
    /// Grid-search rho and rank on a validation prefix.
    Validate(CommonArgs),
    /// Write a scenario's generated stream as CSV.
    Gen(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data source overriding the configuration: a CSV file or a scenario `.toml`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Forecast horizons, e.g. 1,10,30.
    #[arg(long, value_delimiter = ',')]
    pub ls: Option<Vec<usize>>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub forgetting: Option<f64>,
}

impl CommonArgs {
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// Configuration file (or defaults) with the flags applied.
    pub fn manifest(&self) -> Result<RunManifest> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.data {
            match Source::from_path(p.clone()) {
                Source::Csv(p) => {
                    config.data.csv = Some(p);
                    config.data.scenario = None;
                }
                Source::Scenario(p) => {
                    config.data.scenario = Some(p);
                    config.data.csv = None;
                }
            }
        }
        let e = &mut config.engine;
        if let Some(seed) = self.seed {
            e.seed = seed;
        }
        if let Some(ls) = &self.ls {
            e.horizons = ls.clone();
        }
        if let Some(rho) = self.rho {
            e.rho = rho;
        }
        if let Some(rank) = self.rank {
            e.rank = rank;
        }
        if let Some(f) = self.forgetting {
            e.forgetting = f;
        }
        let mut manifest = RunManifest::from_config(config, self.out_dir())?;
        manifest.scenario_seed = self.seed;
        Ok(manifest)
    }
}

/// Caps the global thread pool at `DELAYMIX_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(vec![format!("{THREADS_ENV} must be a positive integer, got {value:?}")]))?;
    // A pool that is already initialized keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Run(args) => {
            let m = cmd_run(&args.manifest()?)?;
            let lines: Vec<String> = m
                .horizons
                .iter()
                .map(|h| {
                    format!(
                        "ls={}: mse {:.6} mae {:.6} ({} updates, {} adaptations)",
                        h.ls, h.mse, h.mae, h.updates, h.adaptations
                    )
                })
                .collect();
            Ok(lines.join("\n"))
        }
        Command::Bench { common, lengths } => {
            let manifest = common.manifest()?;
            let lengths = lengths.clone().unwrap_or_else(|| manifest.config.bench.lengths.clone());
            let rows = cmd_bench(&manifest, &lengths)?;
            let lines: Vec<String> = rows
                .iter()
                .map(|r| {
                    format!(
                        "length {}: median update {} us, {} adaptations",
                        r.length,
                        opt(r.median_update_us),
                        r.adaptations
                    )
                })
                .collect();
            Ok(lines.join("\n"))
        }
        Command::Validate(args) => {
            let report = cmd_validate(&args.manifest()?)?;
            Ok(format!(
                "best rho {} rank {} (mse {}) over {} cells",
                report.best.rho,
                report.best.rank,
                opt(report.best.mse),
                report.cells.len()
            ))
        }
        Command::Gen(args) => Ok(format!("wrote {}", cmd_gen(&args.manifest()?)?.display())),
    }
}

fn out_dir_of(command: &Command) -> PathBuf {
    match command {
        Command::Run(a) | Command::Validate(a) | Command::Gen(a) => a.out_dir(),
        Command::Bench { common, .. } => common.out_dir(),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = init_threads().and_then(|_| execute(&cli.command));
    match result {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            let dir = out_dir_of(&cli.command);
            if fs::create_dir_all(&dir).is_ok() {
                let _ = fs::write(dir.join("error.txt"), format!("{e}\n"));
            }
            1
        }
    }
}
