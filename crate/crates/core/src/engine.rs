//! The online loop: per window, fold moments into the system tensor, gate
//! the model database on how well the active model explains the window,
//! re-decompose when it does not, and forecast with the active model.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cpd::{self, AlsInit, AlsOptions, CpFactors};
use crate::datagen;
use crate::error::{Error, Result};
use crate::filtering::{self, NoiseSpec};
use crate::linalg;
use crate::metrics::MetricsSummary;
use crate::moments::{MomentConfig, SystemTensor};
use crate::realization::{self, RealizationOptions};
use crate::syslin::{simulate_delay_free, DelayFreeModel, MarkovSequence, Trajectory};

pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsSettings {
    pub tol: f64,
    pub cold_max_iters: usize,
    pub warm_max_iters: usize,
    pub seed: u64,
    /// Start each decomposition from the previous factors when available.
    pub warm_start: bool,
}

impl Default for AlsSettings {
    fn default() -> Self {
        Self {
            tol: cpd::DEFAULT_TOL,
            cold_max_iters: cpd::DEFAULT_COLD_ITERS,
            warm_max_iters: cpd::DEFAULT_WARM_ITERS,
            seed: 0,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub moment: MomentConfig,
    /// CP rank `R`, the size of the model database.
    pub rank: usize,
    /// Fit threshold `ρ` on the mean one-step error. `0` adapts on every
    /// update, `+∞` never after the first.
    #[serde(with = "extended_float")]
    pub rho: f64,
    pub als: AlsSettings,
    pub realization: RealizationOptions,
    pub noise: NoiseSpec,
    /// Window length `l_c`.
    pub window_len: usize,
    /// Forecast horizon `l_s`.
    pub horizon: usize,
    /// Subtract first-window channel means before scaling. Off by default:
    /// the models carry no constant term, and an estimated input mean
    /// leaves a nonzero-mean input that biases the moments.
    #[serde(default)]
    pub center: bool,
}

impl EngineConfig {
    /// `s = 3`, `R = 2`, `ρ = 0.7`, `l_c = 100`, `l_s = 1`.
    pub fn new(output_dim: usize, input_dim: usize) -> Self {
        let lag = 3;
        Self {
            moment: MomentConfig::new(output_dim, input_dim, lag),
            rank: 2,
            rho: 0.7,
            als: AlsSettings::default(),
            realization: RealizationOptions::auto(lag),
            noise: NoiseSpec::default(),
            window_len: 100,
            horizon: 1,
            center: false,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.moment.violations();
        v.extend(self.realization.violations());
        v.extend(self.noise.violations());
        if self.rank == 0 {
            v.push("rank must be >= 1".into());
        } else if self.moment.lag > 0 && self.rank > self.moment.mode_size() {
            v.push(format!(
                "rank {} exceeds tensor mode size {}",
                self.rank,
                self.moment.mode_size()
            ));
        }
        if !(self.rho >= 0.0) {
            v.push(format!("rho must be >= 0, got {}", self.rho));
        }
        if self.horizon == 0 {
            v.push("forecast horizon l_s must be >= 1".into());
        }
        if self.window_len < self.moment.min_window() {
            v.push(format!(
                "window length {} below minimum 3*k_max+3 = {}",
                self.window_len,
                self.moment.min_window()
            ));
        }
        if self.realization.lag != self.moment.lag {
            v.push(format!(
                "realization lag {} differs from moment lag {}",
                self.realization.lag, self.moment.lag
            ));
        }
        if self.als.tol <= 0.0 || self.als.cold_max_iters == 0 || self.als.warm_max_iters == 0 {
            v.push("ALS needs tol > 0 and positive iteration caps".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// JSON has no infinity; `ρ = +∞` travels as the string `"inf"`.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("nan")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number or \"inf\", got {other:?}"
                ))),
            },
        }
    }
}

/// Per-channel scaling (optionally centering) frozen from the first window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

fn channel_stats(data: &[DVector<f64>], center: bool) -> (Vec<f64>, Vec<f64>) {
    let dim = data.first().map_or(0, |v| v.len());
    let n = data.len().max(1) as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|i| {
            if center {
                data.iter().map(|v| v[i]).sum::<f64>() / n
            } else {
                0.0
            }
        })
        .collect();
    let scale = (0..dim)
        .map(|i| {
            let s = (data.iter().map(|v| (v[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

impl Standardizer {
    /// Without centering the scale is the root mean square about zero.
    pub fn fit(outputs: &[DVector<f64>], inputs: &[DVector<f64>], center: bool) -> Self {
        let (output_mean, output_std) = channel_stats(outputs, center);
        let (input_mean, input_std) = channel_stats(inputs, center);
        Self {
            output_mean,
            output_std,
            input_mean,
            input_std,
        }
    }

    pub fn identity(d: usize, dc: usize) -> Self {
        Self {
            output_mean: vec![0.0; d],
            output_std: vec![1.0; d],
            input_mean: vec![0.0; dc],
            input_std: vec![1.0; dc],
        }
    }

    pub fn output(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(y.len(), |i, _| (y[i] - self.output_mean[i]) / self.output_std[i])
    }

    pub fn input(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| (u[i] - self.input_mean[i]) / self.input_std[i])
    }

    pub fn restore_output(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| z[i] * self.output_std[i] + self.output_mean[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelStats {
    pub last_fit: f64,
    pub selections: u64,
}

/// The current model set `θ`.
#[derive(Debug, Clone, Default)]
pub struct RegimeDatabase {
    pub models: Vec<DelayFreeModel>,
    /// CP component behind each model.
    pub sources: Vec<usize>,
    pub active_index: usize,
    pub last_factors: Option<CpFactors>,
    pub stats: Vec<ModelStats>,
}

impl RegimeDatabase {
    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn active(&self) -> Option<&DelayFreeModel> {
        self.models.get(self.active_index)
    }

    /// Markov parameters read directly off the CP component of each model,
    /// before realization. Delay readout uses these: a realization is capped
    /// at order `s·min(d, dc)` and cannot always carry a long delay.
    pub fn markov_estimates(&self, config: &MomentConfig) -> Result<Vec<MarkovSequence>> {
        let Some(factors) = &self.last_factors else {
            return Ok(Vec::new());
        };
        self.sources
            .iter()
            .map(|&r| realization::factor_to_markov(&factors.component(r), config))
            .collect()
    }

    /// Markov estimates for every component of the last decomposition,
    /// including those whose realization was discarded.
    pub fn component_markov(&self, config: &MomentConfig) -> Result<Vec<MarkovSequence>> {
        let Some(factors) = &self.last_factors else {
            return Ok(Vec::new());
        };
        (0..factors.rank())
            .map(|r| realization::factor_to_markov(&factors.component(r), config))
            .collect()
    }

    pub fn footprint_bytes(&self) -> usize {
        let models: usize = self.models.iter().map(|m| m.parameter_count() * 8).sum();
        let factors = self.last_factors.as_ref().map_or(0, CpFactors::footprint_bytes);
        models + factors + self.stats.len() * std::mem::size_of::<ModelStats>()
    }
}

/// Outcome of one [`EngineState::update`].
#[derive(Debug, Clone)]
pub struct UpdateReport {
    /// `l_s` forecasts in the original units.
    pub forecast: Vec<DVector<f64>>,
    /// Same forecasts on the standardized scale.
    pub forecast_standardized: Vec<DVector<f64>>,
    pub adapted: bool,
    /// `L_c` of the previous active model, when one existed.
    pub gate_fit: Option<f64>,
    /// `L_c` of the model that is active after the update.
    pub window_fit: f64,
    pub als_iters: usize,
    pub als_residual: Option<f64>,
    pub elapsed: Duration,
    pub active_regime: usize,
    pub database_size: usize,
    /// [`EngineState::footprint_bytes`] after the update.
    pub footprint_bytes: usize,
    /// Set when a decomposition was attempted but the previous database
    /// had to be kept.
    pub adaptation_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EngineState {
    config: EngineConfig,
    tensor: SystemTensor,
    database: RegimeDatabase,
    standardizer: Option<Standardizer>,
    standardize: bool,
    updates: u64,
}

impl EngineState {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let tensor = SystemTensor::new(config.moment)?;
        Ok(Self {
            config,
            tensor,
            database: RegimeDatabase::default(),
            standardizer: None,
            standardize: true,
            updates: 0,
        })
    }

    /// Disables per-channel standardization (data are used as given).
    pub fn without_standardization(mut self) -> Self {
        self.standardize = false;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }
    pub fn tensor(&self) -> &SystemTensor {
        &self.tensor
    }
    pub fn database(&self) -> &RegimeDatabase {
        &self.database
    }
    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Bytes of numeric state held across updates.
    pub fn footprint_bytes(&self) -> usize {
        self.tensor.footprint_bytes() + self.database.footprint_bytes()
    }

    /// Upper bound on [`footprint_bytes`](Self::footprint_bytes) fixed by
    /// the configuration alone: the tensor, `R` models of the largest
    /// realizable order and the factors.
    pub fn footprint_bound(&self) -> usize {
        let cfg = &self.config;
        let (d, dc) = (cfg.moment.output_dim, cfg.moment.input_dim);
        let n = cfg.realization.lag * d.min(dc);
        let n = match cfg.realization.state_dim {
            crate::realization::StateDim::Fixed(k) => k.max(n),
            crate::realization::StateDim::Auto { .. } => n,
        };
        let model = (n * n + n * dc + d * n) * 8;
        let factors = 3 * cfg.moment.mode_size() * cfg.rank * 8;
        self.tensor.footprint_bytes() + cfg.rank * (model + std::mem::size_of::<ModelStats>()) + factors
    }

    /// Standardized window trajectory plus standardized future inputs.
    pub fn prepare_window(
        &self,
        outputs: &[DVector<f64>],
        inputs: &[DVector<f64>],
    ) -> Result<(Trajectory, Vec<DVector<f64>>)> {
        let std = self
            .standardizer
            .as_ref()
            .ok_or_else(|| Error::Precondition("no standardization statistics yet".into()))?;
        let l_c = self.config.window_len;
        let ys = outputs.iter().map(|y| std.output(y)).collect();
        let us: Vec<DVector<f64>> = inputs.iter().map(|u| std.input(u)).collect();
        let future = us[l_c..].to_vec();
        let window = Trajectory::new(ys, us[..l_c].to_vec())?;
        Ok((window, future))
    }

    /// One step of the online loop over `l_c` outputs and the matching
    /// `l_c + l_s` inputs (window inputs followed by the future inputs).
    pub fn update(&mut self, outputs: &[DVector<f64>], inputs: &[DVector<f64>]) -> Result<UpdateReport> {
        let started = Instant::now();
        let cfg = self.config.clone();
        let (l_c, l_s) = (cfg.window_len, cfg.horizon);
        if outputs.len() != l_c {
            return Err(Error::shape("window outputs", l_c, outputs.len()));
        }
        if inputs.len() != l_c + l_s {
            return Err(Error::shape("window and future inputs", l_c + l_s, inputs.len()));
        }
        let (d, dc) = (cfg.moment.output_dim, cfg.moment.input_dim);
        if let Some(y) = outputs.iter().find(|y| y.len() != d) {
            return Err(Error::shape(
                "window outputs",
                format!("vectors of length {d}"),
                y.len(),
            ));
        }
        if let Some(u) = inputs.iter().find(|u| u.len() != dc) {
            return Err(Error::shape(
                "window inputs",
                format!("vectors of length {dc}"),
                u.len(),
            ));
        }
        if self.standardizer.is_none() {
            self.standardizer = Some(if self.standardize {
                Standardizer::fit(outputs, &inputs[..l_c], cfg.center)
            } else {
                Standardizer::identity(d, dc)
            });
        }
        let (window, future) = self.prepare_window(outputs, inputs)?;

        self.tensor
            .accumulate_window(&window)
            .map_err(|e| e.in_stage("moment collection"))?;

        let gate_fit = match self.database.active() {
            Some(model) => Some(filtering::window_error(model, &window, &cfg.noise).unwrap_or(f64::INFINITY)),
            None => None,
        };
        let needs_adaptation = gate_fit.is_none_or(|fit| fit >= cfg.rho);

        let mut adapted = false;
        let mut als_iters = 0;
        let mut als_residual = None;
        let mut adaptation_error = None;
        let mut window_fit = gate_fit.unwrap_or(f64::INFINITY);

        if needs_adaptation {
            match self.adapt(&window) {
                Ok((iters, residual, fit)) => {
                    adapted = true;
                    als_iters = iters;
                    als_residual = Some(residual);
                    window_fit = fit;
                }
                Err(e) if self.database.is_empty() => {
                    return Err(match e {
                        Error::EmptyTensor => Error::ColdStart,
                        other => other,
                    })
                }
                Err(e) => {
                    log::warn!("adaptation failed, keeping previous models: {e}");
                    adaptation_error = Some(e.to_string());
                }
            }
        }

        let active = self.database.active_index;
        let footprint_bytes = self.footprint_bytes();
        if let Some(stats) = self.database.stats.get_mut(active) {
            stats.last_fit = window_fit;
            stats.selections += 1;
        }
        let model = self.database.active().ok_or(Error::EmptyDatabase)?;
        let forecast_standardized =
            filtering::forecast(model, &window, &future, &cfg.noise).map_err(|e| e.in_stage("future prediction"))?;
        let std = self.standardizer.as_ref().expect("set above");
        let forecast = forecast_standardized.iter().map(|z| std.restore_output(z)).collect();
        self.updates += 1;

        Ok(UpdateReport {
            forecast,
            forecast_standardized,
            adapted,
            gate_fit,
            window_fit,
            als_iters,
            als_residual,
            elapsed: started.elapsed(),
            active_regime: active,
            database_size: self.database.models.len(),
            footprint_bytes,
            adaptation_error,
        })
    }

    /// Decomposes the tensor, realizes and rescales the models, and selects
    /// the active one. The database is only replaced on success.
    fn adapt(&mut self, window: &Trajectory) -> Result<(usize, f64, f64)> {
        let cfg = &self.config;
        let view = self.tensor.normalized_view()?;
        if view.norm() == 0.0 {
            return Err(Error::EmptyTensor);
        }
        let opts = match (&self.database.last_factors, cfg.als.warm_start) {
            (Some(f), true) if f.rank() == cfg.rank && f.dim() == view.dim() => AlsOptions {
                max_iters: cfg.als.warm_max_iters,
                tol: cfg.als.tol,
                seed: cfg.als.seed,
                init: AlsInit::Warm(f.clone()),
            },
            _ => AlsOptions {
                max_iters: cfg.als.cold_max_iters,
                tol: cfg.als.tol,
                seed: cfg.als.seed,
                init: AlsInit::Cold,
            },
        };
        let outcome = cpd::cp_als(&view, cfg.rank, &opts).map_err(|e| e.in_stage("tensor decomposition"))?;
        let batch = realization::realize_all(&outcome.factors, &cfg.moment, &cfg.realization)
            .map_err(|e| e.in_stage("realization"))?;
        let skip = cfg.moment.max_lag().min(window.len() / 2);
        let mut realized: Vec<(DelayFreeModel, usize)> = batch
            .models
            .into_iter()
            .zip(batch.sources)
            .map(|(mut m, src)| {
                rescale_input_map(&mut m, window, skip);
                (m, src)
            })
            .collect();
        // Unstable realizations come from sampling noise in the tensor and
        // blow up multi-step forecasts. Drop them, or shrink them to the
        // stability margin when nothing stable is left.
        if realized
            .iter()
            .any(|(m, _)| linalg::spectral_radius(m.transition()) < 1.0)
        {
            realized.retain(|(m, _)| linalg::spectral_radius(m.transition()) < 1.0);
        } else {
            for (m, src) in &mut realized {
                log::debug!("shrinking unstable realization of component {src}");
                *m = shrink_to_margin(m);
            }
        }
        let (models, sources): (Vec<_>, Vec<_>) = realized.into_iter().unzip();
        let (active, fit) =
            filtering::select_regime(&models, window, &cfg.noise).map_err(|e| e.in_stage("regime selection"))?;
        self.database = RegimeDatabase {
            stats: vec![ModelStats::default(); models.len()],
            models,
            sources,
            active_index: active,
            last_factors: Some(outcome.factors),
        };
        Ok((outcome.iters, outcome.residual, fit))
    }

    /// Runs [`filtering::forecast`] with the active model on a prepared
    /// window.
    pub fn forecast_with_active(&self, window: &Trajectory, future: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let model = self.database.active().ok_or(Error::EmptyDatabase)?;
        filtering::forecast(model, window, future, &self.config.noise)
    }
}

/// Least-squares scalar on the input map so the zero-state response best
/// matches the window outputs (first `skip` steps ignored).
pub fn rescale_input_map(model: &mut DelayFreeModel, window: &Trajectory, skip: usize) {
    let Ok(sim) = simulate_delay_free(
        model,
        &window.inputs[..window.len()],
        &DVector::zeros(model.state_dim()),
    ) else {
        return;
    };
    let mut num = 0.0;
    let mut den = 0.0;
    let mut energy = 0.0;
    for (pred, y) in sim.outputs.iter().zip(&window.outputs).skip(skip) {
        num += pred.dot(y);
        den += pred.dot(pred);
        energy += y.dot(y);
    }
    if den > 1e-12 * energy.max(f64::MIN_POSITIVE) && num.is_finite() && den.is_finite() {
        model.scale_input_map(num / den);
    }
}

const STABILITY_MARGIN: f64 = 0.99;

fn shrink_to_margin(model: &DelayFreeModel) -> DelayFreeModel {
    let radius = linalg::spectral_radius(model.transition());
    let a = model.transition() * (STABILITY_MARGIN / radius);
    DelayFreeModel::new(a, model.input_map().clone(), model.output_map().clone()).expect("shapes unchanged")
}

/// Outcome of [`run_stream`].
#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub reports: Vec<UpdateReport>,
    /// Index of the first window sample of each update.
    pub window_starts: Vec<usize>,
    /// Forecast errors on the standardized scale.
    pub metrics: MetricsSummary,
    /// Persistence baseline over the same forecast targets.
    pub persistence: MetricsSummary,
    pub final_state: EngineState,
}

/// Slices `trajectory` into consecutive non-overlapping windows and runs
/// the engine on each, scoring every forecast against the realized outputs.
pub fn run_stream(config: EngineConfig, trajectory: &Trajectory) -> Result<StreamOutcome> {
    run_stream_with(EngineState::new(config)?, trajectory)
}

pub fn run_stream_with(mut state: EngineState, trajectory: &Trajectory) -> Result<StreamOutcome> {
    let (l_c, l_s) = (state.config.window_len, state.config.horizon);
    let total = trajectory.len();
    if total < l_c + l_s || trajectory.inputs.len() < l_c + l_s {
        return Err(Error::Data(format!(
            "trajectory of length {total} is shorter than one window plus horizon ({})",
            l_c + l_s
        )));
    }
    let mut reports = Vec::new();
    let mut window_starts = Vec::new();
    let mut metrics = MetricsSummary::new(l_s);
    let mut persistence = MetricsSummary::new(l_s);
    let mut start = 0;
    while start + l_c + l_s <= total {
        let end = start + l_c;
        let report = state.update(&trajectory.outputs[start..end], &trajectory.inputs[start..end + l_s])?;
        let std = state.standardizer.as_ref().expect("set by the first update");
        let last = std.output(&trajectory.outputs[end - 1]);
        for (h, pred) in report.forecast_standardized.iter().enumerate() {
            let actual = std.output(&trajectory.outputs[end + h]);
            metrics.record_all((pred - &actual).iter().copied());
            persistence.record_all((&last - &actual).iter().copied());
        }
        reports.push(report);
        window_starts.push(start);
        start = end;
    }
    Ok(StreamOutcome {
        reports,
        window_starts,
        metrics,
        persistence,
        final_state: state,
    })
}

/// Persistence forecasts for a window (re-exported for harnesses).
pub fn persistence_forecast(window: &Trajectory, horizon: usize) -> Vec<DVector<f64>> {
    datagen::persistence_baseline(window, horizon)
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout: one version byte, then length-prefixed sections (u64 LE byte
// count + payload): config JSON, standardizer JSON (empty if none),
// tensor snapshot, model block, factor block.

fn write_section<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_section<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    put_u64(buf, m.nrows() as u64);
    put_u64(buf, m.ncols() as u64);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint section".into()))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.f64()?;
            }
        }
        Ok(m)
    }
}

impl EngineState {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&[CHECKPOINT_VERSION])?;
        let config = serde_json::to_vec(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        write_section(&mut w, &config)?;
        let std = match &self.standardizer {
            Some(s) => serde_json::to_vec(s).map_err(|e| Error::Format(e.to_string()))?,
            None => Vec::new(),
        };
        write_section(&mut w, &std)?;
        let mut tensor = Vec::new();
        self.tensor.write_snapshot(&mut tensor)?;
        write_section(&mut w, &tensor)?;

        let mut models = Vec::new();
        put_u64(&mut models, self.database.models.len() as u64);
        put_u64(&mut models, self.database.active_index as u64);
        for (m, &src) in self.database.models.iter().zip(&self.database.sources) {
            put_u64(&mut models, src as u64);
            put_matrix(&mut models, m.transition());
            put_matrix(&mut models, m.input_map());
            put_matrix(&mut models, m.output_map());
        }
        write_section(&mut w, &models)?;

        let mut factors = Vec::new();
        match &self.database.last_factors {
            Some(f) => {
                put_u64(&mut factors, 1);
                for k in 0..3 {
                    put_matrix(&mut factors, f.mode(k));
                }
            }
            None => put_u64(&mut factors, 0),
        }
        write_section(&mut w, &factors)?;
        w.write_all(&self.updates.to_le_bytes())?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", version[0])));
        }
        let config: EngineConfig =
            serde_json::from_slice(&read_section(&mut r)?).map_err(|e| Error::Format(e.to_string()))?;
        let std_bytes = read_section(&mut r)?;
        let standardizer = if std_bytes.is_empty() {
            None
        } else {
            Some(serde_json::from_slice(&std_bytes).map_err(|e| Error::Format(e.to_string()))?)
        };
        let tensor = SystemTensor::read_snapshot(read_section(&mut r)?.as_slice())?;
        if tensor.config() != &config.moment {
            return Err(Error::Format("tensor snapshot does not match the config echo".into()));
        }

        let model_bytes = read_section(&mut r)?;
        let mut cur = Cursor {
            data: &model_bytes,
            pos: 0,
        };
        let count = cur.u64()? as usize;
        let active_index = cur.u64()? as usize;
        let mut models = Vec::with_capacity(count.min(1024));
        let mut sources = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            sources.push(cur.u64()? as usize);
            let (a, b, c) = (cur.matrix()?, cur.matrix()?, cur.matrix()?);
            models.push(DelayFreeModel::new(a, b, c)?);
        }
        if count > 0 && active_index >= count {
            return Err(Error::Format("active index out of range".into()));
        }

        let factor_bytes = read_section(&mut r)?;
        let mut cur = Cursor {
            data: &factor_bytes,
            pos: 0,
        };
        let last_factors = if cur.u64()? == 1 {
            let (m1, m2, m3) = (cur.matrix()?, cur.matrix()?, cur.matrix()?);
            Some(CpFactors::new(m1, m2, m3)?)
        } else {
            None
        };
        let mut updates = [0u8; 8];
        r.read_exact(&mut updates)?;

        let mut state = EngineState::new(config)?;
        state.tensor = tensor;
        state.standardizer = standardizer;
        state.database = RegimeDatabase {
            stats: vec![ModelStats::default(); models.len()],
            models,
            sources,
            active_index,
            last_factors,
        };
        state.updates = u64::from_le_bytes(updates);
        Ok(state)
    }
}
