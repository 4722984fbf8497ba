//! Synthetic regime-switching streams, random stable systems, and the
//! brute-force oracles the tests and acceptance suite compare against.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::MomentConfig;
use crate::syslin::{DelayFreeModel, TimeDelaySystem, Trajectory};
use crate::tensor::Tensor3;

/// Spectral radius ceiling used by the random system generators.
pub const MAX_RANDOM_RADIUS: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputDistribution {
    Gaussian {
        sigma: f64,
    },
    Uniform {
        amplitude: f64,
    },
    #[default]
    Rademacher,
}

impl InputDistribution {
    pub fn variance(&self) -> f64 {
        match *self {
            InputDistribution::Gaussian { sigma } => sigma * sigma,
            InputDistribution::Uniform { amplitude } => amplitude * amplitude / 3.0,
            InputDistribution::Rademacher => 1.0,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            InputDistribution::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            InputDistribution::Uniform { amplitude } => rng.random_range(-amplitude..=amplitude),
            InputDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            InputDistribution::Gaussian { sigma } if !(sigma > 0.0) => {
                Err(Error::Scenario(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            InputDistribution::Uniform { amplitude } if !(amplitude > 0.0) => Err(Error::Scenario(format!(
                "uniform amplitude must be > 0, got {amplitude}"
            ))),
            _ => Ok(()),
        }
    }
}

/// A change point: from `start` on, regime `regime` generates the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangePoint {
    pub start: usize,
    pub regime: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub regimes: Vec<TimeDelaySystem>,
    pub schedule: Vec<ChangePoint>,
    pub input_dist: InputDistribution,
    pub obs_noise_std: f64,
    pub length: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Regimes alternate in blocks of `segment` steps starting with regime 0.
    pub fn alternating(regimes: Vec<TimeDelaySystem>, segment: usize, length: usize, seed: u64) -> Self {
        let count = regimes.len().max(1);
        let schedule = (0..length.div_ceil(segment.max(1)))
            .map(|i| ChangePoint {
                start: i * segment,
                regime: i % count,
            })
            .collect();
        Self {
            regimes,
            schedule,
            input_dist: InputDistribution::Rademacher,
            obs_noise_std: 0.0,
            length,
            seed,
        }
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.obs_noise_std = std;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .regimes
            .first()
            .ok_or_else(|| Error::Scenario("at least one regime is required".into()))?;
        let (d, dc) = (first.output_dim(), first.input_dim());
        for (i, r) in self.regimes.iter().enumerate() {
            if r.output_dim() != d || r.input_dim() != dc {
                return Err(Error::Scenario(format!(
                    "regime {i} has mismatched input/output dimensions"
                )));
            }
            let radius = r.spectral_radius();
            if radius >= 1.0 {
                return Err(Error::Scenario(format!(
                    "regime {i} is unstable (spectral radius {radius:.4})"
                )));
            }
        }
        match self.schedule.first() {
            Some(cp) if cp.start == 0 => {}
            _ => return Err(Error::Scenario("schedule must start at time 0".into())),
        }
        if self.schedule.windows(2).any(|w| w[1].start <= w[0].start) {
            return Err(Error::Scenario("schedule must be strictly increasing".into()));
        }
        if let Some(cp) = self.schedule.iter().find(|cp| cp.regime >= self.regimes.len()) {
            return Err(Error::Scenario(format!(
                "schedule references unknown regime {}",
                cp.regime
            )));
        }
        if !(self.obs_noise_std >= 0.0) {
            return Err(Error::Scenario("obs_noise_std must be >= 0".into()));
        }
        if self.length == 0 {
            return Err(Error::Scenario("length must be >= 1".into()));
        }
        self.input_dist.validate()
    }

    /// Generating regime at time `t`.
    pub fn regime_at(&self, t: usize) -> usize {
        self.schedule
            .iter()
            .take_while(|cp| cp.start <= t)
            .last()
            .map_or(0, |cp| cp.regime)
    }
}

/// Samples iid inputs and runs the scheduled regimes.
///
/// Every regime switch resets the latent state to zero; the delayed input
/// `u(t-τ)` is read from the shared input stream (zero before `t = 0`).
/// Gaussian observation noise is added to the outputs only.
pub fn generate(spec: &ScenarioSpec) -> Result<Trajectory> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dc = spec.regimes[0].input_dim();
    let d = spec.regimes[0].output_dim();
    let inputs: Vec<DVector<f64>> = (0..spec.length)
        .map(|_| DVector::from_fn(dc, |_, _| spec.input_dist.sample(&mut rng)))
        .collect();
    let noise =
        Normal::new(0.0, spec.obs_noise_std.max(f64::MIN_POSITIVE)).map_err(|e| Error::Scenario(e.to_string()))?;

    let mut outputs = Vec::with_capacity(spec.length);
    let mut labels = Vec::with_capacity(spec.length);
    let mut current = usize::MAX;
    let mut x = DVector::zeros(0);
    let zero_u = DVector::zeros(dc);
    for t in 0..spec.length {
        let r = spec.regime_at(t);
        let sys = &spec.regimes[r];
        if r != current {
            current = r;
            x = DVector::zeros(sys.state_dim());
        }
        let mut y = sys.output_map() * &x;
        if spec.obs_noise_std > 0.0 {
            y.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
        outputs.push(y);
        labels.push(r);
        let delayed = if t >= sys.delay() {
            &inputs[t - sys.delay()]
        } else {
            &zero_u
        };
        x = sys.transition() * &x + sys.input_map() * delayed;
    }
    debug_assert!(outputs.iter().all(|y| y.len() == d));
    Trajectory::new(outputs, inputs)?.with_labels(labels)
}

fn random_transition<R: Rng>(rng: &mut R, k: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(rng));
    let radius = crate::linalg::spectral_radius(&a);
    let target = rng.random_range(0.3..MAX_RANDOM_RADIUS);
    if radius > 0.0 {
        a * (target / radius)
    } else {
        a
    }
}

/// Random system with spectral radius in `[0.3, 0.9)`.
pub fn random_stable_system<R: Rng>(rng: &mut R, k: usize, dc: usize, d: usize, delay: usize) -> TimeDelaySystem {
    let a = random_transition(rng, k);
    let b = DMatrix::from_fn(k, dc, |_, _| StandardNormal.sample(rng));
    let c = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(rng));
    TimeDelaySystem::new(a, b, c, delay).expect("dimensions are consistent by construction")
}

pub fn random_stable_model<R: Rng>(rng: &mut R, n: usize, dc: usize, d: usize) -> DelayFreeModel {
    let sys = random_stable_system(rng, n, dc, d, 0);
    DelayFreeModel::new(
        sys.transition().clone(),
        sys.input_map().clone(),
        sys.output_map().clone(),
    )
    .expect("dimensions are consistent by construction")
}

/// Reference system tensor by explicit nested loops over triplets,
/// sub-window starts and entries. Returns the raw (unnormalized) sum.
pub fn oracle_moment_tensor(window: &Trajectory, config: &MomentConfig) -> Result<Tensor3> {
    let (d, p, kmax) = (config.output_dim, config.block_size(), config.max_lag());
    let len = window.len();
    if len < config.min_window() {
        return Err(Error::WindowTooShort {
            required: config.min_window(),
            actual: len,
        });
    }
    let y = |t: usize, i: usize| window.outputs[t][i];
    let u = |t: usize, j: usize| window.inputs[t][j];
    let mut out = Tensor3::zeros(config.mode_size());
    for k1 in 1..=kmax {
        for k2 in 1..=kmax {
            for k3 in 1..=kmax {
                let mut tau = 0;
                while tau + k1 + k2 + k3 + 2 < len {
                    let (t1, t2, t3) = (tau + k1, tau + k1 + k2 + 1, tau + k1 + k2 + k3 + 2);
                    let (s1, s2, s3) = (tau, tau + k1 + 1, tau + k1 + k2 + 2);
                    for a in 0..p {
                        for b in 0..p {
                            for c in 0..p {
                                let m1 = y(t1, a % d) * u(s1, a / d);
                                let m2 = y(t2, b % d) * u(s2, b / d);
                                let m3 = y(t3, c % d) * u(s3, c / d);
                                out[((k1 - 1) * p + a, (k2 - 1) * p + b, (k3 - 1) * p + c)] += m1 * m2 * m3;
                            }
                        }
                    }
                    tau += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Repeats the last observed output `horizon` times.
pub fn persistence_baseline(window: &Trajectory, horizon: usize) -> Vec<DVector<f64>> {
    window
        .outputs
        .last()
        .map(|y| vec![y.clone(); horizon])
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Scenario files

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegimeFile {
    delay: usize,
    transition: Vec<Vec<f64>>,
    input_map: Vec<Vec<f64>>,
    output_map: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    length: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    obs_noise_std: f64,
    #[serde(default)]
    input: InputDistribution,
    regime: Vec<RegimeFile>,
    schedule: Vec<ChangePoint>,
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Scenario(format!("`{name}` rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        let regimes = file
            .regime
            .iter()
            .map(|r| {
                TimeDelaySystem::new(
                    matrix_from_rows("transition", &r.transition)?,
                    matrix_from_rows("input_map", &r.input_map)?,
                    matrix_from_rows("output_map", &r.output_map)?,
                    r.delay,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = ScenarioSpec {
            regimes,
            schedule: file.schedule,
            input_dist: file.input,
            obs_noise_std: file.obs_noise_std,
            length: file.length,
            seed: file.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let file = ScenarioFile {
            length: self.length,
            seed: self.seed,
            obs_noise_std: self.obs_noise_std,
            input: self.input_dist,
            regime: self
                .regimes
                .iter()
                .map(|r| RegimeFile {
                    delay: r.delay(),
                    transition: matrix_to_rows(r.transition()),
                    input_map: matrix_to_rows(r.input_map()),
                    output_map: matrix_to_rows(r.output_map()),
                })
                .collect(),
            schedule: self.schedule.clone(),
        };
        toml::to_string(&file).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).map_err(Error::at_path(path))?)
    }
}
