//! From CP components to Markov sequences, and from Markov sequences to
//! delay-free state-space models (Ho-Kalman).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::CpFactors;
use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::MomentConfig;
use crate::syslin::{DelayFreeModel, MarkovSequence};

pub const DEFAULT_ENERGY_THRESHOLD: f64 = 0.999;
const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateDim {
    Fixed(usize),
    /// Smallest order whose cumulative squared singular values reach the
    /// threshold.
    Auto {
        energy_threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizationOptions {
    pub state_dim: StateDim,
    /// Hankel block rows `s`.
    pub lag: usize,
}

impl RealizationOptions {
    pub fn auto(lag: usize) -> Self {
        Self {
            state_dim: StateDim::Auto {
                energy_threshold: DEFAULT_ENERGY_THRESHOLD,
            },
            lag,
        }
    }

    pub fn fixed(lag: usize, n: usize) -> Self {
        Self {
            state_dim: StateDim::Fixed(n),
            lag,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.lag == 0 {
            v.push("realization lag must be >= 1".into());
        }
        match self.state_dim {
            StateDim::Fixed(0) => v.push("fixed state_dim must be >= 1".into()),
            StateDim::Auto { energy_threshold } if !(energy_threshold > 0.0 && energy_threshold < 1.0) => {
                v.push(format!("energy_threshold must lie in (0, 1), got {energy_threshold}"))
            }
            _ => {}
        }
        v
    }
}

/// Reads a Markov sequence off one CP component.
///
/// The slice norms of `q1 ∘ q2 ∘ q3` over modes 2–3 give
/// `v[a] = |q1[a]|·‖q2‖·‖q3‖`; after dividing by `‖v‖^{2/3}` the sign of
/// `q1[a]` is restored and the vector is cut into `k_max` blocks of
/// `vec(g_k)` (column-major).
pub fn factor_to_markov(component: &[DVector<f64>; 3], config: &MomentConfig) -> Result<MarkovSequence> {
    let (d, dc, p) = (config.output_dim, config.input_dim, config.block_size());
    let dim = config.mode_size();
    for (m, v) in component.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::shape(["q1", "q2", "q3"][m], dim, v.len()));
        }
    }
    let [q1, q2, q3] = component;
    let other = q2.norm() * q3.norm();
    let v: DVector<f64> = q1.map(|x| x.abs() * other);
    let vnorm = v.norm();
    let scale = if vnorm > 0.0 { vnorm.powf(2.0 / 3.0) } else { 1.0 };
    let signed: Vec<f64> = v
        .iter()
        .zip(q1.iter())
        .map(|(&mag, &q)| if vnorm > 0.0 { q.signum() * mag / scale } else { 0.0 })
        .collect();
    let blocks = (0..config.max_lag())
        .map(|k| DMatrix::from_fn(d, dc, |i, j| signed[k * p + i + d * j]))
        .collect();
    MarkovSequence::new(blocks)
}

/// Block Hankel `H` with block `(r, c) = g_{r+c-1}`, `r = 1..s`, `c = 1..s+1`.
pub fn block_hankel(seq: &MarkovSequence, s: usize) -> DMatrix<f64> {
    let (d, dc) = (seq.output_dim(), seq.input_dim());
    let mut h = DMatrix::zeros(s * d, (s + 1) * dc);
    for r in 0..s {
        for c in 0..=s {
            h.view_mut((r * d, c * dc), (d, dc)).copy_from(&seq.blocks()[r + c]);
        }
    }
    h
}

pub fn ho_kalman(seq: &MarkovSequence, opts: &RealizationOptions) -> Result<DelayFreeModel> {
    let s = opts.lag;
    if s == 0 {
        return Err(Error::Precondition("Hankel lag s must be >= 1".into()));
    }
    if seq.horizon() < 2 * s {
        return Err(Error::Horizon {
            horizon: seq.horizon(),
            required: 2 * s,
        });
    }
    if seq.is_zero() {
        return Err(Error::Degenerate);
    }
    let (d, dc) = (seq.output_dim(), seq.input_dim());
    let h = block_hankel(seq, s);
    let h_minus = h.columns(0, s * dc).into_owned();
    let h_plus = h.columns(dc, s * dc).into_owned();

    let svd = linalg::svd(&h_minus);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    // nalgebra does not promise ordering; sort descending.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let smax = sigma[0];
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(Error::Degenerate);
    }
    let numerical_rank = sigma.iter().filter(|&&x| x > PINV_CUTOFF * smax).count();
    let cap = s * d.min(dc);

    let n = match opts.state_dim {
        StateDim::Fixed(n) => {
            if n == 0 || n > sigma.len() {
                return Err(Error::Precondition(format!(
                    "fixed state_dim {n} outside 1..={}",
                    sigma.len()
                )));
            }
            n
        }
        StateDim::Auto { energy_threshold } => {
            let total: f64 = sigma.iter().map(|x| x * x).sum();
            let mut acc = 0.0;
            let mut n = sigma.len();
            for (i, x) in sigma.iter().enumerate() {
                acc += x * x;
                if acc >= energy_threshold * total {
                    n = i + 1;
                    break;
                }
            }
            n.min(cap).min(numerical_rank).max(1)
        }
    };

    let mut obs = DMatrix::zeros(s * d, n);
    let mut ctrl = DMatrix::zeros(n, s * dc);
    for (col, &idx) in order.iter().take(n).enumerate() {
        let root = sigma[col].sqrt();
        obs.set_column(col, &(u.column(idx) * root));
        ctrl.set_row(col, &(v_t.row(idx) * root));
    }
    let c = obs.rows(0, d).into_owned();
    let b = ctrl.columns(0, dc).into_owned();
    let a = linalg::pinv(&obs, PINV_CUTOFF) * h_plus * linalg::pinv(&ctrl, PINV_CUTOFF);
    DelayFreeModel::new(a, b, c)
}

/// Models realized from a set of CP components.
#[derive(Debug, Clone)]
pub struct RealizedBatch {
    pub models: Vec<DelayFreeModel>,
    /// CP component index behind each model.
    pub sources: Vec<usize>,
    /// Components that could not be realized, with the reason.
    pub skipped: Vec<(usize, String)>,
}

pub fn realize_all(factors: &CpFactors, config: &MomentConfig, opts: &RealizationOptions) -> Result<RealizedBatch> {
    let results: Vec<(usize, Result<DelayFreeModel>)> = (0..factors.rank())
        .into_par_iter()
        .map(|r| {
            let out = factor_to_markov(&factors.component(r), config).and_then(|seq| ho_kalman(&seq, opts));
            (r, out)
        })
        .collect();
    let mut batch = RealizedBatch {
        models: Vec::new(),
        sources: Vec::new(),
        skipped: Vec::new(),
    };
    for (r, res) in results {
        match res {
            Ok(model) if model_is_finite(&model) => {
                batch.models.push(model);
                batch.sources.push(r);
            }
            Ok(_) => batch.skipped.push((r, "non-finite realization".into())),
            Err(e) => {
                log::debug!("component {r} skipped: {e}");
                batch.skipped.push((r, e.to_string()));
            }
        }
    }
    if batch.models.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    Ok(batch)
}

fn model_is_finite(m: &DelayFreeModel) -> bool {
    [m.transition(), m.input_map(), m.output_map()]
        .iter()
        .all(|x| x.iter().all(|v| v.is_finite()))
}
