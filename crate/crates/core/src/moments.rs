//! Streaming third-order moment tensor over grouped output–input pairs.
//!
//! For a sub-window start `τ` and lags `(k1, k2, k3)` the three grouped
//! moments are `m_j = vec(y(t_j) u(t̃_j)ᵀ)` with
//!
//! ```text
//! t1 = τ + k1            t̃1 = τ
//! t2 = τ + k1 + k2 + 1   t̃2 = τ + k1 + 1
//! t3 = τ + k1 + k2 + k3 + 2   t̃3 = τ + k1 + k2 + 2
//! ```
//!
//! and `m1 ∘ m2 ∘ m3` is added to block `(J(k1), J(k2), J(k3))`. Under iid
//! zero-mean inputs the expected block of a single regime is
//! `vec(g_k1) ∘ vec(g_k2) ∘ vec(g_k3)`, so each regime contributes one
//! rank-one term built from its stacked Markov parameters.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{self, CpFactors};
use crate::error::{Error, Result};
use crate::syslin::Trajectory;
use crate::tensor::Tensor3;

pub const DEFAULT_MODE_CAP: usize = 256;
pub const SNAPSHOT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub output_dim: usize,
    pub input_dim: usize,
    /// Lag parameter `s`; the tensor holds `2s` lags.
    pub lag: usize,
    /// Per-window forgetting factor `λ ∈ (0, 1]`.
    #[serde(default = "default_forgetting")]
    pub forgetting: f64,
}

fn default_forgetting() -> f64 {
    1.0
}

impl MomentConfig {
    pub fn new(output_dim: usize, input_dim: usize, lag: usize) -> Self {
        Self {
            output_dim,
            input_dim,
            lag,
            forgetting: 1.0,
        }
    }

    pub fn with_forgetting(mut self, forgetting: f64) -> Self {
        self.forgetting = forgetting;
        self
    }

    /// `k_max = 2s`.
    pub fn max_lag(&self) -> usize {
        2 * self.lag
    }

    /// `p = d · dc`.
    pub fn block_size(&self) -> usize {
        self.output_dim * self.input_dim
    }

    /// `D = k_max · p`.
    pub fn mode_size(&self) -> usize {
        self.max_lag() * self.block_size()
    }

    /// Shortest window that admits a sub-window start for every triplet.
    pub fn min_window(&self) -> usize {
        3 * self.max_lag() + 3
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.output_dim == 0 {
            v.push("output_dim must be >= 1".to_string());
        }
        if self.input_dim == 0 {
            v.push("input_dim must be >= 1".to_string());
        }
        if self.lag == 0 {
            v.push("lag s must be >= 1".to_string());
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            v.push(format!("forgetting must lie in (0, 1], got {}", self.forgetting));
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

#[derive(Debug, Clone, PartialEq)]
pub struct SystemTensor {
    config: MomentConfig,
    data: Tensor3,
    sample_count: u64,
    /// λ-discounted number of contributions per `(k1, k2, k3)` block.
    block_weights: Vec<f64>,
}

impl SystemTensor {
    pub fn new(config: MomentConfig) -> Result<Self> {
        Self::with_mode_cap(config, DEFAULT_MODE_CAP)
    }

    pub fn with_mode_cap(config: MomentConfig, cap: usize) -> Result<Self> {
        config.validate()?;
        let dim = config.mode_size();
        if dim > cap {
            return Err(Error::Capacity { size: dim, cap });
        }
        let k = config.max_lag();
        Ok(Self {
            config,
            data: Tensor3::zeros(dim),
            sample_count: 0,
            block_weights: vec![0.0; k * k * k],
        })
    }

    pub fn config(&self) -> &MomentConfig {
        &self.config
    }

    pub fn data(&self) -> &Tensor3 {
        &self.data
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn block_weights(&self) -> &[f64] {
        &self.block_weights
    }

    /// Total λ-discounted contribution weight.
    pub fn effective_weight(&self) -> f64 {
        self.block_weights.iter().sum()
    }

    /// Bytes held by the tensor payload and block weights.
    pub fn footprint_bytes(&self) -> usize {
        (self.data.as_slice().len() + self.block_weights.len()) * std::mem::size_of::<f64>()
    }

    fn block_index(&self, k1: usize, k2: usize, k3: usize) -> usize {
        let k = self.config.max_lag();
        ((k1 - 1) * k + (k2 - 1)) * k + (k3 - 1)
    }

    /// Adds every admissible grouped moment of `window` and returns the
    /// number of rank-one contributions. The existing content is discounted
    /// by `λ` once before the additions.
    pub fn accumulate_window(&mut self, window: &Trajectory) -> Result<u64> {
        let cfg = self.config;
        let (d, dc, p) = (cfg.output_dim, cfg.input_dim, cfg.block_size());
        let kmax = cfg.max_lag();
        let len = window.len();
        if len < cfg.min_window() {
            return Err(Error::WindowTooShort {
                required: cfg.min_window(),
                actual: len,
            });
        }
        if window.inputs.len() < len {
            return Err(Error::shape("window.inputs", len, window.inputs.len()));
        }
        if window.outputs.iter().any(|y| y.len() != d) {
            return Err(Error::shape(
                "window.outputs",
                format!("vectors of length {d}"),
                "mismatch",
            ));
        }
        if window.inputs[..len].iter().any(|u| u.len() != dc) {
            return Err(Error::shape(
                "window.inputs",
                format!("vectors of length {dc}"),
                "mismatch",
            ));
        }

        // z[lag][t] = vec(y(t) u(t - lag)ᵀ), column-major vec.
        let stride = len * p;
        let mut z = vec![0.0; kmax * stride];
        for lag in 1..=kmax {
            for t in lag..len {
                let (y, u) = (&window.outputs[t], &window.inputs[t - lag]);
                let base = (lag - 1) * stride + t * p;
                for j in 0..dc {
                    for i in 0..d {
                        z[base + i + d * j] = y[i] * u[j];
                    }
                }
            }
        }

        let lambda = cfg.forgetting;
        if lambda != 1.0 {
            self.data.scale(lambda);
            self.block_weights.iter_mut().for_each(|w| *w *= lambda);
        }

        let dim = self.data.dim();
        let slab = p * dim * dim;
        self.data
            .as_mut_slice()
            .par_chunks_mut(slab)
            .enumerate()
            .for_each(|(k1_idx, chunk)| {
                let k1 = k1_idx + 1;
                for k2 in 1..=kmax {
                    for k3 in 1..=kmax {
                        let span = k1 + k2 + k3 + 2;
                        let col2 = (k2 - 1) * p;
                        let col3 = (k3 - 1) * p;
                        for tau in 0..len - span {
                            let m1 = &z[(k1 - 1) * stride + (tau + k1) * p..][..p];
                            let m2 = &z[(k2 - 1) * stride + (tau + k1 + k2 + 1) * p..][..p];
                            let m3 = &z[(k3 - 1) * stride + (tau + span) * p..][..p];
                            for (a, &w1) in m1.iter().enumerate() {
                                if w1 == 0.0 {
                                    continue;
                                }
                                for (b, &v2) in m2.iter().enumerate() {
                                    let w2 = w1 * v2;
                                    if w2 == 0.0 {
                                        continue;
                                    }
                                    let row = &mut chunk[(a * dim + col2 + b) * dim + col3..][..p];
                                    for (dst, &v3) in row.iter_mut().zip(m3) {
                                        *dst += w2 * v3;
                                    }
                                }
                            }
                        }
                    }
                }
            });

        let mut added = 0u64;
        for k1 in 1..=kmax {
            for k2 in 1..=kmax {
                for k3 in 1..=kmax {
                    let n = len - (k1 + k2 + k3 + 2);
                    let idx = self.block_index(k1, k2, k3);
                    self.block_weights[idx] += n as f64;
                    added += n as u64;
                }
            }
        }
        self.sample_count += added;
        Ok(added)
    }

    /// Per-block discounted mean of the accumulated moments.
    pub fn normalized_view(&self) -> Result<Tensor3> {
        if self.sample_count == 0 {
            return Err(Error::EmptyTensor);
        }
        let cfg = self.config;
        let (p, kmax) = (cfg.block_size(), cfg.max_lag());
        let dim = self.data.dim();
        let mut out = self.data.clone();
        let buf = out.as_mut_slice();
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    let w = self.block_weights[self.block_index(a / p + 1, b / p + 1, c / p + 1)];
                    let o = (a * dim + b) * dim + c;
                    buf[o] = if w > 0.0 { buf[o] / w } else { 0.0 };
                }
            }
        }
        debug_assert_eq!(self.block_weights.len(), kmax * kmax * kmax);
        Ok(out)
    }

    /// Relative Frobenius residual of `factors` against the normalized view.
    pub fn mismatch(&self, factors: &CpFactors) -> Result<f64> {
        let view = self.normalized_view()?;
        let norm = view.norm();
        if norm == 0.0 {
            return Err(Error::EmptyTensor);
        }
        let recon = cpd::reconstruct(factors, view.dim())?;
        Ok(view.distance(&recon) / norm)
    }

    /// Serializes the tensor: six little-endian 8-byte header words
    /// `(d, dc, s, λ, sample_count, version)`, the `D³` payload, then the
    /// `k_max³` block weights.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg = &self.config;
        for v in [cfg.output_dim as u64, cfg.input_dim as u64, cfg.lag as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&cfg.forgetting.to_le_bytes())?;
        w.write_all(&self.sample_count.to_le_bytes())?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        for v in self.data.as_slice().iter().chain(&self.block_weights) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let d = u64::from_le_bytes(next(&mut r)?) as usize;
        let dc = u64::from_le_bytes(next(&mut r)?) as usize;
        let s = u64::from_le_bytes(next(&mut r)?) as usize;
        let lambda = f64::from_le_bytes(next(&mut r)?);
        let count = u64::from_le_bytes(next(&mut r)?);
        let version = u64::from_le_bytes(next(&mut r)?);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported tensor snapshot version {version}")));
        }
        let config = MomentConfig::new(d, dc, s).with_forgetting(lambda);
        let mut tensor = Self::with_mode_cap(config, usize::MAX)?;
        for v in tensor.data.as_mut_slice().iter_mut() {
            *v = f64::from_le_bytes(next(&mut r)?);
        }
        for v in tensor.block_weights.iter_mut() {
            *v = f64::from_le_bytes(next(&mut r)?);
        }
        tensor.sample_count = count;
        Ok(tensor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn scalar_window(ys: &[f64], us: &[f64]) -> Trajectory {
        Trajectory::new(
            ys.iter().map(|&v| DVector::from_element(1, v)).collect(),
            us.iter().map(|&v| DVector::from_element(1, v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn mode_sizes() {
        for (d, dc, s, dim) in [(1, 1, 3, 6), (2, 2, 3, 24), (4, 4, 3, 96)] {
            let t = SystemTensor::new(MomentConfig::new(d, dc, s)).unwrap();
            assert_eq!(t.dim(), dim);
            assert_eq!(t.sample_count(), 0);
            assert!(t.data().as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let err = SystemTensor::new(MomentConfig::new(5, 5, 6)).unwrap_err();
        assert!(matches!(err, Error::Capacity { size: 300, cap: 256 }));
        assert!(SystemTensor::with_mode_cap(MomentConfig::new(1, 1, 3), 4).is_err());
    }

    #[test]
    fn short_window_reports_requirement() {
        let mut t = SystemTensor::new(MomentConfig::new(1, 1, 1)).unwrap();
        let err = t.accumulate_window(&scalar_window(&[1.0; 8], &[1.0; 8])).unwrap_err();
        assert!(matches!(err, Error::WindowTooShort { required: 9, actual: 8 }));
    }

    #[test]
    fn zero_outputs_only_count() {
        let mut t = SystemTensor::new(MomentConfig::new(1, 1, 1)).unwrap();
        let n = t.accumulate_window(&scalar_window(&[0.0; 9], &[1.0; 9])).unwrap();
        assert!(n > 0);
        assert_eq!(t.sample_count(), n);
        assert!(t.data().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn minimal_window_single_term_per_triplet() {
        // s = 1, k_max = 2, length 9: only triplet (2,2,2) at τ = 0 is
        // dropped by the bound (span 8 leaves one start).
        let ys: Vec<f64> = (0..9).map(|t| 1.0 + t as f64).collect();
        let us: Vec<f64> = (0..9).map(|t| 0.5 - 0.1 * t as f64).collect();
        let mut t = SystemTensor::new(MomentConfig::new(1, 1, 1)).unwrap();
        t.accumulate_window(&scalar_window(&ys, &us)).unwrap();
        let m = |tt: usize, tu: usize| ys[tt] * us[tu];
        let expected = m(2, 0) * m(5, 3) * m(8, 6);
        assert!((t.data()[(1, 1, 1)] - expected).abs() < 1e-15);
        assert_eq!(t.block_weights()[7], 1.0);
    }

    #[test]
    fn forgetting_discounts_previous_windows() {
        let ys: Vec<f64> = (0..12).map(|t| (t as f64).sin()).collect();
        let us: Vec<f64> = (0..12).map(|t| (t as f64 * 0.7).cos()).collect();
        let w = scalar_window(&ys, &us);
        let mut plain = SystemTensor::new(MomentConfig::new(1, 1, 1)).unwrap();
        plain.accumulate_window(&w).unwrap();
        let mut decayed = SystemTensor::new(MomentConfig::new(1, 1, 1).with_forgetting(0.5)).unwrap();
        decayed.accumulate_window(&w).unwrap();
        decayed.accumulate_window(&w).unwrap();
        for (a, b) in decayed.data().as_slice().iter().zip(plain.data().as_slice()) {
            assert!((a - 1.5 * b).abs() < 1e-12);
        }
        // The discounted mean of identical windows is the single-window mean.
        let v1 = plain.normalized_view().unwrap();
        let v2 = decayed.normalized_view().unwrap();
        assert!(v1.max_abs_diff(&v2) < 1e-12);
    }

    #[test]
    fn normalized_view_requires_samples() {
        let t = SystemTensor::new(MomentConfig::new(1, 1, 1)).unwrap();
        assert!(matches!(t.normalized_view(), Err(Error::EmptyTensor)));
    }

    #[test]
    fn snapshot_round_trip() {
        let ys: Vec<f64> = (0..15).map(|t| (t as f64 * 0.3).sin()).collect();
        let us: Vec<f64> = (0..15).map(|t| if t % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let mut t = SystemTensor::new(MomentConfig::new(1, 1, 2).with_forgetting(0.9)).unwrap();
        t.accumulate_window(&scalar_window(&ys, &us)).unwrap();
        let mut buf = Vec::new();
        t.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (6 + 64 + 64));
        let back = SystemTensor::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut bad = buf.clone();
        bad[40] = 9;
        assert!(matches!(
            SystemTensor::read_snapshot(bad.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
