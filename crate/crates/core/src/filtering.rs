//! Kalman filtering, RTS smoothing, window scoring, regime selection and
//! multi-step forecasting for delay-free models.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::syslin::{DelayFreeModel, Trajectory};

/// Isotropic noise and prior settings: `Γ = process_var·I`,
/// `R = obs_var·I`, `P(0) = prior_var·I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub process_var: f64,
    pub obs_var: f64,
    pub prior_var: f64,
    /// Prior mean `μ(0)`; `None` means the zero vector.
    #[serde(default)]
    pub prior_mean: Option<Vec<f64>>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            process_var: 1e-4,
            obs_var: 1e-2,
            prior_var: 1.0,
            prior_mean: None,
        }
    }
}

impl NoiseSpec {
    pub fn new(process_var: f64, obs_var: f64, prior_var: f64) -> Self {
        Self {
            process_var,
            obs_var,
            prior_var,
            prior_mean: None,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [
            ("process_var", self.process_var),
            ("obs_var", self.obs_var),
            ("prior_var", self.prior_var),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be a positive finite number, got {x}"));
            }
        }
        v
    }

    fn prior_mean_for(&self, n: usize) -> Result<DVector<f64>> {
        match &self.prior_mean {
            None => Ok(DVector::zeros(n)),
            Some(m) if m.len() == n => Ok(DVector::from_column_slice(m)),
            Some(m) => Err(Error::shape("prior_mean", n, m.len())),
        }
    }
}

/// Forward-pass record. Index `t` refers to window step `t`.
#[derive(Debug, Clone)]
pub struct BeliefTrace {
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    /// `ŷ(t) = C μ̂(t)`.
    pub one_step_predictions: Vec<DVector<f64>>,
}

impl BeliefTrace {
    pub fn len(&self) -> usize {
        self.filtered_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filtered_means.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SmoothedTrace {
    pub smoothed_means: Vec<DVector<f64>>,
    /// `V(t)` for `t < T-1`; the last step has no gain.
    pub smoother_gains: Vec<DMatrix<f64>>,
}

fn check_window(model: &DelayFreeModel, window: &Trajectory) -> Result<()> {
    if window.is_empty() {
        return Err(Error::Precondition("window must be non-empty".into()));
    }
    if window.inputs.len() < window.len() {
        return Err(Error::shape("window.inputs", window.len(), window.inputs.len()));
    }
    if let Some(y) = window.outputs.iter().find(|y| y.len() != model.output_dim()) {
        return Err(Error::shape("window.outputs", model.output_dim(), y.len()));
    }
    if let Some(u) = window.inputs.iter().find(|u| u.len() != model.input_dim()) {
        return Err(Error::shape("window.inputs", model.input_dim(), u.len()));
    }
    Ok(())
}

fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Kalman forward pass.
///
/// Step 0 takes the prior as its prediction; from step 1 on the prediction
/// is `μ̂(t) = A μ(t-1) + B u(t-1)`, `P̂(t) = A P(t-1) Aᵀ + Γ`.
pub fn kalman_forward(model: &DelayFreeModel, window: &Trajectory, noise: &NoiseSpec) -> Result<BeliefTrace> {
    check_window(model, window)?;
    let bad = noise.violations();
    if !bad.is_empty() {
        return Err(Error::Config(bad));
    }
    let n = model.state_dim();
    let d = model.output_dim();
    let (a, b, c) = (model.transition(), model.input_map(), model.output_map());
    let gamma = DMatrix::<f64>::identity(n, n) * noise.process_var;
    let r = DMatrix::<f64>::identity(d, d) * noise.obs_var;
    let eye = DMatrix::<f64>::identity(n, n);
    let len = window.len();

    let mut trace = BeliefTrace {
        filtered_means: Vec::with_capacity(len),
        filtered_covs: Vec::with_capacity(len),
        predicted_means: Vec::with_capacity(len),
        predicted_covs: Vec::with_capacity(len),
        gains: Vec::with_capacity(len),
        one_step_predictions: Vec::with_capacity(len),
    };

    let mut mu = noise.prior_mean_for(n)?;
    let mut p = eye.clone() * noise.prior_var;
    for t in 0..len {
        let (mu_hat, mut p_hat) = if t == 0 {
            (mu.clone(), p.clone())
        } else {
            (a * &mu + b * &window.inputs[t - 1], a * &p * a.transpose() + &gamma)
        };
        linalg::symmetrize(&mut p_hat);
        let y_hat = c * &mu_hat;
        let mut s = c * &p_hat * c.transpose() + &r;
        linalg::symmetrize(&mut s);
        if !all_finite_mat(&s) {
            return Err(Error::Numerical {
                what: "innovation covariance",
                step: t,
            });
        }
        let chol = linalg::cholesky_with_jitter(&s).ok_or(Error::Conditioning {
            what: "innovation covariance",
            step: t,
        })?;
        // K = P̂ Cᵀ S⁻¹  ⇔  Kᵀ = S⁻¹ C P̂ᵀ
        let gain = chol.solve(&(c * &p_hat)).transpose();
        let innovation = &window.outputs[t] - &y_hat;
        mu = &mu_hat + &gain * innovation;
        p = (&eye - &gain * c) * &p_hat;
        linalg::symmetrize(&mut p);
        if !all_finite_vec(&mu) || !all_finite_mat(&p) {
            return Err(Error::Numerical {
                what: "filtered state",
                step: t,
            });
        }
        trace.predicted_means.push(mu_hat);
        trace.predicted_covs.push(p_hat);
        trace.gains.push(gain);
        trace.one_step_predictions.push(y_hat);
        trace.filtered_means.push(mu.clone());
        trace.filtered_covs.push(p.clone());
    }
    Ok(trace)
}

/// Rauch–Tung–Striebel backward pass over a forward trace.
pub fn rts_smoother(model: &DelayFreeModel, trace: &BeliefTrace) -> Result<SmoothedTrace> {
    let len = trace.len();
    if len == 0 {
        return Err(Error::Precondition("trace must be non-empty".into()));
    }
    let a = model.transition();
    let mut smoothed = vec![DVector::zeros(model.state_dim()); len];
    let mut gains = vec![DMatrix::zeros(0, 0); len - 1];
    smoothed[len - 1] = trace.filtered_means[len - 1].clone();
    for t in (0..len - 1).rev() {
        let chol = linalg::cholesky_with_jitter(&trace.predicted_covs[t + 1]).ok_or(Error::Conditioning {
            what: "predicted covariance",
            step: t + 1,
        })?;
        // V = P Aᵀ P̂⁻¹  ⇔  Vᵀ = P̂⁻¹ A P (both covariances symmetric)
        let v = chol.solve(&(a * &trace.filtered_covs[t])).transpose();
        let correction = &smoothed[t + 1] - &trace.predicted_means[t + 1];
        smoothed[t] = &trace.filtered_means[t] + &v * correction;
        if !all_finite_vec(&smoothed[t]) {
            return Err(Error::Numerical {
                what: "smoothed state",
                step: t,
            });
        }
        gains[t] = v;
    }
    Ok(SmoothedTrace {
        smoothed_means: smoothed,
        smoother_gains: gains,
    })
}

/// Mean one-step-ahead prediction error norm over the window.
pub fn window_error(model: &DelayFreeModel, window: &Trajectory, noise: &NoiseSpec) -> Result<f64> {
    window_error_from(model, window, noise, 0)
}

/// [`window_error`] ignoring the first `skip` steps.
pub fn window_error_from(model: &DelayFreeModel, window: &Trajectory, noise: &NoiseSpec, skip: usize) -> Result<f64> {
    let trace = kalman_forward(model, window, noise)?;
    Ok(mean_error(&trace, window, skip))
}

fn mean_error(trace: &BeliefTrace, window: &Trajectory, skip: usize) -> f64 {
    let errs: Vec<f64> = trace
        .one_step_predictions
        .iter()
        .zip(&window.outputs)
        .skip(skip)
        .map(|(p, y)| (y - p).norm())
        .collect();
    if errs.is_empty() {
        0.0
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    }
}

/// Index of the model with the lowest [`window_error`]; ties go to the
/// lowest index. Models whose filter fails numerically are passed over.
pub fn select_regime(database: &[DelayFreeModel], window: &Trajectory, noise: &NoiseSpec) -> Result<(usize, f64)> {
    if database.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    let scores: Vec<Result<f64>> = database.par_iter().map(|m| window_error(m, window, noise)).collect();
    let mut best: Option<(usize, f64)> = None;
    let mut first_err = None;
    for (i, score) in scores.into_iter().enumerate() {
        match score {
            Ok(e) if e.is_finite() => {
                if best.is_none_or(|(_, b)| e < b) {
                    best = Some((i, e));
                }
            }
            Ok(_) => {}
            Err(err) => {
                first_err.get_or_insert(err);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(err)) => Err(err),
        (None, None) => Err(Error::Numerical {
            what: "window error",
            step: 0,
        }),
    }
}

/// State at the last window index from filtering plus smoothing.
pub fn anchor_state(model: &DelayFreeModel, window: &Trajectory, noise: &NoiseSpec) -> Result<DVector<f64>> {
    let trace = kalman_forward(model, window, noise)?;
    let smoothed = rts_smoother(model, &trace)?;
    Ok(smoothed.smoothed_means[window.len() - 1].clone())
}

/// Forecasts the `future_inputs.len()` outputs following the window.
///
/// The smoothed state at the last window step is advanced with the last
/// window input to give the state at the first future step; afterwards
/// `x ← A x + B u` runs over the future inputs.
pub fn forecast(
    model: &DelayFreeModel,
    window: &Trajectory,
    future_inputs: &[DVector<f64>],
    noise: &NoiseSpec,
) -> Result<Vec<DVector<f64>>> {
    if future_inputs.is_empty() {
        return Err(Error::Precondition("forecast horizon must be >= 1".into()));
    }
    if let Some(u) = future_inputs.iter().find(|u| u.len() != model.input_dim()) {
        return Err(Error::shape("future_inputs", model.input_dim(), u.len()));
    }
    let x_end = anchor_state(model, window, noise)?;
    let last_input = &window.inputs[window.len() - 1];
    Ok(roll_out(model, x_end, last_input, future_inputs))
}

/// Deterministic continuation: emits `y = C x` after each `x ← A x + B u`,
/// starting with `first_input` and then all but the last of
/// `future_inputs`.
pub fn roll_out(
    model: &DelayFreeModel,
    state: DVector<f64>,
    first_input: &DVector<f64>,
    future_inputs: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let (a, b, c) = (model.transition(), model.input_map(), model.output_map());
    let mut x = state;
    let mut out = Vec::with_capacity(future_inputs.len());
    let mut u = first_input;
    for next in future_inputs {
        x = a * &x + b * u;
        out.push(c * &x);
        u = next;
    }
    out
}
