//! Linear state-space systems with input delay, their delay-free
//! equivalents, and impulse-response (Markov parameter) machinery.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Default relative cutoff used by [`detect_delay`].
pub const DEFAULT_DELAY_THRESHOLD: f64 = 0.1;

/// One regime: `x(t+1) = A x(t) + B u(t-τ)`, `y(t) = C x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDelaySystem {
    transition: DMatrix<f64>,
    input_map: DMatrix<f64>,
    output_map: DMatrix<f64>,
    delay: usize,
}

impl TimeDelaySystem {
    pub fn new(
        transition: DMatrix<f64>,
        input_map: DMatrix<f64>,
        output_map: DMatrix<f64>,
        delay: usize,
    ) -> Result<Self> {
        check_triplet(&transition, &input_map, &output_map)?;
        Ok(Self {
            transition,
            input_map,
            output_map,
            delay,
        })
    }

    /// Scalar system with `A = a`, `B = b`, `C = c`.
    pub fn scalar(a: f64, b: f64, c: f64, delay: usize) -> Self {
        Self {
            transition: DMatrix::from_element(1, 1, a),
            input_map: DMatrix::from_element(1, 1, b),
            output_map: DMatrix::from_element(1, 1, c),
            delay,
        }
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }
    pub fn input_map(&self) -> &DMatrix<f64> {
        &self.input_map
    }
    pub fn output_map(&self) -> &DMatrix<f64> {
        &self.output_map
    }
    pub fn delay(&self) -> usize {
        self.delay
    }
    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.input_map.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.output_map.nrows()
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.transition)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }
}

/// Delay-free realization `x(t+1) = A x(t) + B u(t)`, `y(t) = C x(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayFreeModel {
    transition: DMatrix<f64>,
    input_map: DMatrix<f64>,
    output_map: DMatrix<f64>,
}

impl DelayFreeModel {
    pub fn new(transition: DMatrix<f64>, input_map: DMatrix<f64>, output_map: DMatrix<f64>) -> Result<Self> {
        check_triplet(&transition, &input_map, &output_map)?;
        if transition.nrows() == 0 {
            return Err(Error::shape("transition", "state_dim >= 1", 0));
        }
        Ok(Self {
            transition,
            input_map,
            output_map,
        })
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }
    pub fn input_map(&self) -> &DMatrix<f64> {
        &self.input_map
    }
    pub fn output_map(&self) -> &DMatrix<f64> {
        &self.output_map
    }
    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.input_map.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.output_map.nrows()
    }

    /// Multiplies the input map by `factor`; scales every Markov block by
    /// the same amount.
    pub fn scale_input_map(&mut self, factor: f64) {
        self.input_map *= factor;
    }

    /// Number of `f64` values held by the three matrices.
    pub fn parameter_count(&self) -> usize {
        self.transition.len() + self.input_map.len() + self.output_map.len()
    }
}

fn check_triplet(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    let k = a.nrows();
    if a.ncols() != k {
        return Err(Error::shape(
            "transition",
            format!("{k}x{k}"),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    if b.nrows() != k {
        return Err(Error::shape(
            "input_map",
            format!("{k} rows"),
            format!("{} rows", b.nrows()),
        ));
    }
    if c.ncols() != k {
        return Err(Error::shape(
            "output_map",
            format!("{k} columns"),
            format!("{} columns", c.ncols()),
        ));
    }
    Ok(())
}

/// Impulse response blocks `g_1, …, g_K`, each `d × dc`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovSequence {
    blocks: Vec<DMatrix<f64>>,
}

impl MarkovSequence {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::shape("blocks", "horizon >= 1", 0))?;
        let shape = first.shape();
        if let Some(bad) = blocks.iter().find(|b| b.shape() != shape) {
            return Err(Error::shape(
                "blocks",
                format!("{}x{}", shape.0, shape.1),
                format!("{}x{}", bad.nrows(), bad.ncols()),
            ));
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// `g_j` with the 1-based indexing used for impulse responses.
    pub fn block(&self, j: usize) -> &DMatrix<f64> {
        &self.blocks[j - 1]
    }

    pub fn horizon(&self) -> usize {
        self.blocks.len()
    }
    pub fn output_dim(&self) -> usize {
        self.blocks[0].nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.blocks[0].ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|&v| v == 0.0))
    }

    /// Largest blockwise Frobenius distance to `other`.
    pub fn max_block_distance(&self, other: &MarkovSequence) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Time-aligned output/input record, optionally with the generating regime
/// index at every step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub outputs: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub regime_labels: Option<Vec<usize>>,
}

impl Trajectory {
    pub fn new(outputs: Vec<DVector<f64>>, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.len() < outputs.len() {
            return Err(Error::shape(
                "inputs",
                format!("length >= {}", outputs.len()),
                inputs.len(),
            ));
        }
        Ok(Self {
            outputs,
            inputs,
            regime_labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.outputs.len() {
            return Err(Error::shape("regime_labels", self.outputs.len(), labels.len()));
        }
        self.regime_labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.first().map_or(0, |y| y.len())
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    /// Sub-trajectory over output indices `start..end`; inputs are cut to the
    /// same range.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            outputs: self.outputs[start..end].to_vec(),
            inputs: self.inputs[start..end].to_vec(),
            regime_labels: self.regime_labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }
}

fn check_inputs(inputs: &[DVector<f64>], dc: usize) -> Result<()> {
    if let Some((i, u)) = inputs.iter().enumerate().find(|(_, u)| u.len() != dc) {
        return Err(Error::shape(
            "inputs",
            format!("vectors of length {dc}"),
            format!("length {} at index {i}", u.len()),
        ));
    }
    Ok(())
}

/// Simulates the delayed recursion. `prehistory[j]` is `u(j - τ)`, so the
/// slice holds the τ inputs preceding `t = 0`, oldest first.
pub fn simulate_delayed(
    sys: &TimeDelaySystem,
    inputs: &[DVector<f64>],
    x0: &DVector<f64>,
    prehistory: &[DVector<f64>],
) -> Result<Trajectory> {
    if inputs.is_empty() {
        return Err(Error::Precondition("inputs must be non-empty".into()));
    }
    if x0.len() != sys.state_dim() {
        return Err(Error::shape("x0", sys.state_dim(), x0.len()));
    }
    if prehistory.len() != sys.delay {
        return Err(Error::shape("prehistory", sys.delay, prehistory.len()));
    }
    check_inputs(inputs, sys.input_dim())?;
    check_inputs(prehistory, sys.input_dim())
        .map_err(|_| Error::shape("prehistory", sys.input_dim(), "mismatched vector length"))?;

    let tau = sys.delay;
    let mut x = x0.clone();
    let mut outputs = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        outputs.push(&sys.output_map * &x);
        let delayed = if t >= tau { &inputs[t - tau] } else { &prehistory[t] };
        x = &sys.transition * &x + &sys.input_map * delayed;
    }
    Trajectory::new(outputs, inputs.to_vec())
}

pub fn simulate_delay_free(model: &DelayFreeModel, inputs: &[DVector<f64>], x0: &DVector<f64>) -> Result<Trajectory> {
    if x0.len() != model.state_dim() {
        return Err(Error::shape("x0", model.state_dim(), x0.len()));
    }
    check_inputs(inputs, model.input_dim())?;
    let mut x = x0.clone();
    let mut outputs = Vec::with_capacity(inputs.len());
    for u in inputs {
        outputs.push(&model.output_map * &x);
        x = &model.transition * &x + &model.input_map * u;
    }
    Trajectory::new(outputs, inputs.to_vec())
}

/// `g_j = 0` for `j ≤ τ`, `g_j = C A^{j-τ-1} B` afterwards.
pub fn markov_parameters_delayed(sys: &TimeDelaySystem, horizon: usize) -> Result<MarkovSequence> {
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be >= 1".into()));
    }
    let (d, dc) = (sys.output_dim(), sys.input_dim());
    let mut blocks = Vec::with_capacity(horizon);
    let mut a_pow_b = sys.input_map.clone();
    for j in 1..=horizon {
        if j <= sys.delay {
            blocks.push(DMatrix::zeros(d, dc));
        } else {
            blocks.push(&sys.output_map * &a_pow_b);
            a_pow_b = &sys.transition * &a_pow_b;
        }
    }
    MarkovSequence::new(blocks)
}

/// `g_ℓ = C A^{ℓ-1} B`.
pub fn markov_parameters_free(model: &DelayFreeModel, horizon: usize) -> Result<MarkovSequence> {
    if horizon == 0 {
        return Err(Error::Precondition("horizon must be >= 1".into()));
    }
    let mut blocks = Vec::with_capacity(horizon);
    let mut a_pow_b = model.input_map.clone();
    for _ in 0..horizon {
        blocks.push(&model.output_map * &a_pow_b);
        a_pow_b = &model.transition * &a_pow_b;
    }
    MarkovSequence::new(blocks)
}

/// Augmented-state realization of a delayed system.
///
/// The state is `[x; u(t-τ); u(t-τ+1); …; u(t-1)]`. Each step feeds the
/// oldest buffered input into `x`, shifts the buffer and appends `u(t)`.
pub fn embed_delay(sys: &TimeDelaySystem) -> DelayFreeModel {
    let (k, dc, d, tau) = (sys.state_dim(), sys.input_dim(), sys.output_dim(), sys.delay);
    if tau == 0 {
        return DelayFreeModel {
            transition: sys.transition.clone(),
            input_map: sys.input_map.clone(),
            output_map: sys.output_map.clone(),
        };
    }
    let n = k + tau * dc;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (k, k)).copy_from(&sys.transition);
    a.view_mut((0, k), (k, dc)).copy_from(&sys.input_map);
    for slot in 0..tau - 1 {
        let row = k + slot * dc;
        let col = k + (slot + 1) * dc;
        a.view_mut((row, col), (dc, dc)).fill_with_identity();
    }
    let mut b = DMatrix::zeros(n, dc);
    b.view_mut((k + (tau - 1) * dc, 0), (dc, dc)).fill_with_identity();
    let mut c = DMatrix::zeros(d, n);
    c.view_mut((0, 0), (d, k)).copy_from(&sys.output_map);
    DelayFreeModel {
        transition: a,
        input_map: b,
        output_map: c,
    }
}

/// Largest singular value of each block, normalized so the maximum is one.
pub fn spectral_norm_profile(seq: &MarkovSequence) -> Vec<f64> {
    let norms: Vec<f64> = seq.blocks.iter().map(linalg::spectral_norm).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![0.0; norms.len()];
    }
    norms.into_iter().map(|v| v / max).collect()
}

/// Number of leading profile entries strictly below `rel_threshold`.
pub fn detect_delay(profile: &[f64], rel_threshold: f64) -> usize {
    profile.iter().take_while(|&&v| v < rel_threshold).count()
}
