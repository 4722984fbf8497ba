//! Rank-R CP decomposition of cubic order-3 tensors by alternating least
//! squares.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_COLD_ITERS: usize = 200;
pub const DEFAULT_WARM_ITERS: usize = 50;
const RIDGE: f64 = 1e-10;

/// Three `D × R` factor matrices; column `i` of each is one component.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    modes: [DMatrix<f64>; 3],
}

impl CpFactors {
    pub fn new(mode1: DMatrix<f64>, mode2: DMatrix<f64>, mode3: DMatrix<f64>) -> Result<Self> {
        let shape = mode1.shape();
        if shape.1 == 0 {
            return Err(Error::Precondition("CP rank must be >= 1".into()));
        }
        for (name, m) in [("mode2", &mode2), ("mode3", &mode3)] {
            if m.shape() != shape {
                return Err(Error::shape(
                    name,
                    format!("{}x{}", shape.0, shape.1),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
        }
        Ok(Self {
            modes: [mode1, mode2, mode3],
        })
    }

    pub fn zeros(dim: usize, rank: usize) -> Self {
        let z = DMatrix::zeros(dim, rank);
        Self {
            modes: [z.clone(), z.clone(), z],
        }
    }

    /// Builds factors from `(q1, q2, q3)` triples.
    pub fn from_components(components: &[[DVector<f64>; 3]]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Precondition("CP rank must be >= 1".into()))?;
        let dim = first[0].len();
        let mut modes: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::zeros(dim, components.len()));
        for (r, comp) in components.iter().enumerate() {
            for (m, v) in comp.iter().enumerate() {
                if v.len() != dim {
                    return Err(Error::shape("component", dim, v.len()));
                }
                modes[m].set_column(r, v);
            }
        }
        Ok(Self { modes })
    }

    pub fn rank(&self) -> usize {
        self.modes[0].ncols()
    }

    pub fn dim(&self) -> usize {
        self.modes[0].nrows()
    }

    pub fn mode(&self, m: usize) -> &DMatrix<f64> {
        &self.modes[m]
    }

    pub fn component(&self, r: usize) -> [DVector<f64>; 3] {
        std::array::from_fn(|m| self.modes[m].column(r).into_owned())
    }

    pub fn is_finite(&self) -> bool {
        self.modes.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn footprint_bytes(&self) -> usize {
        3 * self.dim() * self.rank() * std::mem::size_of::<f64>()
    }

    /// Flips signs so that the largest-magnitude entry of every mode-1
    /// vector is positive, compensating in mode 2.
    pub fn canonicalize_signs(&mut self) {
        for r in 0..self.rank() {
            let col = self.modes[0].column(r);
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            if pivot < 0.0 {
                self.modes[0].column_mut(r).neg_mut();
                self.modes[1].column_mut(r).neg_mut();
            }
        }
    }

    /// Equalizes the three vector norms of every component without changing
    /// the represented tensor.
    fn balance(&mut self) {
        for r in 0..self.rank() {
            let norms: [f64; 3] = std::array::from_fn(|m| self.modes[m].column(r).norm());
            if norms.contains(&0.0) {
                continue;
            }
            let g = (norms[0] * norms[1] * norms[2]).cbrt();
            for (m, &n) in norms.iter().enumerate() {
                self.modes[m].column_mut(r).scale_mut(g / n);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlsInit {
    Cold,
    Warm(CpFactors),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub init: AlsInit,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self::cold(0)
    }
}

impl AlsOptions {
    pub fn cold(seed: u64) -> Self {
        Self {
            max_iters: DEFAULT_COLD_ITERS,
            tol: DEFAULT_TOL,
            seed,
            init: AlsInit::Cold,
        }
    }

    pub fn warm(factors: CpFactors) -> Self {
        Self {
            max_iters: DEFAULT_WARM_ITERS,
            tol: DEFAULT_TOL,
            seed: 0,
            init: AlsInit::Warm(factors),
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

#[derive(Debug, Clone)]
pub struct AlsOutcome {
    pub factors: CpFactors,
    pub iters: usize,
    /// Final relative residual `‖T − T̂‖_F / ‖T‖_F`.
    pub residual: f64,
    /// Relative residual after each sweep.
    pub history: Vec<f64>,
}

/// Fits `T ≈ Σᵢ q1ᵢ ∘ q2ᵢ ∘ q3ᵢ` by cyclic per-mode ridge least squares.
pub fn cp_als(tensor: &Tensor3, rank: usize, opts: &AlsOptions) -> Result<AlsOutcome> {
    let dim = tensor.dim();
    if rank == 0 {
        return Err(Error::Precondition("CP rank must be >= 1".into()));
    }
    if rank > dim {
        return Err(Error::Rank { rank, dim });
    }
    if opts.max_iters == 0 || opts.tol <= 0.0 {
        return Err(Error::Precondition("ALS needs max_iters >= 1 and tol > 0".into()));
    }
    if !tensor.is_finite() {
        return Err(Error::Data("tensor contains non-finite values".into()));
    }
    let norm = tensor.norm();
    if norm == 0.0 {
        return Err(Error::EmptyTensor);
    }

    let mut factors = match &opts.init {
        AlsInit::Cold => random_factors(dim, rank, opts.seed),
        AlsInit::Warm(f) => {
            if f.dim() != dim || f.rank() != rank {
                return Err(Error::shape(
                    "warm start",
                    format!("{dim}x{rank}"),
                    format!("{}x{}", f.dim(), f.rank()),
                ));
            }
            f.clone()
        }
    };

    let mut prev = relative_residual(tensor, &factors, norm);
    let mut history = Vec::new();
    let mut iters = 0;
    while iters < opts.max_iters {
        for mode in 0..3 {
            let mttkrp = mttkrp(tensor, &factors, mode);
            let (o1, o2) = match mode {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let gram = (factors.modes[o1].transpose() * &factors.modes[o1])
                .component_mul(&(factors.modes[o2].transpose() * &factors.modes[o2]));
            match solve_normal(&gram, &mttkrp) {
                Some(updated) => factors.modes[mode] = updated,
                None => {
                    return Err(Error::Convergence {
                        iters,
                        reason: format!("singular normal equations in mode {}", mode + 1),
                        last: Box::new(factors),
                    })
                }
            }
        }
        factors.balance();
        iters += 1;
        if !factors.is_finite() {
            return Err(Error::Convergence {
                iters,
                reason: "factors became non-finite".into(),
                last: Box::new(factors),
            });
        }
        let res = relative_residual(tensor, &factors, norm);
        history.push(res);
        let done = (prev - res).abs() < opts.tol;
        prev = res;
        if done {
            break;
        }
    }
    factors.canonicalize_signs();
    Ok(AlsOutcome {
        factors,
        iters,
        residual: prev,
        history,
    })
}

fn random_factors(dim: usize, rank: usize, seed: u64) -> CpFactors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = std::array::from_fn(|_| {
        let mut m = DMatrix::from_fn(dim, rank, |_, _| StandardNormal.sample(&mut rng));
        for mut col in m.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
        m
    });
    CpFactors { modes }
}

/// Solves `X · G = M` for `X` with ridge `ε = 1e-10 · tr(G)`.
fn solve_normal(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let r = gram.nrows();
    let ridge = RIDGE * gram.trace();
    if !(ridge > 0.0) {
        return None;
    }
    let g = gram + DMatrix::identity(r, r) * ridge;
    let chol = Cholesky::new(g)?;
    let xt = chol.solve(&rhs.transpose());
    Some(xt.transpose())
}

/// Matricized tensor times Khatri-Rao product for `mode`.
fn mttkrp(t: &Tensor3, f: &CpFactors, mode: usize) -> DMatrix<f64> {
    let dim = t.dim();
    let rank = f.rank();
    let data = t.as_slice();
    let [a, b, c] = &f.modes;
    let mut out = DMatrix::zeros(dim, rank);
    for i in 0..dim {
        for j in 0..dim {
            let fiber = &data[(i * dim + j) * dim..][..dim];
            match mode {
                0 | 1 => {
                    for r in 0..rank {
                        let s: f64 = fiber.iter().zip(c.column(r).iter()).map(|(x, y)| x * y).sum();
                        if mode == 0 {
                            out[(i, r)] += s * b[(j, r)];
                        } else {
                            out[(j, r)] += s * a[(i, r)];
                        }
                    }
                }
                _ => {
                    for r in 0..rank {
                        let w = a[(i, r)] * b[(j, r)];
                        if w != 0.0 {
                            let mut col = out.column_mut(r);
                            for (dst, &x) in col.iter_mut().zip(fiber) {
                                *dst += w * x;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn relative_residual(t: &Tensor3, f: &CpFactors, norm: f64) -> f64 {
    let recon = reconstruct_unchecked(f);
    t.distance(&recon) / norm
}

/// Dense `Σᵢ q1ᵢ ∘ q2ᵢ ∘ q3ᵢ`.
pub fn reconstruct(factors: &CpFactors, dim: usize) -> Result<Tensor3> {
    if factors.dim() != dim {
        return Err(Error::shape("factors", dim, factors.dim()));
    }
    Ok(reconstruct_unchecked(factors))
}

fn reconstruct_unchecked(f: &CpFactors) -> Tensor3 {
    let dim = f.dim();
    let mut out = Tensor3::zeros(dim);
    let buf = out.as_mut_slice();
    let [a, b, c] = &f.modes;
    for r in 0..f.rank() {
        let cr = c.column(r);
        for i in 0..dim {
            let ai = a[(i, r)];
            if ai == 0.0 {
                continue;
            }
            for j in 0..dim {
                let w = ai * b[(j, r)];
                if w == 0.0 {
                    continue;
                }
                let row = &mut buf[(i * dim + j) * dim..][..dim];
                for (dst, &v) in row.iter_mut().zip(cr.iter()) {
                    *dst += w * v;
                }
            }
        }
    }
    out
}

/// Result of matching estimated components to reference components.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `permutation[i]` is the estimated component matched to reference `i`.
    pub permutation: Vec<usize>,
    /// Per matched pair and mode, the least-squares scalar `s` with
    /// `reference ≈ s · estimated`.
    pub scales: Vec<[f64; 3]>,
    /// Signed cosine similarity per matched pair and mode.
    pub cosines: Vec<[f64; 3]>,
}

impl Alignment {
    /// Smallest `|cos|` over every matched pair and mode.
    pub fn min_abs_cosine(&self) -> f64 {
        self.cosines
            .iter()
            .flat_map(|c| c.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.norm() * b.norm();
    if n == 0.0 {
        0.0
    } else {
        a.dot(b) / n
    }
}

/// Greedy maximum-|cosine| matching on mode-1 vectors.
pub fn align_components(estimated: &CpFactors, reference: &CpFactors) -> Result<Alignment> {
    if estimated.rank() != reference.rank() || estimated.dim() != reference.dim() {
        return Err(Error::shape(
            "estimated",
            format!("{}x{}", reference.dim(), reference.rank()),
            format!("{}x{}", estimated.dim(), estimated.rank()),
        ));
    }
    let rank = reference.rank();
    let est: Vec<[DVector<f64>; 3]> = (0..rank).map(|r| estimated.component(r)).collect();
    let refs: Vec<[DVector<f64>; 3]> = (0..rank).map(|r| reference.component(r)).collect();

    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(rank * rank);
    for (i, rc) in refs.iter().enumerate() {
        for (j, ec) in est.iter().enumerate() {
            pairs.push((cosine(&ec[0], &rc[0]).abs(), i, j));
        }
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut permutation = vec![usize::MAX; rank];
    let mut used = vec![false; rank];
    for (_, i, j) in pairs {
        if permutation[i] == usize::MAX && !used[j] {
            permutation[i] = j;
            used[j] = true;
        }
    }

    let mut scales = Vec::with_capacity(rank);
    let mut cosines = Vec::with_capacity(rank);
    for (i, &j) in permutation.iter().enumerate() {
        scales.push(std::array::from_fn(|m| {
            let e = &est[j][m];
            let ee = e.dot(e);
            if ee == 0.0 {
                0.0
            } else {
                e.dot(&refs[i][m]) / ee
            }
        }));
        cosines.push(std::array::from_fn(|m| cosine(&est[j][m], &refs[i][m])));
    }
    Ok(Alignment {
        permutation,
        scales,
        cosines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(f: &CpFactors) -> Tensor3 {
        let dim = f.dim();
        let mut t = Tensor3::zeros(dim);
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    let mut s = 0.0;
                    for r in 0..f.rank() {
                        s += f.mode(0)[(a, r)] * f.mode(1)[(b, r)] * f.mode(2)[(c, r)];
                    }
                    t[(a, b, c)] = s;
                }
            }
        }
        t
    }

    fn seeded(dim: usize, rank: usize, seed: u64) -> CpFactors {
        random_factors(dim, rank, seed)
    }

    #[test]
    fn reconstruct_ones_and_zeros() {
        let ones = DVector::from_element(4, 1.0);
        let f = CpFactors::from_components(&[[ones.clone(), ones.clone(), ones]]).unwrap();
        assert!(reconstruct(&f, 4).unwrap().as_slice().iter().all(|&v| v == 1.0));
        let z = CpFactors::zeros(3, 2);
        assert!(reconstruct(&z, 3).unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert!(reconstruct(&z, 4).is_err());
    }

    #[test]
    fn reconstruct_matches_triple_loop() {
        let f = seeded(5, 3, 11);
        let fast = reconstruct(&f, 5).unwrap();
        assert!(fast.max_abs_diff(&brute_force(&f)) < 1e-12);
    }

    #[test]
    fn mttkrp_matches_definition() {
        let f = seeded(4, 2, 3);
        let t = brute_force(&seeded(4, 3, 9));
        for mode in 0..3 {
            let m = mttkrp(&t, &f, mode);
            for x in 0..4 {
                for r in 0..2 {
                    let mut s = 0.0;
                    for i in 0..4 {
                        for j in 0..4 {
                            s += match mode {
                                0 => t[(x, i, j)] * f.mode(1)[(i, r)] * f.mode(2)[(j, r)],
                                1 => t[(i, x, j)] * f.mode(0)[(i, r)] * f.mode(2)[(j, r)],
                                _ => t[(i, j, x)] * f.mode(0)[(i, r)] * f.mode(1)[(j, r)],
                            };
                        }
                    }
                    assert!((m[(x, r)] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exact_rank_one_is_recovered() {
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let b = DVector::from_vec(vec![0.3, 0.1, -1.0, 2.0]);
        let c = DVector::from_vec(vec![2.0, 1.0, 1.0, -0.5]);
        let f = CpFactors::from_components(&[[a.clone(), b.clone(), c.clone()]]).unwrap();
        let t = reconstruct(&f, 4).unwrap();
        let out = cp_als(&t, 1, &AlsOptions::cold(1).with_tol(1e-12)).unwrap();
        assert!(out.residual < 1e-8, "residual {}", out.residual);
        let [q1, q2, q3] = out.factors.component(0);
        assert!(cosine(&q1, &a).abs() > 1.0 - 1e-10);
        assert!(cosine(&q2, &b).abs() > 1.0 - 1e-10);
        assert!(cosine(&q3, &c).abs() > 1.0 - 1e-10);
    }

    #[test]
    fn warm_start_at_optimum_stops_quickly() {
        let f = seeded(6, 2, 5);
        let t = reconstruct(&f, 6).unwrap();
        let out = cp_als(&t, 2, &AlsOptions::warm(f).with_tol(1e-8)).unwrap();
        assert!(out.iters <= 3, "iters {}", out.iters);
        assert!(out.residual < 1e-8);
    }

    #[test]
    fn errors_on_bad_inputs() {
        let t = Tensor3::zeros(3);
        assert!(matches!(
            cp_als(&t, 4, &AlsOptions::cold(0)),
            Err(Error::Rank { rank: 4, dim: 3 })
        ));
        assert!(matches!(cp_als(&t, 1, &AlsOptions::cold(0)), Err(Error::EmptyTensor)));
        let mut nan = Tensor3::zeros(2);
        nan[(0, 0, 0)] = f64::NAN;
        assert!(matches!(cp_als(&nan, 1, &AlsOptions::cold(0)), Err(Error::Data(_))));
        let f = seeded(3, 1, 0);
        let t = reconstruct(&f, 3).unwrap();
        let wrong = AlsOptions::warm(seeded(3, 2, 0));
        assert!(matches!(cp_als(&t, 1, &wrong), Err(Error::Shape { .. })));
    }

    #[test]
    fn singular_normal_equations_surface_as_convergence_error() {
        let f = seeded(3, 1, 0);
        let t = reconstruct(&f, 3).unwrap();
        let err = cp_als(&t, 1, &AlsOptions::warm(CpFactors::zeros(3, 1))).unwrap_err();
        match err {
            Error::Convergence { last, .. } => assert_eq!(last.rank(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sign_convention_positive_pivot() {
        let f = seeded(5, 3, 2);
        let t = reconstruct(&f, 5).unwrap();
        let out = cp_als(&t, 3, &AlsOptions::cold(4)).unwrap();
        for r in 0..3 {
            let col = out.factors.mode(0).column(r);
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn identical_alignment() {
        let f = seeded(5, 3, 8);
        let al = align_components(&f, &f).unwrap();
        assert_eq!(al.permutation, vec![0, 1, 2]);
        for s in &al.scales {
            for v in s {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swapped_and_scaled_alignment() {
        let reference = seeded(6, 2, 21);
        let [a0, b0, c0] = reference.component(0);
        let [a1, b1, c1] = reference.component(1);
        let estimated = CpFactors::from_components(&[[a1, b1, c1], [a0 * 2.0, b0 * 3.0, c0 / 6.0]]).unwrap();
        let al = align_components(&estimated, &reference).unwrap();
        assert_eq!(al.permutation, vec![1, 0]);
        let prod: f64 = al.scales[0].iter().product();
        assert!((prod - 1.0).abs() < 1e-12);
        assert!((al.scales[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn alignment_survives_small_noise() {
        let dim = 4;
        let e = |i: usize| DVector::from_fn(dim, |k, _| if k == i { 1.0 } else { 0.0 });
        let reference =
            CpFactors::from_components(&[[e(0), e(0), e(0)], [e(1), e(1), e(1)], [e(2), e(2), e(2)]]).unwrap();
        let noise = seeded(dim, 9, 77);
        let n = |k: usize| noise.mode(k / 3).column(k % 3).into_owned() * 1e-3;
        // Estimated order is (ref 1, ref 2, ref 0).
        let estimated = CpFactors::from_components(&[
            [e(1) + n(0), e(1) + n(1), e(1) + n(2)],
            [e(2) + n(3), e(2) + n(4), e(2) + n(5)],
            [e(0) + n(6), e(0) + n(7), e(0) + n(8)],
        ])
        .unwrap();
        let al = align_components(&estimated, &reference).unwrap();
        assert_eq!(al.permutation, vec![2, 0, 1]);
        assert!(al.min_abs_cosine() > 0.99);
    }
}
