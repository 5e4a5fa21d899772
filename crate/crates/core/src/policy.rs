//! Disturbance-action policies `u = -Kx + Σ M^[i-1] w_{t-i}` and the
//! admissible parameter set.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{check_len, check_shape, clip_spectral_norm, matrix_to_rows, spectral_norm};
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::system::LinearSystem;

/// Membership tolerance on each block's spectral norm.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Policy parameters `M = [M^[0], ..., M^[H-1]]`, each block `n_u × n_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T: Real> {
    blocks: Vec<DMatrix<T>>,
}

impl<T: Real> PolicyParams<T> {
    pub fn zeros(h: usize, n_u: usize, n_x: usize) -> Self {
        Self {
            blocks: vec![DMatrix::zeros(n_u, n_x); h],
        }
    }

    pub fn from_blocks(blocks: Vec<DMatrix<T>>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::invalid("policy needs at least one block"));
        };
        let shape = first.shape();
        if let Some(i) = blocks.iter().position(|b| b.shape() != shape) {
            return Err(Error::invalid(format!(
                "policy block {i} has shape {:?}, expected {shape:?}",
                blocks[i].shape()
            )));
        }
        Ok(Self { blocks })
    }

    pub fn h(&self) -> usize {
        self.blocks.len()
    }
    pub fn n_u(&self) -> usize {
        self.blocks[0].nrows()
    }
    pub fn n_x(&self) -> usize {
        self.blocks[0].ncols()
    }
    pub fn blocks(&self) -> &[DMatrix<T>] {
        &self.blocks
    }
    pub fn block(&self, i: usize) -> &DMatrix<T> {
        &self.blocks[i]
    }
    pub fn into_blocks(self) -> Vec<DMatrix<T>> {
        self.blocks
    }

    /// Frobenius norm of the stacked blocks.
    pub fn frob_norm(&self) -> T {
        self.frob_norm_squared().sqrt()
    }

    pub fn frob_norm_squared(&self) -> T {
        self.blocks.iter().fold(T::zero(), |acc, b| acc + b.norm_squared())
    }

    /// `self + alpha·other`, blockwise.
    pub fn add_scaled(&self, alpha: T, other: &[DMatrix<T>]) -> Self {
        assert_eq!(other.len(), self.h(), "block count mismatch");
        Self {
            blocks: self.blocks.iter().zip(other).map(|(a, b)| a + b * alpha).collect(),
        }
    }

    /// Frobenius distance to `other`.
    pub fn distance(&self, other: &Self) -> T {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .fold(T::zero(), |acc, (a, b)| acc + (a - b).norm_squared())
            .sqrt()
    }

    /// Blocks stacked column-major into one vector.
    pub fn to_vector(&self) -> DVector<T> {
        DVector::from_iterator(
            self.h() * self.n_u() * self.n_x(),
            self.blocks.iter().flat_map(|b| b.iter().copied()),
        )
    }

    /// Inverse of [`PolicyParams::to_vector`].
    pub fn from_vector(h: usize, n_u: usize, n_x: usize, v: &DVector<T>) -> Result<Self> {
        let size = n_u * n_x;
        if h == 0 || size == 0 || v.len() != h * size {
            return Err(Error::invalid(format!(
                "vector of length {} does not hold {h} blocks of {n_u}x{n_x}",
                v.len()
            )));
        }
        let blocks = (0..h)
            .map(|r| DMatrix::from_column_slice(n_u, n_x, &v.as_slice()[r * size..(r + 1) * size]))
            .collect();
        Ok(Self { blocks })
    }

    pub fn to_rows(&self) -> Vec<Vec<Vec<f64>>> {
        self.blocks.iter().map(matrix_to_rows).collect()
    }
}

/// `H = ⌈(2/γ) ln T⌉`.
pub fn horizon(t_max: usize, gamma: f64) -> Result<usize> {
    if t_max < 3 {
        return Err(Error::invalid(format!("horizon T must be >= 3, got {t_max}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    Ok((2.0 / gamma * (t_max as f64).ln()).ceil() as usize)
}

/// `𝓜 = {M : ‖M^[i]‖ ≤ 2κ_Bκ³(1-γ)^i, i < H}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdmissibleSet<T: Real> {
    pub kappa: T,
    pub gamma: T,
    pub kappa_b: T,
    pub h: usize,
}

impl<T: Real> AdmissibleSet<T> {
    pub fn new(kappa: T, gamma: T, kappa_b: T, h: usize) -> Result<Self> {
        if !(kappa >= T::one()) {
            return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
        }
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !(kappa_b >= T::one()) {
            return Err(Error::invalid(format!("kappa_B must be >= 1, got {kappa_b}")));
        }
        if h == 0 {
            return Err(Error::invalid("H must be >= 1"));
        }
        Ok(Self { kappa, gamma, kappa_b, h })
    }

    /// `r_i = 2κ_Bκ³(1-γ)^i`.
    pub fn radius(&self, i: usize) -> T {
        let k = self.kappa;
        lit::<T>(2.0) * self.kappa_b * k * k * k * (T::one() - self.gamma).powi(i as i32)
    }

    pub fn contains(&self, m: &PolicyParams<T>) -> bool {
        m.h() == self.h
            && m
                .blocks()
                .iter()
                .enumerate()
                .all(|(i, b)| spectral_norm(b) <= self.radius(i) + lit(MEMBERSHIP_TOL))
    }

    /// Frobenius projection: clip each block's singular values to its radius.
    pub fn project(&self, m: &PolicyParams<T>) -> PolicyParams<T> {
        assert_eq!(m.h(), self.h, "policy length differs from H");
        PolicyParams {
            blocks: m
                .blocks()
                .iter()
                .enumerate()
                .map(|(i, b)| clip_spectral_norm(b, self.radius(i)))
                .collect(),
        }
    }

    /// `D = 4κ_Bκ³√n/γ`, with `n = max(n_x, n_u)`.
    pub fn diameter(&self, n: usize) -> T {
        let k = self.kappa;
        lit::<T>(4.0) * self.kappa_b * k * k * k * from_usize::<T>(n).sqrt() / self.gamma
    }
}

/// Free-standing projection onto `𝓜(κ, γ)` with `H` taken from `m`.
pub fn project<T: Real>(m: &PolicyParams<T>, kappa: T, gamma: T, kappa_b: T) -> Result<PolicyParams<T>> {
    Ok(AdmissibleSet::new(kappa, gamma, kappa_b, m.h())?.project(m))
}

/// The last `capacity` noise vectors `w_{t-1}, w_{t-2}, ...`; earlier entries
/// and negative times read as zero.
#[derive(Clone, Debug)]
pub struct NoiseHistory<T: Real> {
    buf: Vec<DVector<T>>,
    zero: DVector<T>,
    head: usize,
    pushed: usize,
}

impl<T: Real> NoiseHistory<T> {
    pub fn new(capacity: usize, dim: usize) -> Self {
        assert!(capacity > 0, "history capacity must be positive");
        Self {
            buf: vec![DVector::zeros(dim); capacity],
            zero: DVector::zeros(dim),
            head: 0,
            pushed: 0,
        }
    }

    /// History at time `t = seq.len()` holding `seq[t-1], seq[t-2], ...`.
    pub fn from_sequence(capacity: usize, dim: usize, seq: &[DVector<T>]) -> Self {
        let mut h = Self::new(capacity, dim);
        for w in &seq[seq.len().saturating_sub(capacity)..] {
            h.push(w.clone());
        }
        h.pushed = seq.len();
        h
    }

    pub fn capacity(&self) -> usize {
        self.buf.len()
    }
    pub fn dim(&self) -> usize {
        self.zero.len()
    }
    /// Current time `t`, i.e. how many noise vectors have been observed.
    pub fn time(&self) -> usize {
        self.pushed
    }

    pub fn push(&mut self, w: DVector<T>) {
        assert_eq!(w.len(), self.dim(), "noise dimension mismatch");
        self.buf[self.head] = w;
        self.head = (self.head + 1) % self.buf.len();
        self.pushed += 1;
    }

    /// `w_{t-1-i}`.
    pub fn lag(&self, i: usize) -> &DVector<T> {
        assert!(i < self.capacity(), "lag {i} beyond history capacity {}", self.capacity());
        if i >= self.pushed {
            return &self.zero;
        }
        let cap = self.buf.len();
        &self.buf[(self.head + cap - 1 - i) % cap]
    }
}

/// `u = -Kx + Σ_{i=1}^{H} M^[i-1] w_{t-i}`.
pub fn control_input<T: Real>(
    k: &DMatrix<T>,
    m: &PolicyParams<T>,
    x: &DVector<T>,
    hist: &NoiseHistory<T>,
) -> Result<DVector<T>> {
    let (n_u, n_x) = (m.n_u(), m.n_x());
    check_shape(k, (n_u, n_x), "K")?;
    check_len(x, n_x, "x")?;
    if hist.dim() != n_x {
        return Err(Error::invalid(format!("noise history has dimension {}, expected {n_x}", hist.dim())));
    }
    if hist.capacity() < m.h() {
        return Err(Error::invalid(format!(
            "noise history holds {} entries, policy needs {}",
            hist.capacity(),
            m.h()
        )));
    }
    Ok(control_input_unchecked(k, m, x, hist))
}

pub(crate) fn control_input_unchecked<T: Real>(
    k: &DMatrix<T>,
    m: &PolicyParams<T>,
    x: &DVector<T>,
    hist: &NoiseHistory<T>,
) -> DVector<T> {
    let mut u = -(k * x);
    for (i, block) in m.blocks().iter().enumerate() {
        u.gemv(T::one(), block, hist.lag(i), T::one());
    }
    u
}

/// `M_*^[i] = (K - K*)(A - BK*)^i`, which mimics the linear policy `-K*x`
/// through the disturbance-action parametrization on top of `K`.
pub fn comparator_params<T: Real>(
    k: &DMatrix<T>,
    k_star: &DMatrix<T>,
    sys: &LinearSystem<T>,
    set: &AdmissibleSet<T>,
) -> Result<PolicyParams<T>> {
    let shape = (sys.n_u(), sys.n_x());
    check_shape(k, shape, "K")?;
    check_shape(k_star, shape, "K*")?;
    let a_star = sys.closed_loop_matrix(k_star)?;
    let diff = k - k_star;
    let mut power = DMatrix::identity(sys.n_x(), sys.n_x());
    let mut blocks = Vec::with_capacity(set.h);
    for _ in 0..set.h {
        blocks.push(&diff * &power);
        power = &a_star * power;
    }
    let m = PolicyParams { blocks };
    if let Some(i) = (0..set.h).find(|&i| spectral_norm(m.block(i)) > set.radius(i) + lit(MEMBERSHIP_TOL)) {
        return Err(Error::Internal(format!(
            "comparator block {i} has norm {} above radius {}; the gains are not certified for this (kappa, gamma)",
            to_f64(spectral_norm(m.block(i))),
            to_f64(set.radius(i))
        )));
    }
    Ok(m)
}
