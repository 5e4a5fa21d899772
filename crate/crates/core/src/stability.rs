//! Strong-stability certificates for feedback gains.
//!
//! A gain `K` is (κ,γ)-strongly stable when `A - BK = Q P Q⁻¹` with
//! `‖P‖ ≤ 1-γ` and `‖K‖, ‖Q‖, ‖Q⁻¹‖ ≤ κ`. Two witnesses are tried:
//!
//! 1. Eigendecomposition (`P` diagonal). Eigenvectors are unit-normalized and
//!    `Q` is then rescaled by a scalar so that `‖Q‖ = ‖Q⁻¹‖`.
//! 2. Complex Schur form `A_K = U T U*` with the similarity `diag(1, s, s², ...)`
//!    shrinking the strictly upper part of `T`. Only used when a non-diagonal
//!    certificate is acceptable; it covers defective closed loops.

use std::fmt;

use nalgebra::{Complex, DMatrix};
use serde::Serialize;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::linalg::{check_shape, min_singular_value_c, modulus, spectral_norm, spectral_norm_c, to_complex};
use crate::scalar::{lit, to_f64, Real};
use crate::system::LinearSystem;

/// Absolute tolerance for `‖Q P Q⁻¹ - A_K‖`, scaled by `max(1, ‖A_K‖)`.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;
/// Relative rank tolerance on the eigenvector matrix.
pub const DEFECT_TOL: f64 = 1e-10;
/// Relative slack on the norm inequalities, absorbing rounding in the SVDs.
pub const NORM_SLACK: f64 = 1e-9;
/// Slack for the power-decay inequality.
pub const DECAY_SLACK: f64 = 1e-9;

const CLUSTER_TOL: f64 = 1e-6;
const EIGVEC_RESIDUAL_TOL: f64 = 1e-8;

/// One failed inequality.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// `A_K` has no basis of eigenvectors.
    Defective,
    /// `‖P‖ ≤ 1 - γ` fails.
    PNorm { norm: f64, bound: f64 },
    /// `‖K‖ ≤ κ` fails.
    GainNorm { norm: f64, bound: f64 },
    /// `‖Q‖ ≤ κ` fails.
    QNorm { norm: f64, bound: f64 },
    /// `‖Q⁻¹‖ ≤ κ` fails.
    QInvNorm { norm: f64, bound: f64 },
    Reconstruction { error: f64, tol: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Defective => write!(f, "defective closed-loop matrix"),
            Violation::PNorm { norm, bound } => write!(f, "‖P‖ = {norm} > 1-γ = {bound}"),
            Violation::GainNorm { norm, bound } => write!(f, "‖K‖ = {norm} > κ = {bound}"),
            Violation::QNorm { norm, bound } => write!(f, "‖Q‖ = {norm} > κ = {bound}"),
            Violation::QInvNorm { norm, bound } => write!(f, "‖Q⁻¹‖ = {norm} > κ = {bound}"),
            Violation::Reconstruction { error, tol } => {
                write!(f, "‖QPQ⁻¹ - A_K‖ = {error:e} exceeds {tol:e}")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub struct CertificationFailure {
    pub reasons: Vec<Violation>,
}

impl CertificationFailure {
    pub fn is_defective(&self) -> bool {
        self.reasons.contains(&Violation::Defective)
    }
}

impl fmt::Display for CertificationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.reasons.iter().map(|r| r.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Norms achieved by a witness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WitnessNorms<T> {
    pub p: T,
    pub gain: T,
    pub q: T,
    pub q_inv: T,
    pub reconstruction: T,
}

/// Witness that a gain is (κ,γ)-strongly stable.
#[derive(Clone, Debug)]
pub struct StabilityCertificate<T: Real> {
    kappa: T,
    gamma: T,
    gain: DMatrix<T>,
    p: DMatrix<Complex<T>>,
    q: DMatrix<Complex<T>>,
    q_inv: DMatrix<Complex<T>>,
    diagonal: bool,
    eigenvalues: Vec<Complex<T>>,
    norms: WitnessNorms<T>,
}

impl<T: Real> StabilityCertificate<T> {
    pub fn kappa(&self) -> T {
        self.kappa
    }
    pub fn gamma(&self) -> T {
        self.gamma
    }
    pub fn gain(&self) -> &DMatrix<T> {
        &self.gain
    }
    pub fn p(&self) -> &DMatrix<Complex<T>> {
        &self.p
    }
    pub fn q(&self) -> &DMatrix<Complex<T>> {
        &self.q
    }
    pub fn q_inv(&self) -> &DMatrix<Complex<T>> {
        &self.q_inv
    }
    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }
    /// Closed-loop eigenvalues, by decreasing modulus.
    pub fn eigenvalues(&self) -> &[Complex<T>] {
        &self.eigenvalues
    }
    pub fn norms(&self) -> WitnessNorms<T> {
        self.norms
    }

    pub fn summary(&self) -> CertificateSummary {
        CertificateSummary {
            kappa: to_f64(self.kappa),
            gamma: to_f64(self.gamma),
            diagonal: self.diagonal,
            p_norm: to_f64(self.norms.p),
            gain_norm: to_f64(self.norms.gain),
            q_norm: to_f64(self.norms.q),
            q_inv_norm: to_f64(self.norms.q_inv),
            reconstruction_error: to_f64(self.norms.reconstruction),
            eigenvalues: self.eigenvalues.iter().map(|z| [to_f64(z.re), to_f64(z.im)]).collect(),
        }
    }
}

/// Serializable certificate digest for run reports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub kappa: f64,
    pub gamma: f64,
    pub diagonal: bool,
    pub p_norm: f64,
    pub gain_norm: f64,
    pub q_norm: f64,
    pub q_inv_norm: f64,
    pub reconstruction_error: f64,
    /// `[re, im]` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
}

struct Witness<T: Real> {
    p: DMatrix<Complex<T>>,
    q: DMatrix<Complex<T>>,
    q_inv: DMatrix<Complex<T>>,
}

/// Certifies that `k` is (κ,γ)-strongly stable for `sys`, diagonally if requested.
pub fn certify<T: Real>(
    sys: &LinearSystem<T>,
    k: &DMatrix<T>,
    kappa: T,
    gamma: T,
    require_diagonal: bool,
) -> Result<StabilityCertificate<T>> {
    if !(kappa >= T::one()) || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
    }
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(Error::invalid(format!("gamma must lie in (0,1), got {gamma}")));
    }
    check_shape(k, (sys.n_u(), sys.n_x()), "gain K")?;

    let a_k = sys.closed_loop_matrix(k)?;
    let a_kc = to_complex(&a_k);
    let scale = T::one().max(spectral_norm(&a_k));
    let gain_norm = spectral_norm(k);
    let eigenvalues = sorted_eigenvalues(&a_k);

    let build = |w: Witness<T>, diagonal: bool| -> std::result::Result<StabilityCertificate<T>, Vec<Violation>> {
        let norms = witness_norms(&w, &a_kc, gain_norm);
        let violations = check_bounds(&norms, kappa, gamma, scale);
        if violations.is_empty() {
            Ok(StabilityCertificate {
                kappa,
                gamma,
                gain: k.clone(),
                p: w.p,
                q: w.q,
                q_inv: w.q_inv,
                diagonal,
                eigenvalues: eigenvalues.clone(),
                norms,
            })
        } else {
            Err(violations)
        }
    };

    let diagonal_reasons = match eigen_witness(&a_kc, &eigenvalues, scale) {
        Some(w) => match build(w, true) {
            Ok(cert) => return Ok(cert),
            Err(v) => v,
        },
        None => vec![Violation::Defective],
    };
    if require_diagonal {
        return Err(CertificationFailure {
            reasons: diagonal_reasons,
        }
        .into());
    }

    let n = a_k.nrows();
    let steps = if n == 1 { 1 } else { 401 };
    let mut best: Option<(T, Vec<Violation>)> = None;
    for step in 0..steps {
        let s: T = lit(10f64.powf(-(step as f64) / 40.0));
        let w = schur_witness(&a_kc, s);
        let norms = witness_norms(&w, &a_kc, gain_norm);
        match build(w, false) {
            Ok(cert) => return Ok(cert),
            Err(v) => {
                let worst = excess(&norms, kappa, gamma);
                if best.as_ref().is_none_or(|(b, _)| worst < *b) {
                    best = Some((worst, v));
                }
            }
        }
    }

    let mut reasons = diagonal_reasons;
    if reasons == [Violation::Defective] {
        if let Some((_, v)) = best {
            reasons.extend(v);
        }
    }
    Err(CertificationFailure { reasons }.into())
}

/// Eigenvalues sorted by decreasing modulus, ties by decreasing real then imaginary part.
fn sorted_eigenvalues<T: Real>(a: &DMatrix<T>) -> Vec<Complex<T>> {
    let mut eig: Vec<Complex<T>> = a.complex_eigenvalues().iter().copied().collect();
    let tie: T = lit(1e-12);
    eig.sort_by(|x, y| {
        let (mx, my) = (modulus(*x), modulus(*y));
        if (mx - my).abs() > tie {
            return my.partial_cmp(&mx).unwrap_or(std::cmp::Ordering::Equal);
        }
        if (x.re - y.re).abs() > tie {
            return y.re.partial_cmp(&x.re).unwrap_or(std::cmp::Ordering::Equal);
        }
        y.im.partial_cmp(&x.im).unwrap_or(std::cmp::Ordering::Equal)
    });
    eig
}

fn eigen_witness<T: Real>(a: &DMatrix<Complex<T>>, eigenvalues: &[Complex<T>], scale: T) -> Option<Witness<T>> {
    let n = a.nrows();
    let cluster_tol = lit::<T>(CLUSTER_TOL) * scale;
    let residual_tol = lit::<T>(EIGVEC_RESIDUAL_TOL) * scale;
    let mut columns: Vec<Option<nalgebra::DVector<Complex<T>>>> = vec![None; n];
    let mut assigned = vec![false; n];

    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let members: Vec<usize> = (i..n)
            .filter(|&j| !assigned[j] && modulus(eigenvalues[j] - eigenvalues[i]) <= cluster_tol)
            .collect();
        let m = members.len();
        let mut center = Complex::new(T::zero(), T::zero());
        for &j in &members {
            center += eigenvalues[j];
        }
        center /= Complex::new(crate::scalar::from_usize::<T>(m), T::zero());

        let shifted = a - DMatrix::<Complex<T>>::identity(n, n) * center;
        let svd = shifted.clone().svd(false, true);
        let v_t = svd.v_t?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| {
            svd.singular_values[x]
                .partial_cmp(&svd.singular_values[y])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for (slot, &j) in members.iter().enumerate() {
            let idx = order[slot];
            let v = v_t.row(idx).adjoint();
            if (&shifted * &v).norm() > residual_tol {
                return None;
            }
            columns[j] = Some(v);
            assigned[j] = true;
        }
    }

    let cols: Vec<_> = columns.into_iter().collect::<Option<Vec<_>>>()?;
    let mut q = DMatrix::from_columns(&cols);
    for mut c in q.column_iter_mut() {
        let norm = c.norm();
        if norm > T::zero() {
            c.unscale_mut(norm);
        }
    }
    let largest = spectral_norm_c(&q);
    if largest <= T::zero() || min_singular_value_c(&q) / largest < lit(DEFECT_TOL) {
        return None;
    }
    let q_inv = q.clone().try_inverse()?;
    let p = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eigenvalues));
    Some(balance(Witness { p, q, q_inv }))
}

fn schur_witness<T: Real>(a: &DMatrix<Complex<T>>, s: T) -> Witness<T> {
    let n = a.nrows();
    let (u, mut tri) = a.clone().schur().unpack();
    for i in 0..n {
        for j in 0..i {
            tri[(i, j)] = Complex::new(T::zero(), T::zero());
        }
    }
    let pow = |e: i32| Complex::new(s.powi(e), T::zero());
    let p = DMatrix::from_fn(n, n, |i, j| if j >= i { tri[(i, j)] * pow(j as i32 - i as i32) } else { tri[(i, j)] });
    let d = DMatrix::from_fn(n, n, |i, j| if i == j { pow(i as i32) } else { Complex::new(T::zero(), T::zero()) });
    let d_inv = DMatrix::from_fn(n, n, |i, j| if i == j { pow(-(i as i32)) } else { Complex::new(T::zero(), T::zero()) });
    let q = &u * d;
    let q_inv = d_inv * u.adjoint();
    balance(Witness { p, q, q_inv })
}

/// Rescales `Q` by a positive scalar so that `‖Q‖ = ‖Q⁻¹‖`.
fn balance<T: Real>(w: Witness<T>) -> Witness<T> {
    let nq = spectral_norm_c(&w.q);
    let nqi = spectral_norm_c(&w.q_inv);
    if nq <= T::zero() || nqi <= T::zero() {
        return w;
    }
    let c = Complex::new((nqi / nq).sqrt(), T::zero());
    Witness {
        p: w.p,
        q: w.q * c,
        q_inv: w.q_inv / c,
    }
}

fn witness_norms<T: Real>(w: &Witness<T>, a: &DMatrix<Complex<T>>, gain: T) -> WitnessNorms<T> {
    let recon = &w.q * &w.p * &w.q_inv - a;
    WitnessNorms {
        p: spectral_norm_c(&w.p),
        gain,
        q: spectral_norm_c(&w.q),
        q_inv: spectral_norm_c(&w.q_inv),
        reconstruction: spectral_norm_c(&recon),
    }
}

fn check_bounds<T: Real>(n: &WitnessNorms<T>, kappa: T, gamma: T, scale: T) -> Vec<Violation> {
    let mut out = Vec::new();
    let rho = T::one() - gamma;
    let slack = T::one() + lit::<T>(NORM_SLACK).max(T::default_epsilon() * lit(64.0));
    if n.p > rho * slack {
        out.push(Violation::PNorm {
            norm: to_f64(n.p),
            bound: to_f64(rho),
        });
    }
    if n.gain > kappa * slack {
        out.push(Violation::GainNorm {
            norm: to_f64(n.gain),
            bound: to_f64(kappa),
        });
    }
    if n.q > kappa * slack {
        out.push(Violation::QNorm {
            norm: to_f64(n.q),
            bound: to_f64(kappa),
        });
    }
    if n.q_inv > kappa * slack {
        out.push(Violation::QInvNorm {
            norm: to_f64(n.q_inv),
            bound: to_f64(kappa),
        });
    }
    let tol = lit::<T>(RECONSTRUCTION_TOL) * scale;
    if n.reconstruction > tol {
        out.push(Violation::Reconstruction {
            error: to_f64(n.reconstruction),
            tol: to_f64(tol),
        });
    }
    out
}

fn excess<T: Real>(n: &WitnessNorms<T>, kappa: T, gamma: T) -> T {
    let rho = T::one() - gamma;
    (n.p / rho).max(n.q / kappa).max(n.q_inv / kappa)
}

/// A fixed gain together with `A_K = A - BK` and its eagerly cached powers.
#[derive(Clone, Debug)]
pub struct ClosedLoop<T: Real> {
    gain: DMatrix<T>,
    a_k: DMatrix<T>,
    b: DMatrix<T>,
    powers: Vec<DMatrix<T>>,
}

impl<T: Real> ClosedLoop<T> {
    /// Caches `A_K^0 ..= A_K^{i_max}`.
    pub fn new(sys: &LinearSystem<T>, k: &DMatrix<T>, i_max: usize) -> Result<Self> {
        let a_k = sys.closed_loop_matrix(k)?;
        let n = a_k.nrows();
        let mut powers = Vec::with_capacity(i_max + 1);
        powers.push(DMatrix::identity(n, n));
        for i in 0..i_max {
            let next = &a_k * &powers[i];
            powers.push(next);
        }
        Ok(Self {
            gain: k.clone(),
            a_k,
            b: sys.b().clone(),
            powers,
        })
    }

    pub fn gain(&self) -> &DMatrix<T> {
        &self.gain
    }
    pub fn a_k(&self) -> &DMatrix<T> {
        &self.a_k
    }
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }
    pub fn n_x(&self) -> usize {
        self.a_k.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    /// Largest cached exponent.
    pub fn cached_up_to(&self) -> usize {
        self.powers.len() - 1
    }

    /// `A_K^i`, from the cache when available.
    pub fn power(&self, i: usize) -> DMatrix<T> {
        if let Some(p) = self.powers.get(i) {
            return p.clone();
        }
        let mut p = self.powers.last().expect("cache holds A_K^0").clone();
        for _ in self.cached_up_to()..i {
            p = &self.a_k * p;
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayRow {
    pub i: usize,
    pub norm: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub pass: bool,
}

/// Checks `‖A_K^i‖ ≤ κ²(1-γ)^i` for `i = 0..=i_max`.
pub fn power_decay_check<T: Real>(cl: &ClosedLoop<T>, cert: &StabilityCertificate<T>, i_max: usize) -> DecayReport {
    let k2 = to_f64(cert.kappa()) * to_f64(cert.kappa());
    let rho = 1.0 - to_f64(cert.gamma());
    let mut p = DMatrix::<T>::identity(cl.n_x(), cl.n_x());
    let mut rows = Vec::with_capacity(i_max + 1);
    for i in 0..=i_max {
        if i > 0 {
            p = cl.a_k() * p;
        }
        rows.push(DecayRow {
            i,
            norm: to_f64(spectral_norm(&p)),
            bound: k2 * rho.powi(i as i32),
        });
    }
    let pass = rows.iter().all(|r| r.norm <= r.bound + DECAY_SLACK);
    DecayReport { rows, pass }
}
