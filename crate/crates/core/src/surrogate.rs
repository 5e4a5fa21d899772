//! Transfer matrices, the truncated-memory surrogate state and input, and the
//! surrogate cost `f_t(M)` with its gradient and Hessian.
//!
//! At time `t` the surrogate state is the state reached from `x_{t-1-H} = 0`
//! by replaying the policy window on the observed noise:
//!
//! `y_t = Σ_{j=0}^{H} A_K^j (w_{t-1-j} + B Σ_r M_{t-1-j}^[r] w_{t-2-j-r})`
//!
//! which reaches back to `w_{t-1-2H}`, so the history must hold `2H + 1`
//! entries.

use nalgebra::{DMatrix, DVector};

use crate::costs::StageCost;
use crate::error::{Error, Result};
use crate::policy::{NoiseHistory, PolicyParams};
use crate::scalar::{from_usize, Real};
use crate::stability::ClosedLoop;

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogatePoint<T: Real> {
    pub y: DVector<T>,
    pub v: DVector<T>,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateGradient<T: Real> {
    pub blocks: Vec<DMatrix<T>>,
    pub frob_norm: T,
}

impl<T: Real> SurrogateGradient<T> {
    fn new(blocks: Vec<DMatrix<T>>) -> Self {
        let frob_norm = blocks.iter().fold(T::zero(), |a, b| a + b.norm_squared()).sqrt();
        Self { blocks, frob_norm }
    }

    pub fn to_vector(&self) -> DVector<T> {
        DVector::from_iterator(
            self.blocks.iter().map(|b| b.len()).sum(),
            self.blocks.iter().flat_map(|b| b.iter().copied()),
        )
    }
}

/// Smallest history capacity that supports horizon `h`.
pub fn window_len(h: usize) -> usize {
    2 * h + 1
}

fn check_setup<T: Real>(cl: &ClosedLoop<T>, m: &PolicyParams<T>, hist: &NoiseHistory<T>) -> Result<()> {
    if m.n_u() != cl.n_u() || m.n_x() != cl.n_x() {
        return Err(Error::invalid(format!(
            "policy blocks are {}x{}, closed loop needs {}x{}",
            m.n_u(),
            m.n_x(),
            cl.n_u(),
            cl.n_x()
        )));
    }
    if hist.dim() != cl.n_x() {
        return Err(Error::invalid("noise history dimension differs from n_x"));
    }
    if hist.capacity() < window_len(m.h()) {
        return Err(Error::invalid(format!(
            "surrogate needs {} noise entries, history holds {}",
            window_len(m.h()),
            hist.capacity()
        )));
    }
    Ok(())
}

/// `Ψ_{t,i}^{K,h} = A_K^i 1{i≤h} + Σ_{j=0}^{h} A_K^j B M_{t-j}^[i-j-1] 1{1 ≤ i-j ≤ H}`.
///
/// `m_seq[s]` is `M_s`; `H` is the block count of the policies.
pub fn psi<T: Real>(cl: &ClosedLoop<T>, m_seq: &[PolicyParams<T>], t: usize, i: usize, h: usize) -> Result<DMatrix<T>> {
    let Some(first) = m_seq.first() else {
        return Err(Error::invalid("policy sequence is empty"));
    };
    let big_h = first.h();
    if t >= m_seq.len() || h > t || i > big_h + h {
        return Err(Error::invalid(format!(
            "psi index out of range: t={t}, i={i}, h={h}, H={big_h}, {} policies",
            m_seq.len()
        )));
    }
    let n = cl.n_x();
    let mut out = if i <= h { cl.power(i) } else { DMatrix::zeros(n, n) };
    for j in 0..=h.min(i.saturating_sub(1)) {
        let lag = i - j;
        if (1..=big_h).contains(&lag) {
            out += cl.power(j) * cl.b() * m_seq[t - j].block(lag - 1);
        }
    }
    Ok(out)
}

/// Right-hand side of `x_t = A_K^{h+1} x_{t-1-h} + Σ_{i=0}^{H+h} Ψ_{t-1,i}^{K,h} w_{t-1-i}`.
///
/// `noise[s]` is `w_s` (negative times read as zero); `x_anchor` is `x_{t-1-h}`.
pub fn state_expansion<T: Real>(
    cl: &ClosedLoop<T>,
    m_seq: &[PolicyParams<T>],
    noise: &[DVector<T>],
    x_anchor: &DVector<T>,
    t: usize,
    h: usize,
) -> Result<DVector<T>> {
    if t == 0 || h > t - 1 {
        return Err(Error::invalid(format!("state expansion needs 1 <= h + 1 <= t, got t={t}, h={h}")));
    }
    if noise.len() < t {
        return Err(Error::invalid(format!("need noise up to w_{}, have {} entries", t - 1, noise.len())));
    }
    let big_h = m_seq.first().map(|m| m.h()).unwrap_or(0);
    let mut x = cl.power(h + 1) * x_anchor;
    for i in 0..=big_h + h {
        if i + 1 > t {
            break;
        }
        x += psi(cl, m_seq, t - 1, i, h)? * &noise[t - 1 - i];
    }
    Ok(x)
}

/// Surrogate point with a general window.
///
/// `window[k]` is `M_{t-1-H+k}` for `k = 0..=H`; `current` is `M_t`.
pub fn surrogate_point<T: Real>(
    cl: &ClosedLoop<T>,
    window: &[PolicyParams<T>],
    current: &PolicyParams<T>,
    hist: &NoiseHistory<T>,
) -> Result<SurrogatePoint<T>> {
    let h = current.h();
    check_setup(cl, current, hist)?;
    if window.len() != h + 1 {
        return Err(Error::invalid(format!("policy window must hold H + 1 = {} entries", h + 1)));
    }
    for m in window {
        if m.h() != h {
            return Err(Error::invalid("policy window mixes horizons"));
        }
        check_setup(cl, m, hist)?;
    }
    Ok(point_with(cl, |j| &window[h - j], current, hist))
}

/// Surrogate point of `f_t`: the window frozen at `m`.
pub fn surrogate_point_f<T: Real>(cl: &ClosedLoop<T>, m: &PolicyParams<T>, hist: &NoiseHistory<T>) -> Result<SurrogatePoint<T>> {
    check_setup(cl, m, hist)?;
    Ok(point_with(cl, |_| m, m, hist))
}

/// `window(j)` returns `M_{t-1-j}`.
fn point_with<'a, T: Real>(
    cl: &ClosedLoop<T>,
    window: impl Fn(usize) -> &'a PolicyParams<T>,
    current: &PolicyParams<T>,
    hist: &NoiseHistory<T>,
) -> SurrogatePoint<T> {
    let h = current.h();
    let (n_x, n_u) = (cl.n_x(), cl.n_u());
    let mut y = DVector::zeros(n_x);
    let mut next = DVector::zeros(n_x);
    let mut p = DVector::zeros(n_u);
    for j in (0..=h).rev() {
        let mj = window(j);
        p.fill(T::zero());
        for r in 0..h {
            p.gemv(T::one(), mj.block(r), hist.lag(j + 1 + r), T::one());
        }
        next.copy_from(hist.lag(j));
        next.gemv(T::one(), cl.a_k(), &y, T::one());
        next.gemv(T::one(), cl.b(), &p, T::one());
        std::mem::swap(&mut y, &mut next);
    }
    let mut v = DVector::zeros(n_u);
    v.gemv(-T::one(), cl.gain(), &y, T::zero());
    for r in 0..h {
        v.gemv(T::one(), current.block(r), hist.lag(r), T::one());
    }
    SurrogatePoint { y, v, t: hist.time() }
}

/// `F_t(M_{t-1-H}, ..., M_{t-1}) = c_t(y_t, v_t)` with `v_t` using `current`.
pub fn surrogate_cost_window<T: Real, C: StageCost<T> + ?Sized>(
    cost: &C,
    cl: &ClosedLoop<T>,
    window: &[PolicyParams<T>],
    current: &PolicyParams<T>,
    hist: &NoiseHistory<T>,
) -> Result<T> {
    let pt = surrogate_point(cl, window, current, hist)?;
    Ok(cost.value(&pt.y, &pt.v))
}

/// `f_t(M) = c_t(y_t(M, ..., M), v_t(M))`.
pub fn surrogate_cost_f<T: Real, C: StageCost<T> + ?Sized>(
    cost: &C,
    cl: &ClosedLoop<T>,
    m: &PolicyParams<T>,
    hist: &NoiseHistory<T>,
) -> Result<T> {
    let pt = surrogate_point_f(cl, m, hist)?;
    Ok(cost.value(&pt.y, &pt.v))
}

/// `f_t(M)`, `∇_M f_t(M)` and the point they were evaluated at.
pub fn value_and_grad_f<T: Real, C: StageCost<T> + ?Sized>(
    cost: &C,
    cl: &ClosedLoop<T>,
    m: &PolicyParams<T>,
    hist: &NoiseHistory<T>,
) -> Result<(T, SurrogateGradient<T>, SurrogatePoint<T>)> {
    let pt = surrogate_point_f(cl, m, hist)?;
    let value = cost.value(&pt.y, &pt.v);
    let grad = gradient_at(cost, cl, m.h(), &pt, hist);
    Ok((value, grad, pt))
}

pub fn grad_f<T: Real, C: StageCost<T> + ?Sized>(
    cost: &C,
    cl: &ClosedLoop<T>,
    m: &PolicyParams<T>,
    hist: &NoiseHistory<T>,
) -> Result<SurrogateGradient<T>> {
    Ok(value_and_grad_f(cost, cl, m, hist)?.1)
}

/// Adjoint form: with `g = ∇_x c - Kᵀ∇_u c` and `λ_j = Bᵀ(A_Kᵀ)^j g`,
/// block `r` is `Σ_j λ_j w_{t-2-j-r}ᵀ + ∇_u c · w_{t-1-r}ᵀ`.
fn gradient_at<T: Real, C: StageCost<T> + ?Sized>(
    cost: &C,
    cl: &ClosedLoop<T>,
    h: usize,
    pt: &SurrogatePoint<T>,
    hist: &NoiseHistory<T>,
) -> SurrogateGradient<T> {
    let (n_x, n_u) = (cl.n_x(), cl.n_u());
    let gx = cost.grad_x(&pt.y, &pt.v);
    let gu = cost.grad_u(&pt.y, &pt.v);
    let mut mu = gx;
    mu.gemv_tr(-T::one(), cl.gain(), &gu, T::one());
    let mut blocks = vec![DMatrix::zeros(n_u, n_x); h];
    let mut lambda = DVector::zeros(n_u);
    let mut next = DVector::zeros(n_x);
    for j in 0..=h {
        lambda.gemv_tr(T::one(), cl.b(), &mu, T::zero());
        for (r, block) in blocks.iter_mut().enumerate() {
            block.ger(T::one(), &lambda, hist.lag(j + 1 + r), T::one());
        }
        next.gemv_tr(T::one(), cl.a_k(), &mu, T::zero());
        std::mem::swap(&mut mu, &mut next);
    }
    for (r, block) in blocks.iter_mut().enumerate() {
        block.ger(T::one(), &gu, hist.lag(r), T::one());
    }
    SurrogateGradient::new(blocks)
}

/// Jacobians of `(y_t, v_t)` with respect to the stacked parameters of `f_t`.
///
/// Column order matches [`PolicyParams::to_vector`]. Since `(y_t, v_t)` is
/// affine in `M`, these do not depend on `M`.
pub fn jacobians<T: Real>(cl: &ClosedLoop<T>, h: usize, hist: &NoiseHistory<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let (n_x, n_u) = (cl.n_x(), cl.n_u());
    check_setup(cl, &PolicyParams::zeros(h, n_u, n_x), hist)?;
    let mut gains = Vec::with_capacity(h + 1);
    gains.push(cl.b().clone());
    for j in 0..h {
        let next = cl.a_k() * &gains[j];
        gains.push(next);
    }
    let d = h * n_u * n_x;
    let mut jy = DMatrix::zeros(n_x, d);
    let mut jv = DMatrix::zeros(n_u, d);
    for r in 0..h {
        for q in 0..n_x {
            for p in 0..n_u {
                let col = r * n_u * n_x + q * n_u + p;
                let mut dy = DVector::zeros(n_x);
                for (j, g) in gains.iter().enumerate() {
                    dy.axpy(hist.lag(j + 1 + r)[q], &g.column(p), T::one());
                }
                let mut dv = -(cl.gain() * &dy);
                dv[p] += hist.lag(r)[q];
                jy.set_column(col, &dy);
                jv.set_column(col, &dv);
            }
        }
    }
    Ok((jy, jv))
}

/// `∇²_M f_t(M) = Jᵀ ∇²c(y, v) J` with `J = [J_y; J_v]`.
pub fn hessian_f<T: Real, C: StageCost<T> + ?Sized>(
    cost: &C,
    cl: &ClosedLoop<T>,
    m: &PolicyParams<T>,
    hist: &NoiseHistory<T>,
) -> Result<DMatrix<T>> {
    let pt = surrogate_point_f(cl, m, hist)?;
    let hc = cost
        .hessian(&pt.y, &pt.v)
        .ok_or_else(|| Error::Unsupported("cost does not expose a Hessian".into()))?;
    let (jy, jv) = jacobians(cl, m.h(), hist)?;
    let mut j = DMatrix::zeros(cl.n_x() + cl.n_u(), jy.ncols());
    j.rows_mut(0, cl.n_x()).copy_from(&jy);
    j.rows_mut(cl.n_x(), cl.n_u()).copy_from(&jv);
    Ok(j.transpose() * hc * j)
}

/// `‖∇²_M f_t(M)‖_F`.
pub fn hessian_frob_norm<T: Real, C: StageCost<T> + ?Sized>(
    cost: &C,
    cl: &ClosedLoop<T>,
    m: &PolicyParams<T>,
    hist: &NoiseHistory<T>,
) -> Result<T> {
    Ok(hessian_f(cost, cl, m, hist)?.norm())
}

/// `(2H+1)κ_B²κ⁵(1-γ)^{i-1}`, the bound on `‖Ψ_{t,i}^{K,h}‖` for admissible policies.
pub fn psi_norm_bound<T: Real>(h: usize, kappa_b: T, kappa: T, gamma: T, i: usize) -> T {
    let k2 = kappa * kappa;
    from_usize::<T>(2 * h + 1) * kappa_b * kappa_b * k2 * k2 * kappa * (T::one() - gamma).powi(i as i32 - 1)
}
