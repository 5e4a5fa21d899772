//! Stage costs `c_t(x, u)` and their schedules.

use std::marker::PhantomData;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diagonal, is_symmetric, matrix_from_rows, spectral_norm, symmetric_eigen_range};
use crate::rng::{counter_rng, derive_seed, Domain};
use crate::scalar::{lit, to_f64, Real};

/// PSD tolerance on the smallest eigenvalue.
pub const PSD_TOL: f64 = 1e-10;

/// A convex, differentiable stage cost with the curvature constants the
/// regret analysis uses.
///
/// Implementations must satisfy `‖∇_x c(x,u)‖ ≤ G_c‖x‖` and
/// `‖∇_u c(x,u)‖ ≤ G_c‖u‖` everywhere; [`verify_cost`] checks this on samples.
pub trait StageCost<T: Real>: Send + Sync {
    fn value(&self, x: &DVector<T>, u: &DVector<T>) -> T;
    fn grad_x(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T>;
    fn grad_u(&self, x: &DVector<T>, u: &DVector<T>) -> DVector<T>;

    /// Joint Hessian in `(x, u)`, when the family has one.
    fn hessian(&self, _x: &DVector<T>, _u: &DVector<T>) -> Option<DMatrix<T>> {
        None
    }

    /// `G_c ≥ 1`.
    fn gradient_bound(&self) -> T;

    /// `α` with `αI ⪯ ∇²c`.
    fn strong_convexity(&self) -> Option<T> {
        None
    }

    /// `β` with `∇²c ⪯ βI`.
    fn smoothness(&self) -> Option<T> {
        None
    }
}

/// `c(x, u) = xᵀQx + uᵀRu`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCost<T: Real> {
    q: DMatrix<T>,
    r: DMatrix<T>,
    hessian: DMatrix<T>,
    g_c: T,
    alpha: Option<T>,
    beta: Option<T>,
}

impl<T: Real> QuadraticCost<T> {
    pub fn new(q: DMatrix<T>, r: DMatrix<T>) -> Result<Self> {
        let tol: T = lit(PSD_TOL);
        for (name, m) in [("Q", &q), ("R", &r)] {
            if m.nrows() == 0 || !is_symmetric(m, tol) {
                return Err(Error::invalid(format!("{name} must be a non-empty symmetric matrix")));
            }
            let (min, _) = symmetric_eigen_range(m);
            if min < -tol {
                return Err(Error::invalid(format!(
                    "{name} is not positive semidefinite (eigenvalue {min})"
                )));
            }
        }
        let two: T = lit(2.0);
        let g_c = (two * spectral_norm(&q)).max(two * spectral_norm(&r)).max(T::one());
        let (qmin, qmax) = symmetric_eigen_range(&q);
        let (rmin, rmax) = symmetric_eigen_range(&r);
        let lo = two * qmin.min(rmin);
        let hi = two * qmax.max(rmax);
        let hessian = block_diagonal(&q, &r) * two;
        Ok(Self {
            q,
            r,
            hessian,
            g_c,
            alpha: (lo > T::zero()).then_some(lo),
            beta: (hi > T::zero()).then_some(hi),
        })
    }

    pub fn identity(n_x: usize, n_u: usize) -> Self {
        Self::new(DMatrix::identity(n_x, n_x), DMatrix::identity(n_u, n_u)).expect("identity weights are PSD")
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }
}

impl<T: Real> StageCost<T> for QuadraticCost<T> {
    fn value(&self, x: &DVector<T>, u: &DVector<T>) -> T {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }

    fn grad_x(&self, x: &DVector<T>, _u: &DVector<T>) -> DVector<T> {
        &self.q * x * lit::<T>(2.0)
    }

    fn grad_u(&self, _x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
        &self.r * u * lit::<T>(2.0)
    }

    fn hessian(&self, _x: &DVector<T>, _u: &DVector<T>) -> Option<DMatrix<T>> {
        Some(self.hessian.clone())
    }

    fn gradient_bound(&self) -> T {
        self.g_c
    }

    fn strong_convexity(&self) -> Option<T> {
        self.alpha
    }

    fn smoothness(&self) -> Option<T> {
        self.beta
    }
}

/// The sequence `{c_t}`; each cost is handed out only through [`CostSchedule::reveal`].
pub trait CostSchedule<T: Real>: Send + Sync {
    type Cost: StageCost<T>;

    /// Cost of step `t`. Deterministic in `t`.
    fn reveal(&self, t: usize) -> Self::Cost;

    /// A `G_c` valid for every revealed cost.
    fn gradient_bound(&self) -> T;
}

/// The same cost at every step.
#[derive(Clone, Debug)]
pub struct FixedSchedule<C>(pub C);

impl<T: Real, C: StageCost<T> + Clone> CostSchedule<T> for FixedSchedule<C> {
    type Cost = C;

    fn reveal(&self, _t: usize) -> C {
        self.0.clone()
    }

    fn gradient_bound(&self) -> T {
        self.0.gradient_bound()
    }
}

/// Per-step random quadratic costs with `‖Q_t‖, ‖R_t‖` uniform in `[0.1, 1]`.
#[derive(Clone, Debug)]
pub struct RandomQuadraticSchedule<T> {
    seed: u64,
    horizon: usize,
    n_x: usize,
    n_u: usize,
    _scalar: PhantomData<T>,
}

impl<T: Real> RandomQuadraticSchedule<T> {
    pub fn new(seed: u64, horizon: usize, n_x: usize, n_u: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("cost schedule horizon must be >= 1"));
        }
        if n_x == 0 || n_u == 0 {
            return Err(Error::invalid("cost dimensions must be >= 1"));
        }
        Ok(Self {
            seed,
            horizon,
            n_x,
            n_u,
            _scalar: PhantomData,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn random_psd(rng: &mut impl Rng, n: usize) -> DMatrix<T> {
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let s = &g * g.transpose();
        let target = rng.random_range(0.1..=1.0);
        let norm = spectral_norm(&s);
        let s = if norm > 0.0 {
            s * (target / norm)
        } else {
            DMatrix::identity(n, n) * target
        };
        s.map(lit)
    }
}

/// Builds the schedule used for adversarially varying convex costs.
pub fn adversarial_convex_schedule<T: Real>(
    seed: u64,
    horizon: usize,
    n_x: usize,
    n_u: usize,
) -> Result<RandomQuadraticSchedule<T>> {
    RandomQuadraticSchedule::new(seed, horizon, n_x, n_u)
}

impl<T: Real> CostSchedule<T> for RandomQuadraticSchedule<T> {
    type Cost = QuadraticCost<T>;

    fn reveal(&self, t: usize) -> QuadraticCost<T> {
        let mut rng = counter_rng(self.seed, Domain::Cost, t as u64);
        let q = Self::random_psd(&mut rng, self.n_x);
        let r = Self::random_psd(&mut rng, self.n_u);
        QuadraticCost::new(q, r).expect("Gram matrices are symmetric PSD")
    }

    fn gradient_bound(&self) -> T {
        lit(2.0)
    }
}

/// Either quadratic family, as selected by configuration.
#[derive(Clone, Debug)]
pub enum QuadraticSchedule<T: Real> {
    Fixed(QuadraticCost<T>),
    Random(RandomQuadraticSchedule<T>),
}

impl<T: Real> CostSchedule<T> for QuadraticSchedule<T> {
    type Cost = QuadraticCost<T>;

    fn reveal(&self, t: usize) -> QuadraticCost<T> {
        match self {
            QuadraticSchedule::Fixed(c) => c.clone(),
            QuadraticSchedule::Random(s) => s.reveal(t),
        }
    }

    fn gradient_bound(&self) -> T {
        match self {
            QuadraticSchedule::Fixed(c) => c.gradient_bound(),
            QuadraticSchedule::Random(s) => s.gradient_bound(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFamily {
    Quadratic,
    RandomQuadratic,
}

/// Config block `{"family": "quadratic"|"random_quadratic", "Q": ..., "R": ..., "seed": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub family: CostFamily,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
}

impl CostSpec {
    /// Builds the schedule for one episode. Random families mix the episode
    /// seed into the configured seed.
    pub fn build<T: Real>(&self, n_x: usize, n_u: usize, horizon: usize, episode_seed: u64) -> Result<QuadraticSchedule<T>> {
        match self.family {
            CostFamily::Quadratic => {
                let q = match &self.q {
                    Some(rows) => matrix_from_rows(rows, "cost Q")?,
                    None => DMatrix::identity(n_x, n_x),
                };
                let r = match &self.r {
                    Some(rows) => matrix_from_rows(rows, "cost R")?,
                    None => DMatrix::identity(n_u, n_u),
                };
                if q.shape() != (n_x, n_x) || r.shape() != (n_u, n_u) {
                    return Err(Error::invalid(format!(
                        "cost weights must be {n_x}x{n_x} and {n_u}x{n_u}"
                    )));
                }
                Ok(QuadraticSchedule::Fixed(QuadraticCost::new(q, r)?))
            }
            CostFamily::RandomQuadratic => Ok(QuadraticSchedule::Random(RandomQuadraticSchedule::new(
                derive_seed(self.seed, episode_seed),
                horizon,
                n_x,
                n_u,
            )?)),
        }
    }
}

/// Outcome of sampled verification of a user-supplied cost.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostVerification {
    pub samples: usize,
    pub radius: f64,
    /// Largest `‖∇c‖ / (G_c‖·‖)` seen.
    pub worst_gradient_ratio: f64,
    /// Largest `c(mid) - (c(a)+c(b))/2` seen, relative to the magnitudes involved.
    pub worst_convexity_gap: f64,
    /// Largest relative error between the gradient and central differences.
    pub worst_fd_error: f64,
    pub failures: Vec<String>,
}

impl CostVerification {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks the gradient-growth bound, midpoint convexity, gradient consistency
/// and declared curvature constants on random points in a ball.
///
/// Returns an error listing every failed check.
pub fn verify_cost<T: Real, C: StageCost<T> + ?Sized>(
    cost: &C,
    n_x: usize,
    n_u: usize,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<CostVerification> {
    let mut rng = counter_rng(seed, Domain::Verification, 0);
    let g_c = to_f64(cost.gradient_bound());
    let mut failures = Vec::new();
    if g_c < 1.0 {
        failures.push(format!("declared G_c = {g_c} < 1"));
    }
    let point = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> DVector<T> {
        let dir = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
        let norm = dir.norm().max(1e-300);
        let rad = radius * rng.random::<f64>();
        (dir * (rad / norm)).map(lit)
    };

    let (mut worst_ratio, mut worst_gap, mut worst_fd) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for i in 0..samples {
        let (x, u) = (point(&mut rng, n_x), point(&mut rng, n_u));
        let (x2, u2) = (point(&mut rng, n_x), point(&mut rng, n_u));
        let gx = cost.grad_x(&x, &u);
        let gu = cost.grad_u(&x, &u);
        for (g, z, what) in [(&gx, &x, "x"), (&gu, &u, "u")] {
            let (gn, zn) = (to_f64(g.norm()), to_f64(z.norm()));
            if gn > g_c * zn * (1.0 + 1e-9) + 1e-9 {
                failures.push(format!("gradient bound in {what} violated at sample {i}: {gn} > {g_c}·{zn}"));
            }
            if zn > 0.0 {
                worst_ratio = worst_ratio.max(gn / (g_c * zn));
            }
        }

        let half: T = lit(0.5);
        let xm = (&x + &x2) * half;
        let um = (&u + &u2) * half;
        let (ca, cb, cm) = (to_f64(cost.value(&x, &u)), to_f64(cost.value(&x2, &u2)), to_f64(cost.value(&xm, &um)));
        let gap = (cm - 0.5 * (ca + cb)) / (1.0 + ca.abs() + cb.abs());
        worst_gap = worst_gap.max(gap);
        if gap > 1e-9 {
            failures.push(format!("midpoint convexity violated at sample {i}"));
        }

        let fd = central_difference(cost, &x, &u);
        let analytic: Vec<f64> = gx.iter().chain(gu.iter()).map(|v| to_f64(*v)).collect();
        let err: f64 = fd.iter().zip(&analytic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        worst_fd = worst_fd.max(err / scale);
        if err / scale > 1e-6 {
            failures.push(format!("gradient disagrees with central differences at sample {i}"));
        }

        if let Some(h) = cost.hessian(&x, &u) {
            let (lo, hi) = symmetric_eigen_range(&h);
            if let Some(alpha) = cost.strong_convexity() {
                if to_f64(lo) < to_f64(alpha) - 1e-9 {
                    failures.push(format!("Hessian eigenvalue {lo} below declared alpha at sample {i}"));
                }
            }
            if let Some(beta) = cost.smoothness() {
                if to_f64(hi) > to_f64(beta) + 1e-9 {
                    failures.push(format!("Hessian eigenvalue {hi} above declared beta at sample {i}"));
                }
            }
        } else if cost.strong_convexity().is_some() || cost.smoothness().is_some() {
            failures.push("curvature constants declared without a Hessian".to_string());
            break;
        }
    }
    failures.dedup();
    let report = CostVerification {
        samples,
        radius,
        worst_gradient_ratio: worst_ratio,
        worst_convexity_gap: worst_gap.max(0.0),
        worst_fd_error: worst_fd,
        failures,
    };
    if report.passed() {
        Ok(report)
    } else {
        Err(Error::invalid(format!(
            "cost verification failed: {}",
            report.failures.iter().take(5).cloned().collect::<Vec<_>>().join("; ")
        )))
    }
}

/// Central differences of `c` in `(x, u)` with step `1e-6·max(1, |z_i|)`.
pub fn central_difference<T: Real, C: StageCost<T> + ?Sized>(cost: &C, x: &DVector<T>, u: &DVector<T>) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + u.len());
    for i in 0..x.len() + u.len() {
        let (mut xp, mut up) = (x.clone(), u.clone());
        let (mut xm, mut um) = (x.clone(), u.clone());
        let base = if i < x.len() { x[i] } else { u[i - x.len()] };
        let h: T = lit(1e-6 * to_f64(base).abs().max(1.0));
        if i < x.len() {
            xp[i] += h;
            xm[i] -= h;
        } else {
            up[i - x.len()] += h;
            um[i - x.len()] -= h;
        }
        let d = (cost.value(&xp, &up) - cost.value(&xm, &um)) / (h + h);
        out.push(to_f64(d));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn scalar_identity_weights() {
        let c = QuadraticCost::<f64>::identity(1, 1);
        assert_eq!(c.value(&v(&[3.0]), &v(&[2.0])), 13.0);
        assert_eq!(c.grad_x(&v(&[3.0]), &v(&[2.0]))[0], 6.0);
        assert_eq!(c.grad_u(&v(&[3.0]), &v(&[2.0]))[0], 4.0);
        assert_eq!(c.gradient_bound(), 2.0);
        assert_eq!(c.strong_convexity(), Some(2.0));
        assert_eq!(c.smoothness(), Some(2.0));
    }

    #[test]
    fn zero_weights() {
        let c = QuadraticCost::new(DMatrix::<f64>::zeros(2, 2), DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(c.value(&v(&[1.0, -4.0]), &v(&[7.0])), 0.0);
        assert_eq!(c.grad_x(&v(&[1.0, -4.0]), &v(&[7.0])).amax(), 0.0);
        assert_eq!(c.gradient_bound(), 1.0);
        assert_eq!(c.strong_convexity(), None);
    }

    #[test]
    fn curvature_from_block_diagonal() {
        let c = QuadraticCost::new(DMatrix::from_diagonal(&v(&[1.0, 4.0])), DMatrix::identity(1, 1)).unwrap();
        assert!((c.smoothness().unwrap() - 8.0).abs() < 1e-12);
        assert!((c.strong_convexity().unwrap() - 2.0).abs() < 1e-12);
        assert!((c.gradient_bound() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn non_psd_rejected() {
        let err = QuadraticCost::new(DMatrix::from_element(1, 1, -1.0), DMatrix::identity(1, 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticCost::new(asym, DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn random_schedule_is_deterministic_and_varies() {
        let s = RandomQuadraticSchedule::<f64>::new(42, 10, 2, 1).unwrap();
        let (x, u) = (v(&[0.3, -1.2]), v(&[0.7]));
        assert_eq!(s.reveal(3).value(&x, &u), s.reveal(3).value(&x, &u));
        assert_ne!(s.reveal(0).value(&x, &u), s.reveal(1).value(&x, &u));
        assert!(RandomQuadraticSchedule::<f64>::new(1, 0, 1, 1).is_err());
    }

    #[test]
    fn random_schedule_draws_are_psd_in_norm_range() {
        let s = adversarial_convex_schedule::<f64>(9, 200, 3, 2).unwrap();
        for t in 0..200 {
            let c = s.reveal(t);
            for m in [c.q(), c.r()] {
                let (lo, hi) = symmetric_eigen_range(m);
                assert!(lo >= -PSD_TOL);
                assert!((0.1 - 1e-12..=1.0 + 1e-12).contains(&hi));
            }
            assert!(c.gradient_bound() <= s.gradient_bound() + 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let s = RandomQuadraticSchedule::<f64>::new(5, 100, 3, 2).unwrap();
        let mut rng = counter_rng(1, Domain::Verification, 99);
        for t in 0..100 {
            let c = s.reveal(t);
            let x = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let u = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let fd = central_difference(&c, &x, &u);
            let g: Vec<f64> = c.grad_x(&x, &u).iter().chain(c.grad_u(&x, &u).iter()).copied().collect();
            for (a, b) in fd.iter().zip(&g) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn verification_accepts_quadratics() {
        let c = QuadraticCost::new(DMatrix::from_diagonal(&v(&[1.0, 0.5])), DMatrix::identity(1, 1) * 3.0).unwrap();
        let report = verify_cost(&c, 2, 1, 1000, 1e3, 3).unwrap();
        assert!(report.worst_gradient_ratio <= 1.0 + 1e-12);
    }

    struct Understated;
    impl StageCost<f64> for Understated {
        fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
            5.0 * (x.norm_squared() + u.norm_squared())
        }
        fn grad_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
            x * 10.0
        }
        fn grad_u(&self, _x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
            u * 10.0
        }
        fn gradient_bound(&self) -> f64 {
            2.0
        }
    }

    #[test]
    fn verification_rejects_understated_gradient_bound() {
        assert!(matches!(verify_cost(&Understated, 1, 1, 100, 10.0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn config_builds_fixed_and_random() {
        let fixed: CostSpec = serde_json::from_str(r#"{"family": "quadratic", "Q": [[2.0]], "R": [[1.0]]}"#).unwrap();
        let s = fixed.build::<f64>(1, 1, 10, 0).unwrap();
        assert_eq!(s.reveal(4).value(&v(&[1.0]), &v(&[1.0])), 3.0);
        let random: CostSpec = serde_json::from_str(r#"{"family": "random_quadratic", "seed": 4}"#).unwrap();
        let a = random.build::<f64>(1, 1, 10, 0).unwrap();
        let b = random.build::<f64>(1, 1, 10, 1).unwrap();
        assert_ne!(a.reveal(0).value(&v(&[1.0]), &v(&[1.0])), b.reveal(0).value(&v(&[1.0]), &v(&[1.0])));
        assert!(fixed.build::<f64>(2, 1, 10, 0).is_err());
    }
}
