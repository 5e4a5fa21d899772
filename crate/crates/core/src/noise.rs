//! Stochastic disturbance processes and their moment parameters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_range;
use crate::rng::{counter_rng, Domain};
use crate::scalar::{lit, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
    StudentT,
    ScaledBernoulli,
    Zero,
}

/// Config block `{"family": ..., "scale": ..., "df": ..., "seed": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

/// An i.i.d. zero-mean noise process on `R^dim`.
///
/// Components are independent draws of the family scaled by `scale`;
/// `sample(t)` is a pure function of `(seed, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseProcess {
    family: NoiseFamily,
    scale: f64,
    df: Option<f64>,
    dim: usize,
    seed: u64,
}

impl NoiseProcess {
    pub fn new(family: NoiseFamily, scale: f64, df: Option<f64>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("noise dimension must be >= 1"));
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::invalid(format!("noise scale must be finite and >= 0, got {scale}")));
        }
        match (family, df) {
            (NoiseFamily::StudentT, Some(v)) if v.is_finite() && v > 4.0 => {}
            (NoiseFamily::StudentT, Some(v)) => {
                return Err(Error::invalid(format!(
                    "student_t needs df > 4 for a finite fourth moment, got {v}"
                )))
            }
            (NoiseFamily::StudentT, None) => return Err(Error::invalid("student_t requires df")),
            (_, Some(_)) => return Err(Error::invalid("df applies only to student_t")),
            _ => {}
        }
        Ok(Self {
            family,
            scale,
            df,
            dim,
            seed,
        })
    }

    pub fn from_spec(spec: &NoiseSpec, dim: usize) -> Result<Self> {
        Self::new(spec.family, spec.scale, spec.df, dim, spec.seed)
    }

    /// Same law, different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }
    pub fn df(&self) -> Option<f64> {
        self.df
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `w_t`; the zero vector for `t < 0`.
    pub fn sample<T: Real>(&self, t: i64) -> DVector<T> {
        if t < 0 || self.family == NoiseFamily::Zero {
            return DVector::zeros(self.dim);
        }
        let mut rng = counter_rng(self.seed, Domain::Noise, t as u64);
        let s = self.scale;
        DVector::from_fn(self.dim, |_, _| {
            let z: f64 = match self.family {
                NoiseFamily::Gaussian => rng.sample(StandardNormal),
                NoiseFamily::StudentT => {
                    let dist = StudentT::new(self.df.expect("validated df")).expect("validated df");
                    dist.sample(&mut rng)
                }
                NoiseFamily::Laplace => {
                    let u: f64 = rng.random::<f64>() - 0.5;
                    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
                }
                NoiseFamily::ScaledBernoulli => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
                NoiseFamily::Zero => 0.0,
            };
            lit(s * z)
        })
    }

    /// `w_0, ..., w_{horizon-1}`.
    pub fn realize<T: Real>(&self, horizon: usize) -> Vec<DVector<T>> {
        (0..horizon as i64).map(|t| self.sample(t)).collect()
    }

    /// Per-component second and fourth moments.
    fn component_moments(&self) -> (f64, f64) {
        let s2 = self.scale * self.scale;
        match self.family {
            NoiseFamily::Gaussian => (s2, 3.0 * s2 * s2),
            NoiseFamily::Laplace => (2.0 * s2, 24.0 * s2 * s2),
            NoiseFamily::StudentT => {
                let v = self.df.expect("validated df");
                (s2 * v / (v - 2.0), 3.0 * v * v * s2 * s2 / ((v - 2.0) * (v - 4.0)))
            }
            NoiseFamily::ScaledBernoulli => (s2, s2 * s2),
            NoiseFamily::Zero => (0.0, 0.0),
        }
    }

    /// Exact `E‖w‖⁴`.
    pub fn fourth_moment(&self) -> f64 {
        let (m2, m4) = self.component_moments();
        let n = self.dim as f64;
        n * m4 + n * (n - 1.0) * m2 * m2
    }

    /// `σ_w = (E‖w‖⁴)^{1/4}`, which also bounds `E‖w‖`.
    pub fn sigma_w(&self) -> f64 {
        self.fourth_moment().powf(0.25)
    }

    /// Exact `σ̲` with `E[wwᵀ] = σ̲²I`.
    pub fn sigma_lower(&self) -> f64 {
        self.component_moments().0.sqrt()
    }

    /// `σ_w` in the sub-Gaussian sense `log E e^{λw_i} ≤ λ²σ_w²/(2n)`, when
    /// the family is sub-Gaussian.
    pub fn sub_gaussian_sigma(&self) -> Option<f64> {
        match self.family {
            NoiseFamily::Gaussian | NoiseFamily::ScaledBernoulli | NoiseFamily::Zero => {
                Some(self.scale * (self.dim as f64).sqrt())
            }
            NoiseFamily::Laplace | NoiseFamily::StudentT => None,
        }
    }
}

/// Monte-Carlo moment estimates over `t = 0..samples`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentEstimate {
    /// Mean of `‖w‖`.
    pub sigma_w_1: f64,
    /// `(mean ‖w‖⁴)^{1/4}`.
    pub sigma_w_4: f64,
    /// Square root of the smallest eigenvalue of the empirical `E[wwᵀ]`.
    pub sigma_lower: f64,
    pub samples: usize,
    pub mean: Vec<f64>,
}

pub const MIN_MOMENT_SAMPLES: usize = 1000;

pub fn estimate_moments(proc: &NoiseProcess, samples: usize) -> Result<MomentEstimate> {
    if samples < MIN_MOMENT_SAMPLES {
        return Err(Error::invalid(format!("moment estimation needs >= {MIN_MOMENT_SAMPLES} samples")));
    }
    let n = proc.dim();
    let (mut m1, mut m4) = (0.0, 0.0);
    let mut mean = DVector::<f64>::zeros(n);
    let mut second = DMatrix::<f64>::zeros(n, n);
    for t in 0..samples as i64 {
        let w: DVector<f64> = proc.sample(t);
        let sq = w.norm_squared();
        m1 += sq.sqrt();
        m4 += sq * sq;
        mean += &w;
        second.ger(1.0, &w, &w, 1.0);
    }
    let k = samples as f64;
    second /= k;
    let (lo, _) = symmetric_eigen_range(&second);
    Ok(MomentEstimate {
        sigma_w_1: m1 / k,
        sigma_w_4: (m4 / k).powf(0.25),
        sigma_lower: lo.max(0.0).sqrt(),
        samples,
        mean: (mean / k).iter().copied().collect(),
    })
}
