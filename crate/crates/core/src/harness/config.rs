//! Experiment configuration and its validation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::comparator::{certified_candidates, gain_grid, GridAxis, DEFAULT_PGD_BUDGET};
use crate::costs::{CostFamily, CostSpec, QuadraticSchedule, StageCost};
use crate::error::{Error, Result};
use crate::learner::{alpha_tilde, LearningRate, ScheduleKind};
use crate::linalg::matrix_from_rows;
use crate::noise::{NoiseProcess, NoiseSpec};
use crate::policy::{horizon, AdmissibleSet, PolicyParams};
use crate::rng::derive_seed;
use crate::scalar::{lit, Real};
use crate::stability::{certify, StabilityCertificate};
use crate::system::{LinearSystem, SystemSpec};

/// Largest candidate set accepted from a grid specification.
pub const MAX_CANDIDATES: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub kappa: f64,
    pub gamma: f64,
}

/// Either a step count or the string `"H+3"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BurnIn {
    Steps(usize),
    Symbolic(String),
}

impl Default for BurnIn {
    fn default() -> Self {
        BurnIn::Steps(0)
    }
}

impl BurnIn {
    pub fn resolve(&self, h: usize) -> Result<usize> {
        match self {
            BurnIn::Steps(n) => Ok(*n),
            BurnIn::Symbolic(s) if s.replace(' ', "") == "H+3" => Ok(h + 3),
            BurnIn::Symbolic(s) => Err(Error::invalid(format!("burn_in must be an integer or \"H+3\", got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparatorSpec {
    /// One axis shared by all gain entries, or one axis per entry.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<GridAxis>,
    /// Explicit candidate gains; used together with the grid if both are given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub best_fixed_m: bool,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub burn_in: BurnIn,
}

fn default_budget() -> usize {
    DEFAULT_PGD_BUDGET
}

impl Default for ComparatorSpec {
    fn default() -> Self {
        Self {
            grid: Vec::new(),
            candidates: Vec::new(),
            best_fixed_m: false,
            budget: DEFAULT_PGD_BUDGET,
            burn_in: BurnIn::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub trace: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub gain: GainSpec,
    pub cost: CostSpec,
    pub noise: NoiseSpec,
    pub schedule: ScheduleKind,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub comparator: ComparatorSpec,
    /// Leading blocks of `M_0`; missing blocks are zero.
    #[serde(rename = "initial_M", default, skip_serializing_if = "Option::is_none")]
    pub initial_m: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_delta() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Validates every part and builds the shared objects.
    pub fn prepare<T: Real>(&self) -> Result<Prepared<T>> {
        let sys = LinearSystem::<T>::from_spec(&self.system)?;
        let k: DMatrix<T> = matrix_from_rows(&self.gain.k, "gain K")?;
        let (kappa, gamma) = (self.gain.kappa, self.gain.gamma);
        if !(kappa.is_finite() && gamma.is_finite()) {
            return Err(Error::invalid("kappa and gamma must be finite"));
        }
        let cert = certify(&sys, &k, lit(kappa), lit(gamma), self.schedule == ScheduleKind::StronglyConvex)?;
        if self.horizons.is_empty() {
            return Err(Error::invalid("horizons must not be empty"));
        }
        let mut hs = Vec::with_capacity(self.horizons.len());
        for &t in &self.horizons {
            hs.push(horizon(t, gamma)?);
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must not be empty"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::invalid("seeds must be distinct"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        let noise = NoiseProcess::from_spec(&self.noise, sys.n_x())?;
        let probe: QuadraticSchedule<T> = self.cost.build(sys.n_x(), sys.n_u(), 3, 0)?;

        let rate = match self.schedule {
            ScheduleKind::ConstantSqrtT => LearningRate::ConstantSqrtT,
            ScheduleKind::StronglyConvex => {
                let QuadraticSchedule::Fixed(cost) = &probe else {
                    return Err(Error::invalid("the strongly convex schedule needs a fixed quadratic cost"));
                };
                let alpha = cost
                    .strong_convexity()
                    .ok_or_else(|| Error::invalid("the strongly convex schedule needs a strongly convex cost"))?;
                let sigma_lower = noise.sigma_lower();
                if !(sigma_lower > 0.0) {
                    return Err(Error::invalid("the strongly convex schedule needs non-degenerate noise"));
                }
                LearningRate::StronglyConvex {
                    alpha_tilde: alpha_tilde(alpha, lit(sigma_lower), lit(gamma), lit(kappa)),
                }
            }
        };

        let x0 = match &self.x0 {
            Some(v) if v.len() == sys.n_x() => Some(DVector::from_iterator(v.len(), v.iter().map(|&x| lit(x)))),
            Some(_) => return Err(Error::invalid("x0 has the wrong dimension")),
            None => None,
        };
        let initial_blocks = match &self.initial_m {
            Some(blocks) => blocks
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let m: DMatrix<T> = matrix_from_rows(b, &format!("initial_M block {i}"))?;
                    if m.shape() != (sys.n_u(), sys.n_x()) {
                        return Err(Error::invalid(format!("initial_M block {i} must be {}x{}", sys.n_u(), sys.n_x())));
                    }
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        for (&t, &h) in self.horizons.iter().zip(&hs) {
            if initial_blocks.len() > h {
                return Err(Error::invalid(format!(
                    "initial_M has {} blocks but H = {h} at T = {t}",
                    initial_blocks.len()
                )));
            }
            let set = AdmissibleSet::new(lit(kappa), lit(gamma), sys.kappa_b(), h)?;
            if !initial_blocks.is_empty() && !set.contains(&pad_policy(&initial_blocks, h, sys.n_u(), sys.n_x())) {
                return Err(Error::invalid(format!("initial_M lies outside the admissible set at T = {t}")));
            }
        }

        let (candidates, dropped) = self.candidates(&sys, lit(kappa), lit(gamma))?;
        self.comparator.burn_in.resolve(0)?;
        if self.comparator.best_fixed_m && self.comparator.budget == 0 {
            return Err(Error::invalid("comparator budget must be >= 1"));
        }
        if self.cost.family == CostFamily::RandomQuadratic && (self.cost.q.is_some() || self.cost.r.is_some()) {
            return Err(Error::invalid("random_quadratic costs do not take Q or R"));
        }

        Ok(Prepared {
            cfg: self.clone(),
            sys,
            cert,
            noise,
            rate,
            candidates,
            dropped_candidates: dropped,
            initial_blocks,
            x0,
        })
    }

    fn candidates<T: Real>(&self, sys: &LinearSystem<T>, kappa: T, gamma: T) -> Result<(Vec<DMatrix<T>>, usize)> {
        let (n_u, n_x) = (sys.n_u(), sys.n_x());
        let mut raw: Vec<DMatrix<T>> = Vec::new();
        let grid = if self.comparator.grid.is_empty() && self.comparator.candidates.is_empty() {
            let k = self.gain.kappa;
            vec![GridAxis { min: -k, max: k, step: 0.02 }]
        } else {
            self.comparator.grid.clone()
        };
        if !grid.is_empty() {
            let per_entry: usize = if grid.len() == 1 {
                grid[0].values()?.len().saturating_pow((n_u * n_x) as u32)
            } else {
                grid.iter().map(|a| a.values().map(|v| v.len())).product::<Result<usize>>()?
            };
            if per_entry > MAX_CANDIDATES {
                return Err(Error::invalid(format!(
                    "comparator grid has {per_entry} candidates (limit {MAX_CANDIDATES}); give a coarser grid or explicit candidates"
                )));
            }
            raw.extend(gain_grid(&grid, n_u, n_x)?);
        }
        for (i, rows) in self.comparator.candidates.iter().enumerate() {
            let k: DMatrix<T> = matrix_from_rows(rows, &format!("candidate {i}"))?;
            if k.shape() != (n_u, n_x) {
                return Err(Error::invalid(format!("candidate {i} must be {n_u}x{n_x}")));
            }
            raw.push(k);
        }
        let (kept, dropped) = certified_candidates(sys, raw, kappa, gamma)?;
        if kept.is_empty() {
            return Err(Error::invalid("no comparator candidate is strongly stable for the given (kappa, gamma)"));
        }
        Ok((kept, dropped))
    }
}

/// `blocks` padded with zero blocks to length `h`.
pub fn pad_policy<T: Real>(blocks: &[DMatrix<T>], h: usize, n_u: usize, n_x: usize) -> PolicyParams<T> {
    let mut all = blocks.to_vec();
    all.resize(h, DMatrix::zeros(n_u, n_x));
    PolicyParams::from_blocks(all).expect("h >= 1 blocks of one shape")
}

/// A validated configuration with its derived objects.
#[derive(Clone, Debug)]
pub struct Prepared<T: Real> {
    pub cfg: ExperimentConfig,
    pub sys: LinearSystem<T>,
    pub cert: StabilityCertificate<T>,
    pub noise: NoiseProcess,
    pub rate: LearningRate<T>,
    pub candidates: Vec<DMatrix<T>>,
    pub dropped_candidates: usize,
    initial_blocks: Vec<DMatrix<T>>,
    pub x0: Option<DVector<T>>,
}

impl<T: Real> Prepared<T> {
    /// Noise process of episode `seed`.
    pub fn episode_noise(&self, seed: u64) -> NoiseProcess {
        self.noise.reseeded(derive_seed(self.noise.seed(), seed))
    }

    pub fn episode_costs(&self, horizon_t: usize, seed: u64) -> Result<QuadraticSchedule<T>> {
        self.cfg.cost.build(self.sys.n_x(), self.sys.n_u(), horizon_t, seed)
    }

    pub fn initial_policy(&self, h: usize) -> Option<PolicyParams<T>> {
        (!self.initial_blocks.is_empty()).then(|| pad_policy(&self.initial_blocks, h, self.sys.n_u(), self.sys.n_x()))
    }

    pub fn h(&self, horizon_t: usize) -> usize {
        horizon(horizon_t, self.cfg.gain.gamma).expect("validated horizon")
    }
}
