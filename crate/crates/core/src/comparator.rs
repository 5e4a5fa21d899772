//! Hindsight baselines on a realized noise sequence, and regret against them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{CostSchedule, StageCost};
use crate::error::{Error, Result};
use crate::learner::{noise_hash, EpisodeRecord};
use crate::linalg::matrix_to_rows;
use crate::policy::{comparator_params, control_input_unchecked, AdmissibleSet, NoiseHistory, PolicyParams};
use crate::scalar::{lit, to_f64, Real};
use crate::stability::{certify, ClosedLoop};
use crate::surrogate::{value_and_grad_f, window_len};
use crate::system::LinearSystem;

/// Default iteration budget of [`best_fixed_policy`].
pub const DEFAULT_PGD_BUDGET: usize = 500;
const POWER_ITERATIONS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    BestFixedK,
    MStarPolicy,
    BestFixedM,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Argmin {
    Gain(Vec<Vec<f64>>),
    Policy(Vec<Vec<Vec<f64>>>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SearchMeta {
    pub candidates_evaluated: usize,
    pub iterations: usize,
    /// Total rollout cost per candidate, in candidate order.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub candidate_costs: Vec<f64>,
    /// `Σ_t f_t(M)` at the returned policy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparatorResult {
    pub kind: ComparatorKind,
    /// `Σ_{s ≤ t} c_s` of the comparator's rollout, per step.
    pub cumulative_cost: Vec<f64>,
    pub argmin: Argmin,
    pub meta: SearchMeta,
    pub noise_hash: String,
}

impl ComparatorResult {
    pub fn total_cost(&self) -> f64 {
        self.cumulative_cost.last().copied().unwrap_or(0.0)
    }
}

/// Per-entry grid `{min, max, step}` for candidate gains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.min <= self.max && self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::invalid(format!("bad grid axis {self:?}")));
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        if n > 100_000 {
            return Err(Error::invalid("grid axis has more than 1e5 points"));
        }
        Ok((0..=n).map(|i| self.min + i as f64 * self.step).collect())
    }
}

/// Cartesian grid of `n_u × n_x` gains, entries in row-major order with the
/// last entry varying fastest. A single axis is shared by every entry.
pub fn gain_grid<T: Real>(axes: &[GridAxis], n_u: usize, n_x: usize) -> Result<Vec<DMatrix<T>>> {
    let entries = n_u * n_x;
    let axes: Vec<Vec<f64>> = match axes.len() {
        1 => vec![axes[0].values()?; entries],
        n if n == entries => axes.iter().map(GridAxis::values).collect::<Result<_>>()?,
        n => return Err(Error::invalid(format!("gain grid needs 1 or {entries} axes, got {n}"))),
    };
    let total: usize = axes.iter().map(Vec::len).product();
    if total > 1_000_000 {
        return Err(Error::invalid(format!("gain grid has {total} candidates")));
    }
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; entries];
    for _ in 0..total {
        out.push(DMatrix::from_fn(n_u, n_x, |i, j| lit(axes[i * n_x + j][idx[i * n_x + j]])));
        for e in (0..entries).rev() {
            idx[e] += 1;
            if idx[e] < axes[e].len() {
                break;
            }
            idx[e] = 0;
        }
    }
    Ok(out)
}

/// Candidates that certify as (κ,γ)-strongly stable, and how many were dropped.
pub fn certified_candidates<T: Real>(
    sys: &LinearSystem<T>,
    candidates: Vec<DMatrix<T>>,
    kappa: T,
    gamma: T,
) -> Result<(Vec<DMatrix<T>>, usize)> {
    let mut kept = Vec::with_capacity(candidates.len());
    let mut dropped = 0;
    for k in candidates {
        match certify(sys, &k, kappa, gamma, false) {
            Ok(_) => kept.push(k),
            Err(Error::Certification(_)) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((kept, dropped))
}

/// Reveals `c_0 .. c_{T-1}` once so rollouts can share them.
pub fn reveal_all<T: Real, S: CostSchedule<T>>(costs: &S, horizon: usize) -> Vec<S::Cost> {
    (0..horizon).map(|t| costs.reveal(t)).collect()
}

/// Cumulative cost of `u = -Kx`.
pub fn linear_rollout_costs<T: Real, C: StageCost<T>>(
    sys: &LinearSystem<T>,
    k: &DMatrix<T>,
    costs: &[C],
    noise: &[DVector<T>],
) -> Vec<f64> {
    let mut x = DVector::zeros(sys.n_x());
    let mut total = 0.0;
    costs
        .iter()
        .zip(noise)
        .map(|(c, w)| {
            let u = -(k * &x);
            total += to_f64(c.value(&x, &u));
            x = sys.transition(&x, &u, w);
            total
        })
        .collect()
}

/// Cumulative cost of the fixed disturbance-action policy `(K, M)`.
pub fn policy_rollout_costs<T: Real, C: StageCost<T>>(
    sys: &LinearSystem<T>,
    k: &DMatrix<T>,
    m: &PolicyParams<T>,
    costs: &[C],
    noise: &[DVector<T>],
) -> Vec<f64> {
    let mut x = DVector::zeros(sys.n_x());
    let mut hist = NoiseHistory::new(m.h(), sys.n_x());
    let mut total = 0.0;
    costs
        .iter()
        .zip(noise)
        .map(|(c, w)| {
            let u = control_input_unchecked(k, m, &x, &hist);
            total += to_f64(c.value(&x, &u));
            x = sys.transition(&x, &u, w);
            hist.push(w.clone());
            total
        })
        .collect()
}

fn check_inputs<T: Real, C>(sys: &LinearSystem<T>, costs: &[C], noise: &[DVector<T>]) -> Result<()> {
    if costs.len() != noise.len() {
        return Err(Error::invalid(format!(
            "{} costs for {} noise vectors",
            costs.len(),
            noise.len()
        )));
    }
    if noise.iter().any(|w| w.len() != sys.n_x()) {
        return Err(Error::invalid("noise dimension differs from n_x"));
    }
    Ok(())
}

/// Best gain among `candidates` for `u = -Kx` on the realized noise.
/// Ties go to the earliest candidate.
pub fn best_fixed_gain<T: Real, C: StageCost<T>>(
    sys: &LinearSystem<T>,
    candidates: &[DMatrix<T>],
    costs: &[C],
    noise: &[DVector<T>],
) -> Result<ComparatorResult> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate gains"));
    }
    check_inputs(sys, costs, noise)?;
    if let Some(k) = candidates.iter().find(|k| k.shape() != (sys.n_u(), sys.n_x())) {
        return Err(Error::invalid(format!("candidate gain has shape {:?}", k.shape())));
    }
    let rollouts: Vec<Vec<f64>> = candidates
        .par_iter()
        .map(|k| linear_rollout_costs(sys, k, costs, noise))
        .collect();
    let totals: Vec<f64> = rollouts.iter().map(|r| r.last().copied().unwrap_or(0.0)).collect();
    let mut best = 0;
    for (i, &c) in totals.iter().enumerate() {
        if c < totals[best] {
            best = i;
        }
    }
    debug_assert!(totals.iter().all(|&c| totals[best] <= c));
    Ok(ComparatorResult {
        kind: ComparatorKind::BestFixedK,
        cumulative_cost: rollouts.into_iter().nth(best).expect("best index in range"),
        argmin: Argmin::Gain(matrix_to_rows(&candidates[best])),
        meta: SearchMeta {
            candidates_evaluated: candidates.len(),
            candidate_costs: totals,
            caveat: Some("minimum over a finite candidate set; the continuous class can only do better".into()),
            ..SearchMeta::default()
        },
        noise_hash: noise_hash(noise),
    })
}

/// Rollout of the disturbance-action policy `M_*` that imitates `-K*x` on top of `K`.
pub fn mstar_rollout<T: Real, C: StageCost<T>>(
    sys: &LinearSystem<T>,
    k: &DMatrix<T>,
    k_star: &DMatrix<T>,
    set: &AdmissibleSet<T>,
    costs: &[C],
    noise: &[DVector<T>],
) -> Result<ComparatorResult> {
    check_inputs(sys, costs, noise)?;
    let m = comparator_params(k, k_star, sys, set)?;
    Ok(ComparatorResult {
        kind: ComparatorKind::MStarPolicy,
        cumulative_cost: policy_rollout_costs(sys, k, &m, costs, noise),
        argmin: Argmin::Policy(m.to_rows()),
        meta: SearchMeta::default(),
        noise_hash: noise_hash(noise),
    })
}

/// `Σ_t f_t(M)` and its gradient, with `f_t` built from the noise before `t`.
pub fn surrogate_total<T: Real, C: StageCost<T>>(
    cl: &ClosedLoop<T>,
    m: &PolicyParams<T>,
    costs: &[C],
    noise: &[DVector<T>],
) -> Result<(T, DVector<T>)> {
    let mut hist = NoiseHistory::new(window_len(m.h()), cl.n_x());
    let mut value = T::zero();
    let mut grad = DVector::zeros(m.h() * m.n_u() * m.n_x());
    for (c, w) in costs.iter().zip(noise) {
        let (f, g, _) = value_and_grad_f(c, cl, m, &hist)?;
        value += f;
        grad += g.to_vector();
        hist.push(w.clone());
    }
    Ok((value, grad))
}

/// Minimizes `Σ_t f_t(M)` over the admissible set by projected gradient
/// descent from `0` and from each extra start, with step `1/L̂` where `L̂`
/// is a power-iteration estimate of the curvature.
pub fn best_fixed_policy<T: Real, C: StageCost<T>>(
    sys: &LinearSystem<T>,
    k: &DMatrix<T>,
    set: &AdmissibleSet<T>,
    costs: &[C],
    noise: &[DVector<T>],
    extra_starts: &[PolicyParams<T>],
    budget: usize,
) -> Result<ComparatorResult> {
    if budget == 0 {
        return Err(Error::invalid("optimizer budget must be >= 1"));
    }
    check_inputs(sys, costs, noise)?;
    let cl = ClosedLoop::new(sys, k, 0)?;
    let (h, n_u, n_x) = (set.h, sys.n_u(), sys.n_x());
    let objective = |m: &PolicyParams<T>| surrogate_total(&cl, m, costs, noise);
    let from_vec = |v: &DVector<T>| PolicyParams::from_vector(h, n_u, n_x, v);

    let zero = PolicyParams::zeros(h, n_u, n_x);
    let curvature = estimate_curvature(&zero, &objective, &from_vec)?;
    let mut starts = vec![zero];
    starts.extend(extra_starts.iter().map(|m| set.project(m)));

    let mut best: Option<(T, PolicyParams<T>)> = None;
    let mut iterations = 0;
    for start in starts {
        let mut m = start;
        let (mut value, mut grad) = objective(&m)?;
        if curvature > T::zero() {
            for _ in 0..budget {
                iterations += 1;
                let candidate = set.project(&from_vec(&(m.to_vector() - &grad / curvature))?);
                let (v, g) = objective(&candidate)?;
                if v > value {
                    break;
                }
                let moved = candidate.distance(&m);
                m = candidate;
                value = v;
                grad = g;
                if moved <= lit::<T>(1e-12) * (T::one() + m.frob_norm()) {
                    break;
                }
            }
        }
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, m));
        }
    }
    let (value, m) = best.expect("at least one start");
    Ok(ComparatorResult {
        kind: ComparatorKind::BestFixedM,
        cumulative_cost: policy_rollout_costs(sys, k, &m, costs, noise),
        argmin: Argmin::Policy(m.to_rows()),
        meta: SearchMeta {
            candidates_evaluated: 1 + extra_starts.len(),
            iterations,
            surrogate_objective: Some(to_f64(value)),
            ..SearchMeta::default()
        },
        noise_hash: noise_hash(noise),
    })
}

/// Largest curvature along gradient differences, by power iteration.
fn estimate_curvature<T: Real>(
    at: &PolicyParams<T>,
    objective: &impl Fn(&PolicyParams<T>) -> Result<(T, DVector<T>)>,
    from_vec: &impl Fn(&DVector<T>) -> Result<PolicyParams<T>>,
) -> Result<T> {
    let base = at.to_vector();
    let (_, g0) = objective(at)?;
    let mut dir = DVector::from_fn(base.len(), |i, _| lit::<T>(1.0 + 0.1 * (i % 7) as f64));
    dir /= dir.norm();
    let mut estimate = T::zero();
    for _ in 0..POWER_ITERATIONS {
        let (_, g) = objective(&from_vec(&(&base + &dir))?)?;
        let hv = g - &g0;
        let n = hv.norm();
        if n <= T::zero() {
            return Ok(estimate);
        }
        estimate = n;
        dir = hv / n;
    }
    Ok(estimate * lit(1.05))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegretCurve {
    pub learner_cumulative: Vec<f64>,
    pub comparator_cumulative: Vec<f64>,
    /// `(step count, regret)` at `T/8, T/4, T/2, T`.
    pub checkpoints: Vec<(usize, f64)>,
    pub regret: f64,
    /// Regret counted from `burn_in` on.
    pub regret_after_burn_in: f64,
    pub burn_in: usize,
}

/// Checkpoint step counts `T/8, T/4, T/2, T` (at least 1, deduplicated).
pub fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut c: Vec<usize> = [horizon / 8, horizon / 4, horizon / 2, horizon].iter().map(|&k| k.max(1)).collect();
    c.dedup();
    c
}

pub fn regret<T: Real>(learner: &EpisodeRecord<T>, comparator: &ComparatorResult, burn_in: usize) -> Result<RegretCurve> {
    regret_from_costs(&learner.cumulative_cost, &learner.noise_hash, comparator, burn_in)
}

/// Regret from a learner's cumulative costs and its noise hash.
pub fn regret_from_costs(
    learner_cumulative: &[f64],
    learner_noise_hash: &str,
    comparator: &ComparatorResult,
    burn_in: usize,
) -> Result<RegretCurve> {
    let horizon = learner_cumulative.len();
    if comparator.cumulative_cost.len() != horizon {
        return Err(Error::invalid(format!(
            "learner ran {horizon} steps, comparator {}",
            comparator.cumulative_cost.len()
        )));
    }
    if comparator.noise_hash != learner_noise_hash {
        return Err(Error::invalid("comparator consumed a different noise realization"));
    }
    if horizon == 0 {
        return Err(Error::invalid("empty trace"));
    }
    let diff = |k: usize| learner_cumulative[k - 1] - comparator.cumulative_cost[k - 1];
    let total = diff(horizon);
    let before = if burn_in == 0 || burn_in > horizon { 0.0 } else { diff(burn_in) };
    Ok(RegretCurve {
        checkpoints: checkpoints(horizon).into_iter().map(|k| (k, diff(k))).collect(),
        regret: total,
        regret_after_burn_in: if burn_in >= horizon { 0.0 } else { total - before },
        burn_in,
        learner_cumulative: learner_cumulative.to_vec(),
        comparator_cumulative: comparator.cumulative_cost.clone(),
    })
}
