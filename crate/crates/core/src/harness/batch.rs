//! Seeded batch execution over horizons and seeds, with regret aggregation.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::comparator::{best_fixed_gain, best_fixed_policy, mstar_rollout, regret, reveal_all, Argmin};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Prepared};
use crate::harness::constants::{compute_theory_constants, theory_inputs, TheoryConstants};
use crate::learner::{run_episode, EpisodeSetup, JsonLinesSink, NullSink, TraceSink};
use crate::policy::AdmissibleSet;


/// Fraction of diverged episodes above which the batch fails.
pub const MAX_DIVERGED_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, Default)]
pub struct BatchOptions {
    /// Worker threads; `None` uses rayon's default.
    pub workers: Option<usize>,
    /// Directory for per-episode JSON-lines traces.
    pub trace_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Divergence {
    pub step: usize,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BestPolicyOutcome {
    pub rollout_cost: f64,
    pub surrogate_objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeOutcome {
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
    pub regret: Option<f64>,
    pub regret_after_burn_in: Option<f64>,
    pub checkpoints: Vec<(usize, f64)>,
    pub learner_cost: Option<f64>,
    pub comparator_cost: Option<f64>,
    pub best_gain: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_star_cost: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_fixed_m: Option<BestPolicyOutcome>,
    pub noise_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HorizonSummary {
    #[serde(rename = "T")]
    pub t: usize,
    pub seed_count: usize,
    pub diverged: usize,
    pub regret_q25: f64,
    pub regret_median: f64,
    pub regret_q75: f64,
    pub regret_q90: f64,
    pub bound_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<HorizonSummary>,
    /// Least-squares slope of `ln(median regret)` on `ln T`; `None` when fewer
    /// than four horizons have positive median regret.
    pub slope: Option<f64>,
    pub residuals: Vec<f64>,
    pub episodes: Vec<EpisodeOutcome>,
    pub diverged: usize,
    /// Set when too many episodes diverged.
    pub failure: Option<String>,
    pub constants: TheoryConstants,
    pub candidates: usize,
    pub dropped_candidates: usize,
}

/// Linear-interpolation quantile of sorted data; NaN when empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Least-squares fit of `ln y` on `ln x` over points with positive finite `y`.
/// Returns the slope and residuals, or `None` with fewer than four points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<(f64, Vec<f64>)> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 4 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Some((slope, pts.iter().map(|p| p.1 - (intercept + slope * p.0)).collect()))
}

fn run_one(prep: &Prepared<f64>, t: usize, seed: u64, trace_dir: Option<&PathBuf>) -> Result<EpisodeOutcome> {
    let h = prep.h(t);
    let noise = prep.episode_noise(seed);
    let costs = prep.episode_costs(t, seed)?;
    let setup = EpisodeSetup {
        sys: &prep.sys,
        cert: &prep.cert,
        rate: prep.rate,
        horizon: t,
        m0: prep.initial_policy(h),
        x0: prep.x0.clone(),
    };
    let mut file_sink;
    let sink: &mut dyn TraceSink<f64> = match trace_dir {
        Some(dir) => {
            let path = dir.join(format!("T{t}_seed{seed}.jsonl"));
            file_sink = JsonLinesSink::new(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?));
            &mut file_sink
        }
        None => &mut NullSink,
    };
    let record = match run_episode(&setup, &costs, &noise, sink) {
        Ok(r) => r,
        Err(Error::Diverged { step, norm }) => {
            return Ok(EpisodeOutcome {
                t,
                seed,
                h,
                divergence: Some(Divergence { step, norm }),
                regret: None,
                regret_after_burn_in: None,
                checkpoints: Vec::new(),
                learner_cost: None,
                comparator_cost: None,
                best_gain: None,
                m_star_cost: None,
                best_fixed_m: None,
                noise_hash: None,
            })
        }
        Err(e) => return Err(e),
    };
    let revealed = reveal_all(&costs, t);
    let best = best_fixed_gain(&prep.sys, &prep.candidates, &revealed, &record.noise)?;
    let burn_in = prep.cfg.comparator.burn_in.resolve(h)?;
    let curve = regret(&record, &best, burn_in)?;
    let best_gain = match &best.argmin {
        Argmin::Gain(rows) => rows.clone(),
        Argmin::Policy(_) => unreachable!("gain comparator returns a gain"),
    };
    let (m_star_cost, best_fixed_m) = if prep.cfg.comparator.best_fixed_m {
        let set = AdmissibleSet::new(prep.cert.kappa(), prep.cert.gamma(), prep.sys.kappa_b(), h)?;
        let k_star = prep.candidates[best
            .meta
            .candidate_costs
            .iter()
            .position(|&c| c == best.total_cost())
            .expect("best cost among candidates")]
        .clone();
        let mstar = mstar_rollout(&prep.sys, prep.cert.gain(), &k_star, &set, &revealed, &record.noise)?;
        let start = crate::policy::comparator_params(prep.cert.gain(), &k_star, &prep.sys, &set)?;
        let fit = best_fixed_policy(
            &prep.sys,
            prep.cert.gain(),
            &set,
            &revealed,
            &record.noise,
            &[start],
            prep.cfg.comparator.budget,
        )?;
        (
            Some(mstar.total_cost()),
            Some(BestPolicyOutcome {
                rollout_cost: fit.total_cost(),
                surrogate_objective: fit.meta.surrogate_objective.unwrap_or(f64::NAN),
                iterations: fit.meta.iterations,
            }),
        )
    } else {
        (None, None)
    };
    Ok(EpisodeOutcome {
        t,
        seed,
        h,
        divergence: None,
        regret: Some(curve.regret),
        regret_after_burn_in: Some(curve.regret_after_burn_in),
        checkpoints: curve.checkpoints,
        learner_cost: Some(record.total_cost()),
        comparator_cost: Some(best.total_cost()),
        best_gain: Some(best_gain),
        m_star_cost,
        best_fixed_m,
        noise_hash: Some(record.noise_hash),
    })
}

/// Runs every `(T, seed)` episode, its comparator and regret, then aggregates.
pub fn run_batch(cfg: &ExperimentConfig, opts: &BatchOptions) -> Result<ScalingReport> {
    let prep = cfg.prepare::<f64>()?;
    let constants = compute_theory_constants(&theory_inputs(cfg, cfg.delta)?, &cfg.horizons)?;
    if let Some(dir) = &opts.trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let jobs: Vec<(usize, u64)> = cfg
        .horizons
        .iter()
        .flat_map(|&t| cfg.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.workers {
        if n == 0 {
            return Err(Error::invalid("workers must be >= 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Internal(e.to_string()))?;
    let mut episodes: Vec<EpisodeOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|&(t, s)| run_one(&prep, t, s, opts.trace_dir.as_ref()))
            .collect::<Result<Vec<_>>>()
    })?;
    episodes.sort_by_key(|e| (e.t, e.seed));

    let mut horizons = cfg.horizons.clone();
    horizons.sort_unstable();
    horizons.dedup();
    let mut rows = Vec::with_capacity(horizons.len());
    for &t in &horizons {
        let mut regrets: Vec<f64> = episodes.iter().filter(|e| e.t == t).filter_map(|e| e.regret).collect();
        regrets.sort_by(f64::total_cmp);
        let diverged = episodes.iter().filter(|e| e.t == t && e.divergence.is_some()).count();
        let bound = constants
            .horizons
            .iter()
            .find(|h| h.t == t)
            .map(|h| h.bound)
            .unwrap_or(f64::NAN);
        rows.push(HorizonSummary {
            t,
            seed_count: regrets.len(),
            diverged,
            regret_q25: quantile(&regrets, 0.25),
            regret_median: quantile(&regrets, 0.5),
            regret_q75: quantile(&regrets, 0.75),
            regret_q90: quantile(&regrets, 0.9),
            bound_value: bound,
        });
    }
    let fit = loglog_slope(&rows.iter().map(|r| (r.t as f64, r.regret_median)).collect::<Vec<_>>());
    let diverged = episodes.iter().filter(|e| e.divergence.is_some()).count();
    let failure = (diverged as f64 > MAX_DIVERGED_FRACTION * episodes.len() as f64).then(|| {
        format!(
            "{diverged} of {} episodes diverged (limit {:.0}%)",
            episodes.len(),
            100.0 * MAX_DIVERGED_FRACTION
        )
    });
    Ok(ScalingReport {
        rows,
        slope: fit.as_ref().map(|f| f.0),
        residuals: fit.map(|f| f.1).unwrap_or_default(),
        episodes,
        diverged,
        failure,
        constants,
        candidates: prep.candidates.len(),
        dropped_candidates: prep.dropped_candidates,
    })
}
