//! Regret-bound constants and bound curves for a configuration.
//!
//! The constants are extremely conservative (`C_δ` grows like `κ¹⁸/γ⁸`); they
//! are reported for the shape of the bound, not its tightness.

use serde::Serialize;

use crate::costs::{CostSchedule, QuadraticSchedule, StageCost};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::learner::alpha_tilde;
use crate::noise::NoiseProcess;
use crate::policy::horizon;
use crate::system::LinearSystem;

/// Problem parameters the constants depend on.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryInputs {
    pub kappa: f64,
    pub gamma: f64,
    pub kappa_b: f64,
    pub n_x: usize,
    pub n_u: usize,
    pub g_c: f64,
    /// Moment parameter with `E‖w‖ ≤ σ_w` and `E‖w‖⁴ ≤ σ_w⁴`.
    pub sigma_w: f64,
    /// Sub-Gaussian parameter, when the noise has one.
    pub sigma_w_sub_gaussian: Option<f64>,
    pub sigma_lower: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HorizonConstants {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "H")]
    pub h: usize,
    /// Right-hand side of the √T-regret bound.
    pub bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strongly_convex: Option<StronglyConvexConstants>,
}

/// Horizon-dependent quantities of the logarithmic-regret bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StronglyConvexConstants {
    #[serde(rename = "H_T")]
    pub h_t: usize,
    pub l_bar: f64,
    pub beta_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub inputs: TheoryInputs,
    #[serde(rename = "D")]
    pub d: f64,
    pub n: usize,
    /// `max(σ_w, σ_w⁴)`.
    pub sigma_w_14: f64,
    #[serde(rename = "C_delta")]
    pub c_delta: f64,
    pub alpha_tilde: Option<f64>,
    /// `C_δ` of the logarithmic-regret bound, built from the sub-Gaussian `σ_w`.
    #[serde(rename = "C_delta_strongly_convex", skip_serializing_if = "Option::is_none")]
    pub c_delta_sc: Option<f64>,
    pub horizons: Vec<HorizonConstants>,
}

/// `D = 4κ_Bκ³√n/γ`.
pub fn diameter(kappa: f64, gamma: f64, kappa_b: f64, n: usize) -> f64 {
    4.0 * kappa_b * kappa.powi(3) * (n as f64).sqrt() / gamma
}

/// `C_δ = 65724 σ_w^{[1,4]} n² G_c² κ_B⁶ κ¹⁸ / (δ γ⁸ (1-γ)⁴)`.
pub fn c_delta(inp: &TheoryInputs) -> f64 {
    let n = inp.n_x.max(inp.n_u) as f64;
    let s14 = inp.sigma_w.max(inp.sigma_w.powi(4));
    65724.0 * s14 * n * n * inp.g_c * inp.g_c * inp.kappa_b.powi(6) * inp.kappa.powi(18)
        / (inp.delta * inp.gamma.powi(8) * (1.0 - inp.gamma).powi(4))
}

/// `(2√3 G_c C_δ³/√γ + D²/2)√T(ln T)³ + (C_δ/2)√T ln T + 6 G_c C_δ² (ln T)²`.
pub fn sqrt_t_bound(g_c: f64, c: f64, d: f64, gamma: f64, t: usize) -> f64 {
    let (tt, l) = (t as f64, (t as f64).ln());
    (2.0 * 3f64.sqrt() * g_c * c.powi(3) / gamma.sqrt() + d * d / 2.0) * tt.sqrt() * l.powi(3)
        + c / 2.0 * tt.sqrt() * l
        + 6.0 * g_c * c * c * l * l
}

/// `(2/δ)(201 σ_w κ_B² κ⁸/(γ²(1-γ)) + 2σ_w √(2 n_x (1 + ln n_x)))`.
pub fn c_delta_strongly_convex(sigma_w: f64, inp: &TheoryInputs) -> f64 {
    let nx = inp.n_x as f64;
    2.0 / inp.delta
        * (201.0 * sigma_w * inp.kappa_b.powi(2) * inp.kappa.powi(8) / (inp.gamma.powi(2) * (1.0 - inp.gamma))
            + 2.0 * sigma_w * (2.0 * nx * (1.0 + nx.ln())).sqrt())
}

pub fn compute_theory_constants(inp: &TheoryInputs, horizons: &[usize]) -> Result<TheoryConstants> {
    if !(inp.delta > 0.0 && inp.delta <= 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1], got {}", inp.delta)));
    }
    if !(inp.gamma > 0.0 && inp.gamma < 1.0) || inp.kappa < 1.0 || inp.kappa_b < 1.0 {
        return Err(Error::invalid("need kappa >= 1, kappa_B >= 1 and gamma in (0, 1)"));
    }
    let n = inp.n_x.max(inp.n_u);
    let d = diameter(inp.kappa, inp.gamma, inp.kappa_b, n);
    let c = c_delta(inp);
    let alpha_t = inp.alpha.map(|a| alpha_tilde(a, inp.sigma_lower, inp.gamma, inp.kappa));
    let c_sc = inp.sigma_w_sub_gaussian.map(|s| c_delta_strongly_convex(s, inp));
    let mut rows = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let h = horizon(t, inp.gamma)?;
        let l = (t as f64).ln();
        let strongly_convex = match (c_sc, inp.beta) {
            (Some(c2), Some(beta)) => Some(StronglyConvexConstants {
                h_t: h + 2,
                l_bar: 4.0 * inp.g_c * c2 * c2 * l.powf(2.5) / inp.gamma.sqrt(),
                beta_bar: 6.0 * inp.kappa_b * inp.kappa.powi(3) * beta * (n * n) as f64 * c2 * l.powf(1.5)
                    / (inp.gamma.powi(2) * (1.0 - inp.gamma)),
            }),
            _ => None,
        };
        rows.push(HorizonConstants {
            t,
            h,
            bound: sqrt_t_bound(inp.g_c, c, d, inp.gamma, t),
            strongly_convex,
        });
    }
    Ok(TheoryConstants {
        inputs: inp.clone(),
        d,
        n,
        sigma_w_14: inp.sigma_w.max(inp.sigma_w.powi(4)),
        c_delta: c,
        alpha_tilde: alpha_t,
        c_delta_sc: c_sc,
        horizons: rows,
    })
}

/// Inputs for a configuration at confidence `delta`, using closed-form noise moments.
pub fn theory_inputs(cfg: &ExperimentConfig, delta: f64) -> Result<TheoryInputs> {
    let sys = LinearSystem::<f64>::from_spec(&cfg.system)?;
    let noise = NoiseProcess::from_spec(&cfg.noise, sys.n_x())?;
    let costs: QuadraticSchedule<f64> = cfg.cost.build(sys.n_x(), sys.n_u(), 3, 0)?;
    let (alpha, beta) = match &costs {
        QuadraticSchedule::Fixed(c) => (c.strong_convexity(), c.smoothness()),
        QuadraticSchedule::Random(_) => (None, None),
    };
    Ok(TheoryInputs {
        kappa: cfg.gain.kappa,
        gamma: cfg.gain.gamma,
        kappa_b: sys.kappa_b(),
        n_x: sys.n_x(),
        n_u: sys.n_u(),
        g_c: costs.gradient_bound(),
        sigma_w: noise.sigma_w(),
        sigma_w_sub_gaussian: noise.sub_gaussian_sigma(),
        sigma_lower: noise.sigma_lower(),
        alpha,
        beta,
        delta,
    })
}
