//! The online loop: act, pay the revealed cost, observe, recover the noise,
//! and take a projected gradient step on the surrogate cost.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costs::{CostSchedule, StageCost};
use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::noise::NoiseProcess;
use crate::policy::{control_input_unchecked, horizon, AdmissibleSet, NoiseHistory, PolicyParams};
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::stability::{ClosedLoop, StabilityCertificate};
use crate::surrogate::{value_and_grad_f, window_len};
use crate::system::LinearSystem;

/// States with norm above this abort the episode.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    #[serde(rename = "constant_sqrtT")]
    ConstantSqrtT,
    #[serde(rename = "strongly_convex")]
    StronglyConvex,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LearningRate<T: Real> {
    /// `η = 1/(√T (ln T)³)`.
    ConstantSqrtT,
    /// `η_t = 3/(α̃(t+1))`.
    StronglyConvex { alpha_tilde: T },
}

impl<T: Real> LearningRate<T> {
    pub fn kind(&self) -> ScheduleKind {
        match self {
            LearningRate::ConstantSqrtT => ScheduleKind::ConstantSqrtT,
            LearningRate::StronglyConvex { .. } => ScheduleKind::StronglyConvex,
        }
    }

    pub fn eta(&self, t: usize, horizon: usize) -> Result<T> {
        if horizon < 3 {
            return Err(Error::invalid(format!("horizon T must be >= 3, got {horizon}")));
        }
        match *self {
            LearningRate::ConstantSqrtT => {
                let tt: T = from_usize(horizon);
                let l = tt.ln();
                Ok(T::one() / (tt.sqrt() * l * l * l))
            }
            LearningRate::StronglyConvex { alpha_tilde } => {
                if !(alpha_tilde > T::zero()) {
                    return Err(Error::invalid(format!("alpha_tilde must be > 0, got {alpha_tilde}")));
                }
                Ok(lit::<T>(3.0) / (alpha_tilde * from_usize::<T>(t + 1)))
            }
        }
    }
}

/// `α̃ = ασ̲²γ²/(36κ¹⁰)`.
pub fn alpha_tilde<T: Real>(alpha: T, sigma_lower: T, gamma: T, kappa: T) -> T {
    let k2 = kappa * kappa;
    let k10 = k2 * k2 * k2 * k2 * k2;
    alpha * sigma_lower * sigma_lower * gamma * gamma / (lit::<T>(36.0) * k10)
}

/// One step of an episode trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Noise recovered from the transition.
    pub w: Vec<f64>,
    pub cost: f64,
    pub eta: f64,
    pub grad_frob: f64,
    #[serde(rename = "M_frob")]
    pub m_frob: f64,
}

/// Receives trace events as the episode runs.
pub trait TraceSink<T: Real> {
    /// `u_t` is fixed; called before `c_t` is revealed.
    fn committed(&mut self, _t: usize, _u: &DVector<T>) {}
    fn step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
}

/// Discards every event.
pub struct NullSink;
impl<T: Real> TraceSink<T> for NullSink {}

/// `u_t` together with the state it was computed from. Only
/// [`OnlineController::act`] creates one, and [`OnlineController::learn`]
/// consumes it.
#[derive(Debug)]
pub struct Commitment<T: Real> {
    t: usize,
    x: DVector<T>,
    u: DVector<T>,
}

impl<T: Real> Commitment<T> {
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn x(&self) -> &DVector<T> {
        &self.x
    }
    pub fn u(&self) -> &DVector<T> {
        &self.u
    }
}

/// What `learn` reports for one step.
#[derive(Clone, Debug)]
pub struct LearnOutcome<T: Real> {
    pub w: DVector<T>,
    pub eta: T,
    pub grad_frob: T,
    /// `‖M_{t+1}‖_F`.
    pub m_frob: T,
}

/// Disturbance-action controller updated by projected online gradient descent.
#[derive(Clone, Debug)]
pub struct OnlineController<T: Real> {
    sys: LinearSystem<T>,
    cl: ClosedLoop<T>,
    set: AdmissibleSet<T>,
    rate: LearningRate<T>,
    horizon: usize,
    m: PolicyParams<T>,
    hist: NoiseHistory<T>,
    x: DVector<T>,
    t: usize,
}

impl<T: Real> OnlineController<T> {
    pub fn new(
        sys: &LinearSystem<T>,
        cert: &StabilityCertificate<T>,
        rate: LearningRate<T>,
        horizon_t: usize,
        m0: Option<PolicyParams<T>>,
        x0: Option<DVector<T>>,
    ) -> Result<Self> {
        let k = cert.gain();
        if k.shape() != (sys.n_u(), sys.n_x()) {
            return Err(Error::invalid("certificate gain does not match the system"));
        }
        if rate.kind() == ScheduleKind::StronglyConvex && !cert.is_diagonal() {
            return Err(Error::invalid(
                "the strongly convex schedule needs a diagonal strong-stability certificate",
            ));
        }
        rate.eta(0, horizon_t)?;
        let h = horizon(horizon_t, to_f64(cert.gamma()))?;
        let set = AdmissibleSet::new(cert.kappa(), cert.gamma(), sys.kappa_b(), h)?;
        let m = match m0 {
            Some(m) => {
                if m.h() != h || m.n_u() != sys.n_u() || m.n_x() != sys.n_x() {
                    return Err(Error::invalid(format!(
                        "initial policy must have {h} blocks of {}x{}",
                        sys.n_u(),
                        sys.n_x()
                    )));
                }
                if !set.contains(&m) {
                    return Err(Error::invalid("initial policy lies outside the admissible set"));
                }
                m
            }
            None => PolicyParams::zeros(h, sys.n_u(), sys.n_x()),
        };
        let x = match x0 {
            Some(x) if x.len() == sys.n_x() => x,
            Some(_) => return Err(Error::invalid("initial state has the wrong dimension")),
            None => DVector::zeros(sys.n_x()),
        };
        Ok(Self {
            cl: ClosedLoop::new(sys, k, 0)?,
            sys: sys.clone(),
            set,
            rate,
            horizon: horizon_t,
            m,
            hist: NoiseHistory::new(window_len(h), sys.n_x()),
            x,
            t: 0,
        })
    }

    pub fn h(&self) -> usize {
        self.set.h
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn params(&self) -> &PolicyParams<T> {
        &self.m
    }
    pub fn admissible_set(&self) -> &AdmissibleSet<T> {
        &self.set
    }
    pub fn state(&self) -> &DVector<T> {
        &self.x
    }

    /// `u_t = -Kx_t + Σ M_t^[i-1] w_{t-i}`.
    pub fn act(&mut self) -> Commitment<T> {
        let u = control_input_unchecked(self.cl.gain(), &self.m, &self.x, &self.hist);
        Commitment {
            t: self.t,
            x: self.x.clone(),
            u,
        }
    }

    /// Observes `x_{t+1}`, recovers `w_t` and updates `M_{t+1} = Π(M_t - η_t∇f_t(M_t))`.
    pub fn learn<C: StageCost<T> + ?Sized>(
        &mut self,
        commitment: Commitment<T>,
        cost: &C,
        x_next: DVector<T>,
    ) -> Result<LearnOutcome<T>> {
        if commitment.t != self.t {
            return Err(Error::invalid(format!(
                "commitment for step {} presented at step {}",
                commitment.t, self.t
            )));
        }
        let w = self.sys.recover_noise(&x_next, &commitment.x, &commitment.u)?;
        let eta = self.rate.eta(self.t, self.horizon)?;
        let (_, grad, _) = value_and_grad_f(cost, &self.cl, &self.m, &self.hist)?;
        let stepped = self.m.add_scaled(-eta, &grad.blocks);
        self.m = self.set.project(&stepped);
        self.hist.push(w.clone());
        self.x = x_next;
        self.t += 1;
        Ok(LearnOutcome {
            w,
            eta,
            grad_frob: grad.frob_norm,
            m_frob: self.m.frob_norm(),
        })
    }
}

/// Everything an episode produced.
#[derive(Clone, Debug)]
pub struct EpisodeRecord<T: Real> {
    pub horizon: usize,
    pub h: usize,
    pub steps: Vec<StepRecord>,
    /// Injected noise `w_0 .. w_{T-1}`.
    pub noise: Vec<DVector<T>>,
    /// `Σ_{s ≤ t} c_s(x_s, u_s)` for each `t`.
    pub cumulative_cost: Vec<f64>,
    pub final_params: PolicyParams<T>,
    pub noise_hash: String,
}

impl<T: Real> EpisodeRecord<T> {
    pub fn total_cost(&self) -> f64 {
        self.cumulative_cost.last().copied().unwrap_or(0.0)
    }
}

/// SHA-256 over the little-endian `f64` components of a noise sequence.
pub fn noise_hash<T: Real>(noise: &[DVector<T>]) -> String {
    let mut hasher = Sha256::new();
    for w in noise {
        for v in w.iter() {
            hasher.update(to_f64(*v).to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// Static inputs of one episode.
#[derive(Clone, Debug)]
pub struct EpisodeSetup<'a, T: Real> {
    pub sys: &'a LinearSystem<T>,
    pub cert: &'a StabilityCertificate<T>,
    pub rate: LearningRate<T>,
    pub horizon: usize,
    pub m0: Option<PolicyParams<T>>,
    pub x0: Option<DVector<T>>,
}

fn to_vec<T: Real>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| to_f64(*x)).collect()
}

/// Runs the online controller for `T` steps against `costs` and `noise`.
pub fn run_episode<T: Real, S: CostSchedule<T>>(
    setup: &EpisodeSetup<'_, T>,
    costs: &S,
    noise: &NoiseProcess,
    sink: &mut dyn TraceSink<T>,
) -> Result<EpisodeRecord<T>> {
    let sys = setup.sys;
    if noise.dim() != sys.n_x() {
        return Err(Error::invalid("noise dimension differs from n_x"));
    }
    let mut ctl = OnlineController::new(sys, setup.cert, setup.rate, setup.horizon, setup.m0.clone(), setup.x0.clone())?;
    let mut steps = Vec::with_capacity(setup.horizon);
    let mut injected = Vec::with_capacity(setup.horizon);
    let mut cumulative = Vec::with_capacity(setup.horizon);
    let mut total = 0.0;
    for t in 0..setup.horizon {
        let commitment = ctl.act();
        sink.committed(t, commitment.u());
        let cost = costs.reveal(t);
        let paid = cost.value(commitment.x(), commitment.u());
        let w: DVector<T> = noise.sample(t as i64);
        let x_next = sys.transition(commitment.x(), commitment.u(), &w);
        let norm = to_f64(x_next.norm());
        if !all_finite(&x_next) || norm > DIVERGENCE_THRESHOLD {
            return Err(Error::Diverged { step: t, norm });
        }
        let (x, u) = (to_vec(commitment.x()), to_vec(commitment.u()));
        let out = ctl.learn(commitment, &cost, x_next)?;
        total += to_f64(paid);
        cumulative.push(total);
        let record = StepRecord {
            t,
            x,
            u,
            w: to_vec(&out.w),
            cost: to_f64(paid),
            eta: to_f64(out.eta),
            grad_frob: to_f64(out.grad_frob),
            m_frob: to_f64(out.m_frob),
        };
        sink.step(&record)?;
        steps.push(record);
        injected.push(w);
    }
    Ok(EpisodeRecord {
        horizon: setup.horizon,
        h: ctl.h(),
        noise_hash: noise_hash(&injected),
        steps,
        noise: injected,
        cumulative_cost: cumulative,
        final_params: ctl.params().clone(),
    })
}

/// Empirical right-hand side of the OCO-with-memory regret bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OgdMemoryTerms {
    /// `L_c Σ_t η Σ_{i=1}^{min(H+1,t)} Σ_{k=1}^{i} ‖∇f_{t-k}‖_F`.
    pub memory: f64,
    /// `D²/(2η)`.
    pub diameter: f64,
    /// `(η/2) Σ_t ‖∇f_t‖²_F`.
    pub gradient: f64,
}

impl OgdMemoryTerms {
    pub fn total(&self) -> f64 {
        self.memory + self.diameter + self.gradient
    }
}

/// Evaluates the three terms on a trace. Each step uses its own recorded
/// `η_t`; the diameter term uses the last one.
pub fn ogd_memory_regret_terms(trace: &[StepRecord], h: usize, l_c: f64, diameter: f64) -> OgdMemoryTerms {
    let norms: Vec<f64> = trace.iter().map(|s| s.grad_frob).collect();
    let mut prefix = vec![0.0; norms.len() + 1];
    for (i, g) in norms.iter().enumerate() {
        prefix[i + 1] = prefix[i] + g;
    }
    let mut memory = 0.0;
    let mut gradient = 0.0;
    for (t, step) in trace.iter().enumerate() {
        let mut inner = 0.0;
        for i in 1..=(h + 1).min(t) {
            inner += prefix[t] - prefix[t - i];
        }
        memory += step.eta * inner;
        gradient += 0.5 * step.eta * step.grad_frob * step.grad_frob;
    }
    let eta_last = trace.last().map(|s| s.eta).unwrap_or(f64::NAN);
    OgdMemoryTerms {
        memory: l_c * memory,
        diameter: if trace.is_empty() { 0.0 } else { diameter * diameter / (2.0 * eta_last) },
        gradient,
    }
}

/// Trace sink writing JSON lines.
pub struct JsonLinesSink<W: std::io::Write> {
    out: W,
}

impl<W: std::io::Write> JsonLinesSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }
    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<T: Real, W: std::io::Write> TraceSink<T> for JsonLinesSink<W> {
    fn step(&mut self, record: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out
            .write_all(b"\n")
            .map_err(|e| Error::io("<trace>", e))
    }
}
