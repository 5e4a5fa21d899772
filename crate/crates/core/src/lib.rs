//! Online control of known linear systems driven by unbounded stochastic noise.
//!
//! The controller plays a disturbance-action policy `u = -K x + Σ M^[i] w_{t-1-i}`
//! on top of a strongly stable gain and updates the memory matrices by
//! projected online gradient descent on a truncated surrogate cost. Two step-size
//! schedules are provided: a constant `1/(√T log³T)` rate for convex costs and a
//! `3/(α̃ (t+1))` rate for strongly convex costs.
//!
//! All numerics are generic over [`Real`]; the aliases below fix `f64`.

pub mod comparator;
pub mod costs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod noise;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod stability;
pub mod surrogate;
pub mod system;

pub use comparator::{ComparatorResult, RegretCurve};
pub use costs::{CostSchedule, QuadraticCost, StageCost};
pub use error::{Error, Result};
pub use harness::{run_batch, BatchOptions, ExperimentConfig, ScalingReport, TheoryConstants};
pub use learner::{run_episode, EpisodeRecord, EpisodeSetup, LearningRate, OnlineController, ScheduleKind};
pub use noise::{NoiseFamily, NoiseProcess};
pub use policy::{AdmissibleSet, NoiseHistory, PolicyParams};
pub use scalar::Real;
pub use stability::{certify, ClosedLoop, StabilityCertificate};
pub use system::{LinearSystem, SystemState};

pub type System = LinearSystem<f64>;
pub type Certificate = StabilityCertificate<f64>;
pub type Policy = PolicyParams<f64>;
pub type Admissible = AdmissibleSet<f64>;
pub type Controller = OnlineController<f64>;
pub type Episode = EpisodeRecord<f64>;
pub type Quadratic = QuadraticCost<f64>;
pub type Rate = LearningRate<f64>;
