//! Piecewise deterministic Markov processes, quantization of their
//! post-jump chain and quantized optimal stopping.
//!
//! The numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`.

// `!(x > 0)` is the NaN-rejecting form used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corrosion;
pub mod error;
pub mod pdmp;
pub mod policy;
pub mod quantizer;
pub mod reward;
pub mod rng;
pub mod scalar;
pub mod solver;

pub use corrosion::{
    thickness_increment, CorrosionModel, CorrosionParams, CorrosionState, EnvironmentParams, Mode, UnitInterpretation,
};
pub use error::{Error, Result};
pub use pdmp::{simulate, simulate_batch, state_at, HybridState, JumpCause, JumpRecord, PdmpModel, Trajectory};
pub use policy::{
    apply_policy, evaluate_policy, plan, run_policy, summarize, InterventionPlan, PolicyOutcome, PolicySummary,
    StopReason, SummaryOptions,
};
pub use quantizer::{
    estimate_scales, nearest, stage_samples, train, ChainEmbedding, ChainSource, Grid, QuantizedChain, SimulatedChain,
    StageSamples, TrainOptions, TransitionMatrix, WeightedNorm,
};
pub use reward::{Reward, RewardFunction};
pub use rng::{derive_seed, substream, ChaCha8Rng};
pub use scalar::Scalar;
pub use solver::{backward_solve, solve, Decision, SolveResult, TimeGrid};

pub type Corrosion = CorrosionModel<f64>;
pub type CorrosionStateF64 = CorrosionState<f64>;
pub type Chain = QuantizedChain<f64>;
pub type Solution = SolveResult<f64>;
pub type RewardFn = RewardFunction<f64>;
pub type Outcome = PolicyOutcome<f64, CorrosionState<f64>>;
