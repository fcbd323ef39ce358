//! Online execution of the quasi-optimal stopping rule.
//!
//! The process is observed only at its jumps. After jump `n` the observed
//! `(Z_n, S_n)` is projected onto grid `n` and the stage `n + 1` decision of
//! that grid point is read back: either "intervene `R` hours from now unless
//! a jump comes first" or "wait for the next jump". A jump resets the
//! computation; at jump `N` intervention is forced.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdmp::{simulate, Trajectory};
use crate::quantizer::{ChainEmbedding, QuantizedChain};
use crate::reward::Reward;
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::solver::{Decision, SolveResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionPlan<F> {
    pub issued_at_jump: usize,
    /// Grid point of stage `issued_at_jump` the observation projected to.
    pub basis: usize,
    pub decision: Decision<F>,
}

impl<F: Copy> InterventionPlan<F> {
    /// `R`, the delay after the jump at which to intervene, if any.
    pub fn planned_delay(&self) -> Option<F> {
        self.decision.best_time()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Planned,
    ForcedAtHorizon,
    /// The process entered an absorbing state (for the corrosion model: the
    /// failure threshold was reached).
    Boundary,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Planned => "planned",
            StopReason::ForcedAtHorizon => "forced-at-N",
            StopReason::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome<F, S> {
    pub stop_time: F,
    pub reason: StopReason,
    pub stop_state: S,
    pub reward: F,
    /// Jumps observed before stopping.
    pub jumps_at_stop: usize,
    /// Time of the last simulated jump (`T_N` unless absorbed earlier).
    pub last_jump_time: F,
}

/// Refuses a solve result that was not computed on `chain`, or artifacts
/// built for another horizon.
pub fn check_artifacts<F: Scalar>(chain: &QuantizedChain<F>, solve: &SolveResult<F>, horizon: usize) -> Result<()> {
    if chain.horizon() != horizon || solve.horizon != horizon {
        return Err(Error::Config(format!(
            "horizon mismatch: requested {horizon}, grids {}, solve {}",
            chain.horizon(),
            solve.horizon
        )));
    }
    if solve.k != chain.k() {
        return Err(Error::Config(format!(
            "K mismatch: grids {}, solve {}",
            chain.k(),
            solve.k
        )));
    }
    if solve.fingerprint != chain.meta.fingerprint {
        return Err(Error::Config("solve result was computed on different grids".into()));
    }
    Ok(())
}

/// Plan issued right after jump `n` from the observed post-jump state and
/// inter-jump time.
pub fn plan<F, M>(
    model: &M,
    chain: &QuantizedChain<F>,
    solve: &SolveResult<F>,
    n: usize,
    state: &M::State,
    inter_jump: F,
) -> Result<InterventionPlan<F>>
where
    F: Scalar,
    M: ChainEmbedding<F>,
{
    if n >= solve.horizon {
        return Err(Error::Range(format!(
            "no plan after jump {n} with horizon {}",
            solve.horizon
        )));
    }
    let mut point = vec![F::zero(); model.dims()];
    model.embed(state, inter_jump, &mut point);
    let basis = chain.project(n, &point);
    let record = solve.stage(n + 1)?.records[basis];
    Ok(InterventionPlan {
        issued_at_jump: n,
        basis,
        decision: record.decision,
    })
}

/// Replays the stopping rule along an already simulated trajectory.
///
/// The decision taken after jump `n` reads only `(n, Z_n, S_n)`, and
/// whether to stop before jump `n + 1` depends only on `S_{n+1}`, so the
/// result is a genuine stopping time of the trajectory.
pub fn apply_policy<F, M, G>(
    model: &M,
    chain: &QuantizedChain<F>,
    solve: &SolveResult<F>,
    reward: &G,
    trajectory: &Trajectory<F, M::State>,
) -> Result<PolicyOutcome<F, M::State>>
where
    F: Scalar,
    M: ChainEmbedding<F>,
    G: Reward<F, M::State>,
{
    let horizon = solve.horizon;
    let last_jump_time = trajectory.last_jump_time();
    let finish = |stop_time: F, reason: StopReason, state: M::State, jumps: usize| PolicyOutcome {
        stop_time,
        reason,
        reward: reward.reward(&state),
        stop_state: state,
        jumps_at_stop: jumps,
        last_jump_time,
    };
    let mut state = trajectory.initial.clone();
    let mut inter_jump = F::zero();
    let mut time = F::zero();
    for n in 0..horizon {
        if model.is_absorbing(&state) {
            return Ok(finish(time, StopReason::Boundary, state, n));
        }
        let p = plan(model, chain, solve, n, &state, inter_jump)?;
        let next = trajectory.jumps.get(n).ok_or_else(|| {
            Error::Range(format!(
                "trajectory ends after {n} jumps before absorption or the horizon"
            ))
        })?;
        if let Some(r) = p.planned_delay() {
            if r <= next.inter_jump {
                return Ok(finish(time + r, StopReason::Planned, model.flow(&state, r), n));
            }
        }
        state = next.state.clone();
        inter_jump = next.inter_jump;
        time = next.time;
    }
    let reason = if model.is_absorbing(&state) {
        StopReason::Boundary
    } else {
        StopReason::ForcedAtHorizon
    };
    Ok(finish(time, reason, state, horizon))
}

/// Simulates the process from `z0` and stops it with the quasi-optimal rule.
#[allow(clippy::too_many_arguments)]
pub fn run_policy<F, M, G, R>(
    model: &M,
    z0: M::State,
    horizon: usize,
    chain: &QuantizedChain<F>,
    solve: &SolveResult<F>,
    reward: &G,
    rng: &mut R,
) -> Result<PolicyOutcome<F, M::State>>
where
    F: Scalar,
    M: ChainEmbedding<F>,
    G: Reward<F, M::State>,
    R: Rng + ?Sized,
{
    check_artifacts(chain, solve, horizon)?;
    let traj = simulate(model, z0, horizon, rng)?;
    apply_policy(model, chain, solve, reward, &traj)
}

/// Options for [`summarize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOptions {
    /// Histogram bin width, hours.
    pub bin_width: f64,
    pub quantile_levels: Vec<f64>,
    /// Dates at which `P(τ <= t)` is reported. Empty means every bin edge up
    /// to the largest stopping time.
    pub exceedance_dates: Vec<f64>,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            bin_width: 8760.0,
            quantile_levels: vec![0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99],
            exceedance_dates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// `counts[k]` counts stopping times in `[k w, (k + 1) w)`.
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub runs: usize,
    pub mean_reward: f64,
    pub std_error: f64,
    pub mean_stop_time: f64,
    pub histogram: Histogram,
    /// `(level, stopping-time quantile)`.
    pub quantiles: Vec<(f64, f64)>,
    /// `(date, P(τ <= date))`.
    pub exceedance: Vec<(f64, f64)>,
}

/// Monte Carlo statistics of stopping times and rewards.
pub fn summarize(stop_times: &[f64], rewards: &[f64], opts: &SummaryOptions) -> Result<PolicySummary> {
    let n = stop_times.len();
    if n == 0 || rewards.len() != n {
        return Err(Error::Input(
            "need one reward per stopping time and at least one run".into(),
        ));
    }
    if !(opts.bin_width > 0.0) {
        return Err(Error::Input("histogram bin width must be positive".into()));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let mut sorted = stop_times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted[n - 1];
    let bins = (max / opts.bin_width).floor() as usize + 1;
    let mut counts = vec![0u64; bins];
    for t in stop_times {
        counts[((t / opts.bin_width).floor() as usize).min(bins - 1)] += 1;
    }
    let quantiles = opts
        .quantile_levels
        .iter()
        .map(|&p| {
            let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
            (p, sorted[rank - 1])
        })
        .collect();
    let dates: Vec<f64> = if opts.exceedance_dates.is_empty() {
        (0..=bins).map(|k| k as f64 * opts.bin_width).collect()
    } else {
        opts.exceedance_dates.clone()
    };
    let exceedance = dates
        .iter()
        .map(|&d| {
            let below = sorted.partition_point(|t| *t <= d);
            (d, below as f64 / n as f64)
        })
        .collect();
    Ok(PolicySummary {
        runs: n,
        mean_reward: mean,
        std_error: (var / n as f64).sqrt(),
        mean_stop_time: stop_times.iter().sum::<f64>() / n as f64,
        histogram: Histogram {
            bin_width: opts.bin_width,
            counts,
        },
        quantiles,
        exceedance,
    })
}

pub struct PolicyEvaluation<F, S> {
    pub outcomes: Vec<PolicyOutcome<F, S>>,
    pub summary: PolicySummary,
}

/// Runs the policy `runs` times; run `i` uses substream `i` of `seed` both to
/// draw its initial state and to simulate, so results do not depend on
/// thread scheduling.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy<F, M, G, I>(
    model: &M,
    initial: I,
    horizon: usize,
    chain: &QuantizedChain<F>,
    solve: &SolveResult<F>,
    reward: &G,
    runs: usize,
    seed: u64,
    opts: &SummaryOptions,
) -> Result<PolicyEvaluation<F, M::State>>
where
    F: Scalar,
    M: ChainEmbedding<F>,
    G: Reward<F, M::State>,
    I: Fn(&mut ChaCha8Rng) -> M::State + Sync,
{
    if runs == 0 {
        return Err(Error::Input("need at least one run".into()));
    }
    check_artifacts(chain, solve, horizon)?;
    let outcomes: Vec<PolicyOutcome<F, M::State>> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            let z0 = initial(&mut rng);
            let traj = simulate(model, z0, horizon, &mut rng)?;
            apply_policy(model, chain, solve, reward, &traj)
        })
        .collect::<Result<_>>()?;
    let times: Vec<f64> = outcomes.iter().map(|o| o.stop_time.as_f64()).collect();
    let rewards: Vec<f64> = outcomes.iter().map(|o| o.reward.as_f64()).collect();
    let summary = summarize(&times, &rewards, opts)?;
    Ok(PolicyEvaluation { outcomes, summary })
}
