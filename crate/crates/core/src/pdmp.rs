//! Piecewise-deterministic Markov processes.
//!
//! A model is described by its local characteristics: a deterministic flow
//! between jumps, a jump intensity evaluated along the flow, a post-jump
//! kernel, and the time the flow needs to leave the open domain of its
//! mode. The simulator below builds trajectories jump by jump and exposes
//! the embedded chain of post-jump states and inter-jump times, which
//! carries all the randomness of the process.

use std::fmt::Debug;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scalar::Scalar;

/// Mode label plus Euclidean coordinates.
///
/// Models are free to use richer state types internally; this is the
/// common exchange form used for serialization and debugging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridState<F> {
    pub mode: u32,
    pub position: Vec<F>,
}

/// Local characteristics of a PDMP.
///
/// Implementations must be immutable after construction; simulations share
/// them across threads.
pub trait PdmpModel<F: Scalar>: Send + Sync {
    type State: Clone + Debug + PartialEq + Send + Sync;

    /// Deterministic motion for a duration `t >= 0`. Must satisfy
    /// `flow(flow(z, s), t) == flow(z, s + t)` up to rounding.
    fn flow(&self, z: &Self::State, t: F) -> Self::State;

    /// Jump intensity at `z`.
    fn intensity(&self, z: &Self::State) -> F;

    /// Whether the intensity is constant along every flow line. Enables the
    /// exact `Λ(z, t) = λ(z) t` fast path.
    fn intensity_constant_along_flow(&self) -> bool {
        false
    }

    /// Time for the flow started at `z` to hit the boundary of its domain;
    /// `F::infinity()` when it never does.
    fn boundary_time(&self, z: &Self::State) -> F;

    /// Draws the post-jump state from the pre-jump flow endpoint.
    fn jump<R: Rng + ?Sized>(&self, pre_jump: &Self::State, rng: &mut R) -> Self::State;

    /// Absorbing states never jump again (`λ = 0` and `t* = ∞`).
    fn is_absorbing(&self, z: &Self::State) -> bool {
        self.intensity(z) == F::zero() && self.boundary_time(z).is_infinite()
    }

    /// All coordinates finite.
    fn is_finite(&self, z: &Self::State) -> bool;

    fn to_hybrid(&self, z: &Self::State) -> HybridState<F>;
}

/// Why a jump happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JumpCause {
    Random,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRecord<F, S> {
    /// Jump number, starting at 1.
    pub index: usize,
    /// Absolute jump time `T_n`.
    pub time: F,
    /// Post-jump state `Z_n`.
    pub state: S,
    /// Inter-jump time `S_n = T_n - T_{n-1}`.
    pub inter_jump: F,
    pub cause: JumpCause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F, S> {
    pub initial: S,
    pub jumps: Vec<JumpRecord<F, S>>,
    pub horizon: usize,
    /// Set when the jump list stopped early in an absorbing state.
    pub absorbed: bool,
}

impl<F: Scalar, S: Clone> Trajectory<F, S> {
    /// Time of the last recorded jump (0 when there is none).
    pub fn last_jump_time(&self) -> F {
        self.jumps.last().map_or(F::zero(), |j| j.time)
    }

    /// Post-jump state `Z_n` (`Z_0` is the initial state).
    pub fn post_jump_state(&self, n: usize) -> Option<&S> {
        if n == 0 {
            Some(&self.initial)
        } else {
            self.jumps.get(n - 1).map(|j| &j.state)
        }
    }

    /// Jump time `T_n` with `T_0 = 0`.
    pub fn jump_time(&self, n: usize) -> Option<F> {
        if n == 0 {
            Some(F::zero())
        } else {
            self.jumps.get(n - 1).map(|j| j.time)
        }
    }

    /// The embedded chain `[(Z_0, 0), (Z_1, S_1), ...]`.
    pub fn embedded_chain(&self) -> Vec<(S, F)> {
        std::iter::once((self.initial.clone(), F::zero()))
            .chain(self.jumps.iter().map(|j| (j.state.clone(), j.inter_jump)))
            .collect()
    }
}

/// JSON form of a trajectory: modes as integers, positions as arrays,
/// times as doubles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryJson {
    pub horizon: usize,
    pub absorbed: bool,
    pub initial: HybridState<f64>,
    pub jumps: Vec<JumpJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpJson {
    pub index: usize,
    pub time: f64,
    pub inter_jump: f64,
    pub cause: JumpCause,
    pub state: HybridState<f64>,
}

fn hybrid_to_f64<F: Scalar>(h: HybridState<F>) -> HybridState<f64> {
    HybridState {
        mode: h.mode,
        position: h.position.into_iter().map(Scalar::as_f64).collect(),
    }
}

impl<F: Scalar, S: Clone> Trajectory<F, S> {
    pub fn to_json<M: PdmpModel<F, State = S>>(&self, model: &M) -> TrajectoryJson {
        TrajectoryJson {
            horizon: self.horizon,
            absorbed: self.absorbed,
            initial: hybrid_to_f64(model.to_hybrid(&self.initial)),
            jumps: self
                .jumps
                .iter()
                .map(|j| JumpJson {
                    index: j.index,
                    time: j.time.as_f64(),
                    inter_jump: j.inter_jump.as_f64(),
                    cause: j.cause,
                    state: hybrid_to_f64(model.to_hybrid(&j.state)),
                })
                .collect(),
        }
    }
}

const QUAD_REL_TOL: f64 = 1e-8;
const QUAD_MAX_DEPTH: u32 = 40;

/// `Λ(z, t) = ∫₀ᵗ λ(Φ(z, s)) ds` for `0 <= t <= t*(z)`.
///
/// Exact for models whose intensity is constant along flows; otherwise an
/// adaptive trapezoid rule with relative tolerance `1e-8`.
pub fn cumulative_intensity<F: Scalar, M: PdmpModel<F>>(model: &M, z: &M::State, t: F) -> Result<F> {
    if t.is_nan() || t < F::zero() {
        return Err(Error::Domain(format!("negative duration {t}")));
    }
    let tstar = model.boundary_time(z);
    if t > tstar {
        return Err(Error::Domain(format!("duration {t} exceeds boundary time {tstar}")));
    }
    if t.is_infinite() {
        return Err(Error::Domain("cumulative intensity over an infinite horizon".into()));
    }
    if t == F::zero() {
        return Ok(F::zero());
    }
    Ok(integrate_intensity(model, z, t))
}

fn integrate_intensity<F: Scalar, M: PdmpModel<F>>(model: &M, z: &M::State, t: F) -> F {
    if model.intensity_constant_along_flow() {
        return model.intensity(z) * t;
    }
    let f = |s: F| model.intensity(&model.flow(z, s));
    let fa = f(F::zero());
    let fb = f(t);
    let whole = (fa + fb) * t * F::lit(0.5);
    adaptive_trapezoid(&f, F::zero(), t, fa, fb, whole, QUAD_MAX_DEPTH)
}

fn adaptive_trapezoid<F: Scalar>(f: &impl Fn(F) -> F, a: F, b: F, fa: F, fb: F, whole: F, depth: u32) -> F {
    let half = F::lit(0.5);
    let m = (a + b) * half;
    let fm = f(m);
    let left = (fa + fm) * (m - a) * half;
    let right = (fm + fb) * (b - m) * half;
    let refined = left + right;
    let tol = F::lit(QUAD_REL_TOL) * refined.abs().max(F::min_positive_value());
    if depth == 0 || (refined - whole).abs() <= tol {
        refined
    } else {
        adaptive_trapezoid(f, a, m, fa, fm, left, depth - 1) + adaptive_trapezoid(f, m, b, fm, fb, right, depth - 1)
    }
}

/// Unit exponential variate by inverse transform.
pub fn unit_exponential<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> F {
    // 1 - U lies in (0, 1], so the log is finite.
    let u: f64 = 1.0 - rng.gen::<f64>();
    F::lit(-u.ln())
}

/// Draws the time to the next jump from `z`.
///
/// Compares a unit exponential variate `E` against `Λ(z, t*(z))`: when `E`
/// is at least that large the flow reaches the boundary first and the
/// returned duration is exactly `t*(z)`. Otherwise `Λ(z, S) = E` is solved,
/// in closed form for constant intensities and by bisection otherwise.
pub fn sample_inter_jump_time<F: Scalar, M: PdmpModel<F>, R: Rng + ?Sized>(
    model: &M,
    z: &M::State,
    rng: &mut R,
) -> Result<(F, JumpCause)> {
    if !model.is_finite(z) {
        return Err(Error::Domain("state is not finite".into()));
    }
    let tstar = model.boundary_time(z);
    if tstar.is_nan() || tstar < F::zero() {
        return Err(Error::Domain(format!("invalid boundary time {tstar}")));
    }
    let e: F = unit_exponential(rng);

    if model.intensity_constant_along_flow() {
        let lambda = model.intensity(z);
        if lambda <= F::zero() {
            return if tstar.is_finite() {
                Ok((tstar, JumpCause::Boundary))
            } else {
                Err(Error::Domain("state never jumps (absorbing)".into()))
            };
        }
        let s = e / lambda;
        return Ok(if s >= tstar {
            (tstar, JumpCause::Boundary)
        } else {
            (s, JumpCause::Random)
        });
    }

    if tstar.is_finite() {
        let total = integrate_intensity(model, z, tstar);
        if e >= total {
            return Ok((tstar, JumpCause::Boundary));
        }
        let tol = F::lit(1e-6) * tstar;
        Ok((invert_cumulative(model, z, e, F::zero(), tstar, tol), JumpCause::Random))
    } else {
        // Bracket by doubling, then bisect to a relative tolerance.
        let mut hi = F::one();
        let mut guard = 0;
        while integrate_intensity(model, z, hi) < e {
            hi = hi + hi;
            guard += 1;
            if guard > 2000 || hi.is_infinite() {
                return Err(Error::Domain("state never jumps (absorbing)".into()));
            }
        }
        let tol = F::lit(1e-6) * hi;
        Ok((invert_cumulative(model, z, e, F::zero(), hi, tol), JumpCause::Random))
    }
}

fn invert_cumulative<F: Scalar, M: PdmpModel<F>>(
    model: &M,
    z: &M::State,
    target: F,
    mut lo: F,
    mut hi: F,
    tol: F,
) -> F {
    let half = F::lit(0.5);
    while hi - lo > tol {
        let mid = (lo + hi) * half;
        if mid <= lo || mid >= hi {
            break;
        }
        if integrate_intensity(model, z, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) * half
}

/// Simulates up to `horizon` jumps starting from `z0`.
///
/// The jump list is shorter than `horizon` only when the process enters an
/// absorbing state. The result depends only on `(z0, horizon)` and the
/// random stream.
pub fn simulate<F: Scalar, M: PdmpModel<F>, R: Rng + ?Sized>(
    model: &M,
    z0: M::State,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory<F, M::State>> {
    if horizon == 0 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    if !model.is_finite(&z0) {
        return Err(Error::NonFinite { jump: 0 });
    }
    let mut jumps = Vec::with_capacity(horizon);
    let mut current = z0.clone();
    let mut time = F::zero();
    let mut absorbed = false;
    for index in 1..=horizon {
        if model.is_absorbing(&current) {
            absorbed = true;
            break;
        }
        let (s, cause) = sample_inter_jump_time(model, &current, rng).map_err(|e| match e {
            Error::Domain(_) => Error::NonFinite { jump: index },
            other => other,
        })?;
        let pre_jump = model.flow(&current, s);
        let post = model.jump(&pre_jump, rng);
        time = time + s;
        if !model.is_finite(&post) || !time.is_finite() {
            return Err(Error::NonFinite { jump: index });
        }
        jumps.push(JumpRecord {
            index,
            time,
            state: post.clone(),
            inter_jump: s,
            cause,
        });
        current = post;
    }
    if !absorbed && jumps.len() == horizon && model.is_absorbing(&current) {
        absorbed = true;
    }
    Ok(Trajectory {
        initial: z0,
        jumps,
        horizon,
        absorbed,
    })
}

/// Simulates `runs` independent trajectories. Run `i` draws its initial
/// state and its jumps from substream `i` of `seed`.
pub fn simulate_batch<F, M, I>(
    model: &M,
    initial: I,
    horizon: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<Trajectory<F, M::State>>>
where
    F: Scalar,
    M: PdmpModel<F>,
    I: Fn(&mut ChaCha8Rng) -> M::State + Sync,
{
    (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i);
            let z0 = initial(&mut rng);
            simulate(model, z0, horizon, &mut rng)
        })
        .collect()
}

/// State of the process at absolute time `t`, right-continuous at jumps.
///
/// Times past the last jump are only available once the trajectory has
/// been absorbed, where the state no longer changes by jumps.
pub fn state_at<F: Scalar, M: PdmpModel<F>>(model: &M, trajectory: &Trajectory<F, M::State>, t: F) -> Result<M::State> {
    if t.is_nan() || t < F::zero() {
        return Err(Error::Range(format!("negative time {t}")));
    }
    let last = trajectory.last_jump_time();
    if t > last && !trajectory.absorbed {
        return Err(Error::Range(format!("time {t} beyond the simulated horizon {last}")));
    }
    let k = trajectory.jumps.partition_point(|j| j.time <= t);
    let (origin, start) = if k == 0 {
        (&trajectory.initial, F::zero())
    } else {
        let j = &trajectory.jumps[k - 1];
        (&j.state, j.time)
    };
    Ok(model.flow(origin, t - start))
}
