//! Cyclic three-environment corrosion of a thin metallic structure.
//!
//! The structure moves through a workshop (1), a submarine at sea (2) and a
//! dry-dock (3), always in that order. Sojourns are exponential, the initial
//! anti-corrosion protection lasts a Weibull-distributed time, and once it is
//! gone the thickness loss grows with an environment-specific transient
//! towards a random linear rate.
//!
//! The open domain of every environment is `{d < D_max}`: reaching the
//! failure threshold is a boundary jump into the absorbing [`Mode::Failed`].
//!
//! Besides `(d, γ, ρ)` the state carries `clock`, the exposed time spent in
//! the current environment. The thickness-loss transient restarts at every
//! change of environment, so the flow is only a semigroup once that clock is
//! part of the state. Post-jump states always have `clock == 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdmp::{HybridState, PdmpModel};
use crate::quantizer::ChainEmbedding;
use crate::reward::{Reward, RewardFunction};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Workshop,
    Operation,
    DryDock,
    /// Thickness loss reached the failure threshold.
    Failed,
}

impl Mode {
    /// 1, 2, 3 for the environments, 0 for the failed mode.
    pub fn label(self) -> u32 {
        match self {
            Mode::Workshop => 1,
            Mode::Operation => 2,
            Mode::DryDock => 3,
            Mode::Failed => 0,
        }
    }

    pub fn from_label(label: u32) -> Option<Self> {
        match label {
            0 => Some(Mode::Failed),
            1 => Some(Mode::Workshop),
            2 => Some(Mode::Operation),
            3 => Some(Mode::DryDock),
            _ => None,
        }
    }

    /// Next environment in the cycle 1 → 2 → 3 → 1.
    pub fn next(self) -> Self {
        match self {
            Mode::Workshop => Mode::Operation,
            Mode::Operation => Mode::DryDock,
            Mode::DryDock => Mode::Workshop,
            Mode::Failed => Mode::Failed,
        }
    }

    fn env_index(self) -> Option<usize> {
        match self {
            Mode::Failed => None,
            m => Some(m.label() as usize - 1),
        }
    }
}

/// Per-environment parameters. Durations in hours, rates in mm/hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentParams<F> {
    pub mean_sojourn: F,
    pub transition_period: F,
    pub rate_low: F,
    pub rate_high: F,
}

/// How the published sojourn and Weibull-scale numbers are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitInterpretation {
    /// 17520, 131400, 8760 are mean sojourns in hours and 11800 is the
    /// Weibull scale in hours.
    #[default]
    Hours,
    /// The same numbers read literally as rates per hour.
    PerHour,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrosionParams<F> {
    pub envs: [EnvironmentParams<F>; 3],
    pub weibull_shape: F,
    pub weibull_scale: F,
    pub failure_threshold: F,
}

impl<F: Scalar> CorrosionParams<F> {
    pub fn reference(units: UnitInterpretation) -> Self {
        let conv = |x: f64| match units {
            UnitInterpretation::Hours => F::lit(x),
            UnitInterpretation::PerHour => F::lit(1.0 / x),
        };
        let env = |mean: f64, eta: f64, lo: f64, hi: f64| EnvironmentParams {
            mean_sojourn: conv(mean),
            transition_period: F::lit(eta),
            rate_low: F::lit(lo),
            rate_high: F::lit(hi),
        };
        Self {
            envs: [
                env(17_520.0, 30_000.0, 1e-6, 1e-5),
                env(131_400.0, 200_000.0, 1e-7, 1e-6),
                env(8_760.0, 40_000.0, 1e-6, 1e-5),
            ],
            weibull_shape: F::lit(2.5),
            weibull_scale: conv(11_800.0),
            failure_threshold: F::lit(0.2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: F| x.is_finite() && x > F::zero();
        for (i, e) in self.envs.iter().enumerate() {
            if !(pos(e.mean_sojourn) && pos(e.transition_period) && pos(e.rate_low) && pos(e.rate_high)) {
                return Err(Error::Config(format!(
                    "environment {} parameters must be positive",
                    i + 1
                )));
            }
            if e.rate_low >= e.rate_high {
                return Err(Error::Config(format!(
                    "environment {}: rate_low must be below rate_high",
                    i + 1
                )));
            }
        }
        if !(pos(self.weibull_shape) && pos(self.weibull_scale) && pos(self.failure_threshold)) {
            return Err(Error::Config(
                "Weibull shape/scale and failure threshold must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn env(&self, mode: Mode) -> Option<&EnvironmentParams<F>> {
        mode.env_index().map(|i| &self.envs[i])
    }
}

impl<F: Scalar> Default for CorrosionParams<F> {
    fn default() -> Self {
        Self::reference(UnitInterpretation::Hours)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrosionState<F> {
    pub mode: Mode,
    /// Thickness loss `d`, mm.
    pub thickness_loss: F,
    /// Remaining protection `γ`, hours.
    pub protection: F,
    /// Corrosion rate `ρ`, mm/hour.
    pub rate: F,
    /// Exposed (unprotected) time spent in the current environment, hours.
    pub clock: F,
}

/// Thickness loss accumulated over `t` hours after a change of environment:
/// 0 while `t <= γ`, then `ρ (t − (γ + η) + η e^{−(t − γ)/η})`.
pub fn thickness_increment<F: Scalar>(rate: F, protection: F, eta: F, t: F) -> Result<F> {
    if !(rate > F::zero()) || !(eta > F::zero()) || !(protection >= F::zero()) || !(t >= F::zero()) {
        return Err(Error::Domain(format!(
            "thickness increment needs ρ > 0, η > 0, γ >= 0, t >= 0 (got {rate}, {eta}, {protection}, {t})"
        )));
    }
    if t <= protection {
        return Ok(F::zero());
    }
    Ok(exposed_increment(rate, eta, F::zero(), t - protection))
}

/// Loss accumulated while the exposure clock moves from `clock` to
/// `clock + exposed`: `ρ ∫ (1 − e^{−s/η}) ds` over that interval.
#[inline]
fn exposed_increment<F: Scalar>(rate: F, eta: F, clock: F, exposed: F) -> F {
    let decay = (-clock / eta).exp();
    rate * (exposed + eta * decay * (-exposed / eta).exp_m1())
}

/// Reference implementation of the corrosion PDMP.
#[derive(Debug, Clone)]
pub struct CorrosionModel<F> {
    params: CorrosionParams<F>,
}

impl<F: Scalar> CorrosionModel<F> {
    pub fn new(params: CorrosionParams<F>) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &CorrosionParams<F> {
        &self.params
    }

    /// `X_0 = (1, 0, γ_0, ρ_0)` with `γ_0 ~ Weibull(α, β)` and `ρ_0` uniform on
    /// the workshop range.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> CorrosionState<F> {
        let p = &self.params;
        let u: f64 = 1.0 - rng.gen::<f64>();
        let shape = p.weibull_shape.as_f64();
        let protection = p.weibull_scale * F::lit((-u.ln()).powf(1.0 / shape));
        let env = &p.envs[0];
        CorrosionState {
            mode: Mode::Workshop,
            thickness_loss: F::zero(),
            protection,
            rate: uniform(env.rate_low, env.rate_high, rng),
            clock: F::zero(),
        }
    }

    /// Sojourn intensity `1 / mean_sojourn` of the current environment.
    pub fn sojourn_intensity(&self, state: &CorrosionState<F>) -> F {
        self.params
            .env(state.mode)
            .map_or(F::zero(), |e| F::one() / e.mean_sojourn)
    }

    fn boundary(&self, z: &CorrosionState<F>) -> F {
        let Some(env) = self.params.env(z.mode) else {
            return F::infinity();
        };
        let gap = self.params.failure_threshold - z.thickness_loss;
        if gap <= F::zero() {
            return F::zero();
        }
        let eta = env.transition_period;
        let decay = (-z.clock / eta).exp();
        let target = gap / z.rate;
        // Solve e + η c (e^{−e/η} − 1) = target. The left side is increasing
        // and convex, so Newton started to the right of the root decreases
        // monotonically onto it.
        let mut e = target + eta * decay;
        for _ in 0..200 {
            let f = e + eta * decay * (-e / eta).exp_m1() - target;
            if f <= F::zero() {
                break;
            }
            let slope = F::one() - decay * (-e / eta).exp();
            if slope <= F::zero() {
                break;
            }
            let next = e - f / slope;
            if !(next < e) {
                break;
            }
            e = next;
        }
        let mut t = z.protection + e;
        // Make sure the computed flow endpoint is on or past the threshold.
        let mut bump = t * F::epsilon();
        for _ in 0..64 {
            if self.flow_state(z, t).thickness_loss >= self.params.failure_threshold {
                break;
            }
            t = t + bump;
            bump = bump + bump;
        }
        t
    }

    fn flow_state(&self, z: &CorrosionState<F>, t: F) -> CorrosionState<F> {
        let Some(env) = self.params.env(z.mode) else {
            return *z;
        };
        let shielded = t.min(z.protection);
        let exposed = t - shielded;
        let mut out = *z;
        out.protection = z.protection - shielded;
        if exposed > F::zero() {
            out.thickness_loss = z.thickness_loss + exposed_increment(z.rate, env.transition_period, z.clock, exposed);
            out.clock = z.clock + exposed;
        }
        out
    }
}

fn uniform<F: Scalar, R: Rng + ?Sized>(lo: F, hi: F, rng: &mut R) -> F {
    let u: f64 = rng.gen();
    lo + (hi - lo) * F::lit(u)
}

impl<F: Scalar> PdmpModel<F> for CorrosionModel<F> {
    type State = CorrosionState<F>;

    fn flow(&self, z: &Self::State, t: F) -> Self::State {
        self.flow_state(z, t)
    }

    fn intensity(&self, z: &Self::State) -> F {
        self.sojourn_intensity(z)
    }

    fn intensity_constant_along_flow(&self) -> bool {
        true
    }

    fn boundary_time(&self, z: &Self::State) -> F {
        self.boundary(z)
    }

    fn jump<R: Rng + ?Sized>(&self, pre: &Self::State, rng: &mut R) -> Self::State {
        if pre.mode == Mode::Failed {
            return *pre;
        }
        let threshold = self.params.failure_threshold;
        if pre.thickness_loss >= threshold {
            return CorrosionState {
                mode: Mode::Failed,
                thickness_loss: threshold,
                protection: pre.protection,
                rate: pre.rate,
                clock: F::zero(),
            };
        }
        let mode = pre.mode.next();
        let env = self.params.env(mode).expect("environment mode");
        CorrosionState {
            mode,
            thickness_loss: pre.thickness_loss,
            protection: pre.protection,
            rate: uniform(env.rate_low, env.rate_high, rng),
            clock: F::zero(),
        }
    }

    fn is_absorbing(&self, z: &Self::State) -> bool {
        z.mode == Mode::Failed
    }

    fn is_finite(&self, z: &Self::State) -> bool {
        z.thickness_loss.is_finite() && z.protection.is_finite() && z.rate.is_finite() && z.clock.is_finite()
    }

    fn to_hybrid(&self, z: &Self::State) -> HybridState<F> {
        HybridState {
            mode: z.mode.label(),
            position: vec![z.thickness_loss, z.protection, z.rate, z.clock],
        }
    }
}

/// Embedded points are `(mode, d, γ, ρ, S)`; the mode label comes first so
/// partial-distance searches reject other modes after one coordinate.
impl<F: Scalar> ChainEmbedding<F> for CorrosionModel<F> {
    fn dims(&self) -> usize {
        5
    }

    fn embed(&self, z: &Self::State, inter_jump: F, out: &mut [F]) {
        out[0] = F::lit(f64::from(z.mode.label()));
        out[1] = z.thickness_loss;
        out[2] = z.protection;
        out[3] = z.rate;
        out[4] = inter_jump;
    }

    fn restore(&self, point: &[F]) -> Self::State {
        let label = point[0].round().to_i64().unwrap_or(0).clamp(0, 3) as u32;
        let mode = Mode::from_label(label).unwrap_or(Mode::Failed);
        let tiny = F::min_positive_value();
        CorrosionState {
            mode,
            thickness_loss: point[1].max(F::zero()),
            protection: point[2].max(F::zero()),
            rate: point[3].max(tiny),
            clock: F::zero(),
        }
    }

    fn mode_coordinates(&self) -> &[usize] {
        &[0]
    }
}

/// `g` depends on the thickness loss only.
impl<F: Scalar> Reward<F, CorrosionState<F>> for RewardFunction<F> {
    fn reward(&self, state: &CorrosionState<F>) -> F {
        self.eval(state.thickness_loss)
    }
}
