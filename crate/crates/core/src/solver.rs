//! Backward dynamic programming on the quantized chain.
//!
//! For every stage `n = N, ..., 1` and every point `z` of grid `n − 1` the
//! discretized operator compares
//!
//! * stopping at the best time `u` of the path-adapted grid `G(z)`:
//!   `J(u) = Σ_j P_n[z][j] (w_j if ŝ_j < u else g(Φ(z, u)))`, and
//! * waiting for the next jump: `Σ_j P_n[z][j] w_j`,
//!
//! keeping the larger value together with the decision that produced it.
//! Those decisions are what the online stopping rule replays.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::io::{Reader, Writer};
use crate::quantizer::{nearest, ChainEmbedding, QuantizedChain};
use crate::reward::Reward;
use crate::scalar::Scalar;

/// Time points `t_i = i Δ`, `1 <= i <= count`, strictly below `t*(z) − Δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<F> {
    pub step: F,
    pub count: usize,
}

impl<F: Scalar> TimeGrid<F> {
    /// `count = ⌊t*/Δ⌋ − 1`, reduced further while the last point is not
    /// strictly below `t* − Δ` (this happens when `t*/Δ` is an integer).
    pub fn new(boundary_time: F, step: F) -> Result<Self> {
        if !(step > F::zero()) || !step.is_finite() {
            return Err(Error::Domain(format!("time step must be positive, got {step}")));
        }
        if !boundary_time.is_finite() {
            return Err(Error::Config(
                "time grids need a finite boundary time; use a model with a bounded domain".into(),
            ));
        }
        if boundary_time < F::zero() {
            return Err(Error::Domain(format!("negative boundary time {boundary_time}")));
        }
        let ratio = (boundary_time / step).floor();
        let mut count = ratio.to_usize().unwrap_or(0).saturating_sub(1);
        while count > 0 && F::lit(count as f64) * step >= boundary_time - step {
            count -= 1;
        }
        Ok(Self { step, count })
    }

    /// `t_i`, for `1 <= i <= count`.
    #[inline]
    pub fn point(&self, i: usize) -> F {
        F::lit(i as f64) * self.step
    }

    pub fn points(&self) -> impl Iterator<Item = F> + '_ {
        (1..=self.count).map(|i| self.point(i))
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Which side of the outer maximum won at a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision<F> {
    /// Intervene `at` hours after the jump unless another jump comes first.
    Stop { at: F },
    /// Wait for the next jump.
    Continue,
}

impl<F: Copy> Decision<F> {
    pub fn best_time(&self) -> Option<F> {
        match self {
            Decision::Stop { at } => Some(*at),
            Decision::Continue => None,
        }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, Decision::Stop { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord<F> {
    pub value: F,
    pub decision: Decision<F>,
}

/// Operator output at one point, plus whether its transition row was a
/// placeholder for a never-visited point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorValue<F> {
    pub record: PointRecord<F>,
    pub flagged: bool,
}

/// Values and decisions of stage `n`, indexed by the points of grid `n − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueStage<F> {
    pub stage: usize,
    pub records: Vec<PointRecord<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<F> {
    pub horizon: usize,
    pub k: usize,
    /// Fingerprint of the chain the result was computed on.
    pub fingerprint: [u8; 32],
    pub step: F,
    pub min_boundary_time: F,
    /// `Σ_i weight_0[i] v̂_0(i)`: the approximate value averaged over the
    /// quantized initial distribution.
    pub v0: F,
    /// `stages[n − 1]` holds stage `n`.
    pub stages: Vec<ValueStage<F>>,
    /// `v̂_N = g` on grid `N`.
    pub terminal: Vec<F>,
    pub flagged_rows: usize,
}

impl<F: Scalar> SolveResult<F> {
    /// Stage `n` records (over grid `n − 1`), `1 <= n <= N`.
    pub fn stage(&self, n: usize) -> Result<&ValueStage<F>> {
        if n == 0 || n > self.horizon {
            return Err(Error::Range(format!("stage {n} outside 1..={}", self.horizon)));
        }
        Ok(&self.stages[n - 1])
    }

    /// `v̂_0` at the projection of `point` onto grid 0.
    pub fn value_at(&self, chain: &QuantizedChain<F>, point: &[F]) -> F {
        let i = nearest(&chain.grids[0], point, &chain.norm);
        self.stages[0].records[i].value
    }

    /// Approximate value at every point of grid `n`, `0 <= n <= N`.
    pub fn values(&self, n: usize) -> Vec<F> {
        if n == self.horizon {
            self.terminal.clone()
        } else {
            self.stages[n].records.iter().map(|r| r.value).collect()
        }
    }
}

/// Smallest boundary time over the non-absorbing points of grids
/// `0..N − 1`, the points at which the operator needs a time grid.
pub fn min_boundary_time<F: Scalar, M: ChainEmbedding<F>>(chain: &QuantizedChain<F>, model: &M) -> Result<F> {
    let mut min = F::infinity();
    let mut any = false;
    for g in &chain.grids[..chain.horizon()] {
        for p in g.iter() {
            let z = model.restore(p);
            if model.is_absorbing(&z) {
                continue;
            }
            let t = model.boundary_time(&z);
            if !t.is_finite() {
                return Err(Error::Config(
                    "grid point with infinite boundary time; the solver needs a bounded-domain model".into(),
                ));
            }
            any = true;
            min = min.min(t);
        }
    }
    if !any {
        return Err(Error::Input("every grid point is absorbing".into()));
    }
    Ok(min)
}

/// `Δ = min t*(z) / (target_points + 2)`, so every time grid is nonempty.
pub fn choose_time_step<F: Scalar, M: ChainEmbedding<F>>(
    chain: &QuantizedChain<F>,
    model: &M,
    target_points: usize,
) -> Result<F> {
    let min = min_boundary_time(chain, model)?;
    if !(min > F::zero()) {
        return Err(Error::Numerical(format!(
            "grid point already on the boundary (t* = {min})"
        )));
    }
    Ok(min / F::lit(target_points as f64 + 2.0))
}

/// `Σ_j P_n[i][j] values_next[j]`, and whether row `i` is flagged.
pub fn quantized_expectation<F: Scalar>(
    chain: &QuantizedChain<F>,
    n: usize,
    values_next: &[F],
    i: usize,
) -> Result<(F, bool)> {
    if n == 0 || n > chain.horizon() {
        return Err(Error::Range(format!("stage {n} outside 1..={}", chain.horizon())));
    }
    let p = chain.transition(n);
    let (cols, probs) = p.row(i);
    let sum = cols
        .iter()
        .zip(probs)
        .fold(F::zero(), |acc, (j, pr)| acc + *pr * values_next[*j as usize]);
    Ok((sum, p.is_flagged(i)))
}

/// Discretized operator at point `i` of grid `n − 1`, given next-stage values
/// `w` on grid `n`.
///
/// Ties: `ŝ_j = u` counts as "no jump before u"; among equal `J(u)` the
/// smallest `u` wins; stopping must strictly beat waiting. Times past the
/// largest `ŝ_j` of the row give `J(u) = E[w]` and are skipped. Absorbing
/// points always wait.
pub fn apply_operator<F, M, G>(
    chain: &QuantizedChain<F>,
    model: &M,
    reward: &G,
    n: usize,
    w: &[F],
    i: usize,
    step: F,
) -> Result<OperatorValue<F>>
where
    F: Scalar,
    M: ChainEmbedding<F>,
    G: Reward<F, M::State>,
{
    let (cont, flagged) = quantized_expectation(chain, n, w, i)?;
    let z = model.restore(chain.grids[n - 1].point(i));
    let wait = OperatorValue {
        record: PointRecord {
            value: cont,
            decision: Decision::Continue,
        },
        flagged,
    };
    if model.is_absorbing(&z) {
        return Ok(wait);
    }
    let grid = TimeGrid::new(model.boundary_time(&z), step)?;
    if grid.is_empty() {
        return Ok(wait);
    }

    let next = &chain.grids[n];
    let s_coord = next.dims - 1;
    let (cols, probs) = chain.transition(n).row(i);
    // (ŝ_j, p_j, p_j w_j) sorted by ŝ_j.
    let mut entries: Vec<(F, F, F)> = cols
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p > F::zero())
        .map(|(j, p)| {
            let j = *j as usize;
            (next.point(j)[s_coord], *p, *p * w[j])
        })
        .collect();
    entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut tail = vec![F::zero(); entries.len() + 1];
    for k in (0..entries.len()).rev() {
        tail[k] = tail[k + 1] + entries[k].1;
    }

    let mut jumped = F::zero();
    let mut ptr = 0;
    let mut best: Option<(F, F)> = None;
    for idx in 1..=grid.count {
        let u = grid.point(idx);
        while ptr < entries.len() && entries[ptr].0 < u {
            jumped = jumped + entries[ptr].2;
            ptr += 1;
        }
        if ptr == entries.len() {
            break;
        }
        let j = jumped + tail[ptr] * reward.reward(&model.flow(&z, u));
        if best.is_none_or(|(bj, _)| j > bj) {
            best = Some((j, u));
        }
    }
    Ok(match best {
        Some((bj, u)) if bj > cont => OperatorValue {
            record: PointRecord {
                value: bj,
                decision: Decision::Stop { at: u },
            },
            flagged,
        },
        _ => wait,
    })
}

/// `v̂_N = g` on grid `N`, then `v̂_{n−1} = L̂_n(v̂_n, g)` down to stage 1.
pub fn backward_solve<F, M, G>(chain: &QuantizedChain<F>, model: &M, reward: &G, step: F) -> Result<SolveResult<F>>
where
    F: Scalar,
    M: ChainEmbedding<F>,
    G: Reward<F, M::State>,
{
    let horizon = chain.horizon();
    if horizon == 0 {
        return Err(Error::Input("chain has no transitions (horizon 0)".into()));
    }
    let min_t = min_boundary_time(chain, model)?;
    let terminal: Vec<F> = chain.grids[horizon]
        .iter()
        .map(|p| reward.reward(&model.restore(p)))
        .collect();
    let mut stages = Vec::with_capacity(horizon);
    let mut flagged_rows = 0;
    let mut w = terminal.clone();
    for n in (1..=horizon).rev() {
        let k = chain.grids[n - 1].len();
        let out: Vec<OperatorValue<F>> = (0..k)
            .into_par_iter()
            .map(|i| apply_operator(chain, model, reward, n, &w, i, step))
            .collect::<Result<_>>()?;
        flagged_rows += out.iter().filter(|o| o.flagged).count();
        let records: Vec<PointRecord<F>> = out.into_iter().map(|o| o.record).collect();
        if records.iter().any(|r| !r.value.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value at stage {n}")));
        }
        w = records.iter().map(|r| r.value).collect();
        stages.push(ValueStage { stage: n, records });
    }
    stages.reverse();
    let v0 = chain.grids[0]
        .weights
        .iter()
        .zip(&w)
        .fold(F::zero(), |acc, (p, v)| acc + *p * *v);
    Ok(SolveResult {
        horizon,
        k: chain.k(),
        fingerprint: chain.meta.fingerprint,
        step,
        min_boundary_time: min_t,
        v0,
        stages,
        terminal,
        flagged_rows,
    })
}

/// [`choose_time_step`] followed by [`backward_solve`].
pub fn solve<F, M, G>(chain: &QuantizedChain<F>, model: &M, reward: &G, target_points: usize) -> Result<SolveResult<F>>
where
    F: Scalar,
    M: ChainEmbedding<F>,
    G: Reward<F, M::State>,
{
    let step = choose_time_step(chain, model, target_points)?;
    backward_solve(chain, model, reward, step)
}

pub const SOLVE_MAGIC: &[u8; 8] = b"PDMPQSOL";
pub const SOLVE_VERSION: u32 = 1;

/// Binary layout (little-endian): magic `PDMPQSOL`, version u32,
/// fingerprint (32 bytes), N u32, K u32, step f64, min boundary time f64,
/// v0 f64, flagged rows u64; then for each stage `n = 1..=N` and each of the
/// K points: decision u8 (1 = stop), value f64, stop time f64 (0 when
/// waiting); finally the K terminal values as f64.
pub fn write_solve<F: Scalar, W: Write>(result: &SolveResult<F>, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.bytes(SOLVE_MAGIC)?;
    w.u32(SOLVE_VERSION)?;
    w.bytes(&result.fingerprint)?;
    w.u32(result.horizon as u32)?;
    w.u32(result.k as u32)?;
    w.f64(result.step.as_f64())?;
    w.f64(result.min_boundary_time.as_f64())?;
    w.f64(result.v0.as_f64())?;
    w.u64(result.flagged_rows as u64)?;
    for s in &result.stages {
        if s.records.len() != result.k {
            return Err(Error::Format("stage size differs from K".into()));
        }
        for r in &s.records {
            match r.decision {
                Decision::Stop { at } => {
                    w.u8(1)?;
                    w.f64(r.value.as_f64())?;
                    w.f64(at.as_f64())?;
                }
                Decision::Continue => {
                    w.u8(0)?;
                    w.f64(r.value.as_f64())?;
                    w.f64(0.0)?;
                }
            }
        }
    }
    for v in &result.terminal {
        w.f64(v.as_f64())?;
    }
    w.0.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn read_solve<F: Scalar, R: Read>(input: R) -> Result<SolveResult<F>> {
    let mut r = Reader(input);
    if &r.array::<8>()? != SOLVE_MAGIC {
        return Err(Error::Format("not a solve file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != SOLVE_VERSION {
        return Err(Error::Format(format!("unsupported solve file version {version}")));
    }
    let fingerprint = r.array::<32>()?;
    let horizon = r.u32()? as usize;
    let k = r.u32()? as usize;
    let step = F::lit(r.f64()?);
    let min_boundary_time = F::lit(r.f64()?);
    let v0 = F::lit(r.f64()?);
    let flagged_rows = r.u64()? as usize;
    let mut stages = Vec::with_capacity(horizon);
    for n in 1..=horizon {
        let mut records = Vec::with_capacity(k);
        for _ in 0..k {
            let tag = r.u8()?;
            let value = F::lit(r.f64()?);
            let at = F::lit(r.f64()?);
            let decision = match tag {
                0 => Decision::Continue,
                1 => Decision::Stop { at },
                t => return Err(Error::Format(format!("bad decision tag {t}"))),
            };
            records.push(PointRecord { value, decision });
        }
        stages.push(ValueStage { stage: n, records });
    }
    let terminal = (0..k).map(|_| r.f64().map(F::lit)).collect::<Result<Vec<_>>>()?;
    r.expect_end()?;
    Ok(SolveResult {
        horizon,
        k,
        fingerprint,
        step,
        min_boundary_time,
        v0,
        stages,
        terminal,
        flagged_rows,
    })
}
