//! Competitive learning vector quantization of a simulated chain.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::search::ProjectionIndex;
use super::{ChainEmbedding, Grid, QuantizedChain, StageSamples, TrainingMeta, TransitionMatrix, WeightedNorm};
use crate::error::{Error, Result};
use crate::pdmp::simulate;
use crate::rng::substream;
use crate::scalar::Scalar;

/// Produces independent realizations of an embedded chain, addressable by
/// index so that a second pass can regenerate the exact same samples.
pub trait ChainSource<F: Scalar>: Sync {
    fn dims(&self) -> usize;

    fn horizon(&self) -> usize;

    /// Writes realization `index` into `out` as `horizon + 1` consecutive
    /// points of `dims` coordinates.
    fn realize(&self, index: u64, out: &mut [F]) -> Result<()>;
}

/// Embedded chain of a simulated PDMP.
///
/// Realization `i` runs on substream `i` of `seed`. Once the process is
/// absorbed, the remaining stages repeat the absorbing state with a zero
/// inter-jump time.
pub struct SimulatedChain<'a, M, I> {
    model: &'a M,
    initial: I,
    horizon: usize,
    seed: u64,
}

impl<'a, M, I> SimulatedChain<'a, M, I> {
    pub fn new(model: &'a M, initial: I, horizon: usize, seed: u64) -> Self {
        Self {
            model,
            initial,
            horizon,
            seed,
        }
    }
}

impl<F, M, I> ChainSource<F> for SimulatedChain<'_, M, I>
where
    F: Scalar,
    M: ChainEmbedding<F>,
    I: Fn(&mut ChaCha8Rng) -> M::State + Sync,
{
    fn dims(&self) -> usize {
        self.model.dims()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn realize(&self, index: u64, out: &mut [F]) -> Result<()> {
        let dims = self.model.dims();
        let mut rng = substream(self.seed, index);
        let z0 = (self.initial)(&mut rng);
        let traj = simulate(self.model, z0, self.horizon, &mut rng)?;
        self.model.embed(&traj.initial, F::zero(), &mut out[..dims]);
        let mut last = &traj.initial;
        for n in 1..=self.horizon {
            let slot = &mut out[n * dims..(n + 1) * dims];
            match traj.jumps.get(n - 1) {
                Some(j) => {
                    self.model.embed(&j.state, j.inter_jump, slot);
                    last = &j.state;
                }
                None => self.model.embed(last, F::zero(), slot),
            }
        }
        Ok(())
    }
}

/// Draws `count` realizations of `source` (indices `0..count`) and splits
/// them by stage, e.g. to estimate coordinate scales.
pub fn stage_samples<F: Scalar, C: ChainSource<F>>(source: &C, count: u64) -> Result<Vec<StageSamples<F>>> {
    let dims = source.dims();
    let stages = source.horizon() + 1;
    let paths: Vec<Vec<F>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![F::zero(); stages * dims];
            source.realize(i, &mut buf).map(|_| buf)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![StageSamples::new(dims); stages];
    for path in &paths {
        for (n, s) in out.iter_mut().enumerate() {
            s.push(&path[n * dims..(n + 1) * dims]);
        }
    }
    Ok(out)
}

/// Robbins–Monro gain `a / (b + k)` for the `k`-th update (k = 1, 2, ...).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
}

impl StepSchedule {
    /// `a = K`, `b = 10 K`: the gain starts at 0.1 and each point sees an
    /// effective `1 / (10 + visits)` sequence.
    pub fn for_grid_size(k: usize) -> Self {
        Self {
            a: k as f64,
            b: 10.0 * k as f64,
        }
    }

    #[inline]
    pub fn gain(&self, k: u64) -> f64 {
        self.a / (self.b + k as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    /// Points per grid.
    pub k: usize,
    /// Realizations consumed by each pass.
    pub samples: u64,
    pub schedule: StepSchedule,
    /// Recorded in the chain metadata.
    pub seed: u64,
    pub fingerprint: [u8; 32],
    /// Realizations generated at a time.
    pub chunk: usize,
}

impl TrainOptions {
    pub fn new(k: usize, samples: u64, seed: u64) -> Self {
        Self {
            k,
            samples,
            schedule: StepSchedule::for_grid_size(k),
            seed,
            fingerprint: [0; 32],
            chunk: 4096,
        }
    }
}

struct StageTrainer<F> {
    dims: usize,
    k: usize,
    points: Vec<F>,
    filled: usize,
    updates: u64,
    index: Option<ProjectionIndex>,
}

impl<F: Scalar> StageTrainer<F> {
    fn new(k: usize, dims: usize) -> Self {
        Self {
            dims,
            k,
            points: Vec::with_capacity(k * dims),
            filled: 0,
            updates: 0,
            index: None,
        }
    }

    fn feed(&mut self, sample: &[F], norm: &WeightedNorm<F>, schedule: &StepSchedule) {
        if self.filled < self.k {
            let seen = self.points.chunks_exact(self.dims).any(|p| p == sample);
            if !seen {
                self.points.extend_from_slice(sample);
                self.filled += 1;
            }
            return;
        }
        let index = self
            .index
            .get_or_insert_with(|| ProjectionIndex::new(&self.points, self.dims, norm));
        let winner = index.nearest(&self.points, sample, norm);
        self.updates += 1;
        let gain = F::lit(schedule.gain(self.updates));
        let y = &mut self.points[winner * self.dims..(winner + 1) * self.dims];
        for (yi, xi) in y.iter_mut().zip(sample) {
            *yi = *yi + gain * (*xi - *yi);
        }
        index.update(winner, y);
    }
}

fn realize_chunk<F: Scalar, C: ChainSource<F>>(source: &C, start: u64, count: usize, buf: &mut Vec<F>) -> Result<()> {
    let width = (source.horizon() + 1) * source.dims();
    buf.clear();
    buf.resize(count * width, F::zero());
    buf.par_chunks_mut(width)
        .enumerate()
        .try_for_each(|(i, out)| source.realize(start + i as u64, out))
}

/// Trains one grid per stage with CLVQ, then counts weights and transitions
/// on a second pass over the same realizations.
///
/// Each stage's grid starts from the first `K` distinct stage samples. Every
/// later sample moves its nearest point (under `norm`) towards itself by the
/// current gain, in unscaled coordinates. Stages are independent and train
/// concurrently; within a stage the updates follow realization order, so
/// the result is reproducible.
pub fn train<F: Scalar, C: ChainSource<F>>(
    source: &C,
    norm: &WeightedNorm<F>,
    opts: &TrainOptions,
) -> Result<QuantizedChain<F>> {
    let dims = source.dims();
    let stages = source.horizon() + 1;
    if opts.k == 0 {
        return Err(Error::Input("K must be at least 1".into()));
    }
    if norm.dims() != dims {
        return Err(Error::Input("norm dimension does not match the chain".into()));
    }
    if opts.samples == 0 {
        return Err(Error::Input("sample budget must be positive".into()));
    }
    let width = stages * dims;
    let chunk = opts.chunk.max(1);
    let mut trainers: Vec<StageTrainer<F>> = (0..stages).map(|_| StageTrainer::new(opts.k, dims)).collect();
    let mut buf = Vec::new();

    let mut start = 0u64;
    while start < opts.samples {
        let count = chunk.min((opts.samples - start) as usize);
        realize_chunk(source, start, count, &mut buf)?;
        trainers.par_iter_mut().enumerate().for_each(|(n, t)| {
            for r in 0..count {
                let off = r * width + n * dims;
                t.feed(&buf[off..off + dims], norm, &opts.schedule);
            }
        });
        start += count as u64;
    }
    if let Some(n) = trainers.iter().position(|t| t.filled < opts.k) {
        return Err(Error::Input(format!(
            "stage {n}: only {} distinct samples for K = {}",
            trainers[n].filled, opts.k
        )));
    }

    let grids: Vec<Grid<F>> = trainers
        .into_iter()
        .enumerate()
        .map(|(n, t)| Grid {
            stage: n,
            dims,
            points: t.points,
            weights: vec![F::zero(); opts.k],
        })
        .collect();

    // Counting pass.
    let index: Vec<ProjectionIndex> = grids
        .iter()
        .map(|g| ProjectionIndex::new(&g.points, dims, norm))
        .collect();
    let mut counts = vec![vec![0u64; opts.k]; stages];
    let mut sq = vec![0.0f64; stages];
    let mut pairs: Vec<HashMap<u64, u64>> = (1..stages).map(|_| HashMap::new()).collect();
    let mut start = 0u64;
    while start < opts.samples {
        let count = chunk.min((opts.samples - start) as usize);
        realize_chunk(source, start, count, &mut buf)?;
        let projected: Vec<Vec<(u32, f64)>> = buf
            .par_chunks(width)
            .map(|real| {
                (0..stages)
                    .map(|n| {
                        let x = &real[n * dims..(n + 1) * dims];
                        let i = index[n].nearest(&grids[n].points, x, norm);
                        (i as u32, norm.distance_sq(grids[n].point(i), x).as_f64())
                    })
                    .collect()
            })
            .collect();
        for path in &projected {
            for (n, &(i, d)) in path.iter().enumerate() {
                counts[n][i as usize] += 1;
                sq[n] += d;
                if n > 0 {
                    let prev = u64::from(path[n - 1].0);
                    *pairs[n - 1].entry((prev << 32) | u64::from(i)).or_insert(0) += 1;
                }
            }
        }
        start += count as u64;
    }

    let total = opts.samples as f64;
    let mut grids = grids;
    for (g, c) in grids.iter_mut().zip(&counts) {
        g.weights = c.iter().map(|&x| F::lit(x as f64 / total)).collect();
    }
    let mut transitions = Vec::with_capacity(stages - 1);
    for (n, map) in pairs.into_iter().enumerate() {
        let mut rows: Vec<Vec<(u32, F)>> = vec![Vec::new(); opts.k];
        for (key, c) in map {
            let (i, j) = ((key >> 32) as usize, (key & 0xFFFF_FFFF) as u32);
            rows[i].push((j, F::lit(c as f64 / counts[n][i] as f64)));
        }
        transitions.push(TransitionMatrix::from_rows(rows, opts.k)?);
    }
    let meta = TrainingMeta {
        seed: opts.seed,
        samples: opts.samples,
        distortion: sq.iter().map(|s| F::lit((s / total).sqrt())).collect(),
        fingerprint: opts.fingerprint,
    };
    QuantizedChain::new(grids, transitions, norm.clone(), meta)
}
