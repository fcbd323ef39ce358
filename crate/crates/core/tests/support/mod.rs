//! Oracles shared by the integration tests: a toy PDMP with a hand-built
//! quantized chain and a brute-force evaluator of the backward recursion
//! written without any solver code, trajectory splicing, exhaustive
//! quantizers and goodness-of-fit statistics.

#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use pdmpq::quantizer::{nearest, Grid, QuantizedChain, StageSamples, TrainingMeta, TransitionMatrix, WeightedNorm};
use pdmpq::{
    simulate, substream, Chain, ChainEmbedding, ChainSource, HybridState, JumpRecord, PdmpModel, Result, Reward,
    RewardFunction, Trajectory,
};
use rand::Rng;

/// Position `x` drifting at speed `mode` up to `bound`; mode 0 is absorbing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyState {
    pub mode: u32,
    pub x: f64,
}

pub struct Toy {
    pub bound: f64,
}

impl Toy {
    pub fn tstar(&self, mode: u32, x: f64) -> f64 {
        if mode == 0 {
            f64::INFINITY
        } else {
            (self.bound - x) / mode as f64
        }
    }
}

impl PdmpModel<f64> for Toy {
    type State = ToyState;

    fn flow(&self, z: &ToyState, t: f64) -> ToyState {
        ToyState {
            mode: z.mode,
            x: z.x + z.mode as f64 * t,
        }
    }

    fn intensity(&self, z: &ToyState) -> f64 {
        if z.mode == 0 {
            0.0
        } else {
            0.5
        }
    }

    fn intensity_constant_along_flow(&self) -> bool {
        true
    }

    fn boundary_time(&self, z: &ToyState) -> f64 {
        self.tstar(z.mode, z.x)
    }

    fn jump<R: Rng + ?Sized>(&self, pre: &ToyState, _rng: &mut R) -> ToyState {
        if pre.x >= self.bound {
            ToyState { mode: 0, x: self.bound }
        } else {
            ToyState {
                mode: 3 - pre.mode,
                x: pre.x,
            }
        }
    }

    fn is_finite(&self, z: &ToyState) -> bool {
        z.x.is_finite()
    }

    fn to_hybrid(&self, z: &ToyState) -> HybridState<f64> {
        HybridState {
            mode: z.mode,
            position: vec![z.x],
        }
    }
}

impl ChainEmbedding<f64> for Toy {
    fn dims(&self) -> usize {
        3
    }

    fn embed(&self, z: &ToyState, s: f64, out: &mut [f64]) {
        out.copy_from_slice(&[z.mode as f64, z.x, s]);
    }

    fn restore(&self, p: &[f64]) -> ToyState {
        ToyState {
            mode: p[0].round() as u32,
            x: p[1],
        }
    }

    fn mode_coordinates(&self) -> &[usize] {
        &[0]
    }
}

pub struct ToyReward(pub RewardFunction<f64>);

impl Reward<f64, ToyState> for ToyReward {
    fn reward(&self, z: &ToyState) -> f64 {
        self.0.eval(z.x)
    }
}

/// Points are `[mode, x, s]`; `trans[n]` maps grid `n` to grid `n + 1`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub bound: f64,
    pub grids: Vec<Vec<[f64; 3]>>,
    pub weights: Vec<Vec<f64>>,
    pub trans: Vec<Vec<Vec<f64>>>,
    pub knots: Vec<(f64, f64)>,
    pub beyond: f64,
    pub target_points: usize,
}

impl Instance {
    pub fn horizon(&self) -> usize {
        self.grids.len() - 1
    }

    pub fn model(&self) -> Toy {
        Toy { bound: self.bound }
    }

    pub fn reward(&self) -> ToyReward {
        ToyReward(RewardFunction::new(self.knots.clone(), self.beyond).unwrap())
    }

    pub fn chain(&self) -> QuantizedChain<f64> {
        let grids = self
            .grids
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(n, (g, w))| Grid::new(n, 3, g.iter().flatten().copied().collect(), w.clone()).unwrap())
            .collect();
        let transitions = self
            .trans
            .iter()
            .map(|p| TransitionMatrix::from_dense(p).unwrap())
            .collect();
        let meta = TrainingMeta {
            seed: 0,
            samples: 0,
            distortion: vec![0.0; self.grids.len()],
            fingerprint: [0; 32],
        };
        QuantizedChain::new(grids, transitions, WeightedNorm::unit(3), meta).unwrap()
    }

    fn g(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        if x > k[k.len() - 1].0 {
            return self.beyond;
        }
        for w in k.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        unreachable!()
    }

    /// Step used by the instance: smallest boundary time over the
    /// non-absorbing points of grids `0..N`, over `target_points + 2`.
    pub fn step(&self) -> f64 {
        let t = self.grids[..self.horizon()]
            .iter()
            .flatten()
            .map(|p| self.model().tstar(p[0] as u32, p[1]))
            .fold(f64::INFINITY, f64::min);
        t / (self.target_points as f64 + 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    /// `values[n][i]` at point `i` of grid `n`, `n = 0..=N`.
    pub values: Vec<Vec<f64>>,
    /// Chosen intervention time at point `i` of grid `n − 1` for stage `n`,
    /// stored at `stops[n - 1][i]`.
    pub stops: Vec<Vec<Option<f64>>>,
    /// `|best J − E[w]|` and `|best J − second best J|`, aligned with `stops`.
    /// Decisions are only determined when both exceed rounding noise.
    pub margins: Vec<Vec<f64>>,
    pub v0: f64,
}

/// Enumerates every candidate time and every transition for every point.
pub fn brute_force(inst: &Instance, step: f64) -> BruteForce {
    let n_max = inst.horizon();
    let mut values = vec![Vec::new(); n_max + 1];
    let mut stops = vec![Vec::new(); n_max];
    let mut margins = vec![Vec::new(); n_max];
    values[n_max] = inst.grids[n_max].iter().map(|p| inst.g(p[1])).collect();
    for n in (1..=n_max).rev() {
        let next = &inst.grids[n];
        let w = values[n].clone();
        let mut here = Vec::new();
        let mut here_stop = Vec::new();
        let mut here_margin = Vec::new();
        for (i, p) in inst.grids[n - 1].iter().enumerate() {
            let row = &inst.trans[n - 1][i];
            let cont: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mode = p[0] as u32;
            if mode == 0 {
                here.push(cont);
                here_stop.push(None);
                here_margin.push(f64::INFINITY);
                continue;
            }
            let tstar = inst.model().tstar(mode, p[1]);
            let mut best: Option<(f64, f64)> = None;
            let mut js = Vec::new();
            let mut k = 1usize;
            loop {
                let u = k as f64 * step;
                if !(u < tstar - step) {
                    break;
                }
                let stop_value = inst.g(p[1] + mode as f64 * u);
                let j: f64 = row
                    .iter()
                    .zip(next)
                    .zip(&w)
                    .map(|((pr, q), wj)| if q[2] < u { pr * wj } else { pr * stop_value })
                    .sum();
                js.push(j);
                if best.is_none_or(|(bj, _)| j > bj) {
                    best = Some((j, u));
                }
                k += 1;
            }
            let mut margin = best.map_or(f64::INFINITY, |(bj, _)| (bj - cont).abs());
            if let Some((bj, bu)) = best {
                if bj > cont {
                    for (idx, j) in js.iter().enumerate() {
                        if (idx + 1) as f64 * step != bu {
                            margin = margin.min((bj - j).abs());
                        }
                    }
                }
            }
            here_margin.push(margin);
            match best {
                Some((bj, u)) if bj > cont => {
                    here.push(bj);
                    here_stop.push(Some(u));
                }
                _ => {
                    here.push(cont);
                    here_stop.push(None);
                }
            }
        }
        values[n - 1] = here;
        stops[n - 1] = here_stop;
        margins[n - 1] = here_margin;
    }
    let v0 = inst.weights[0].iter().zip(&values[0]).map(|(a, b)| a * b).sum();
    BruteForce {
        values,
        stops,
        margins,
        v0,
    }
}

/// Random instance with `K <= 3`, `N <= 3` and short time grids. Some
/// inter-jump coordinates sit exactly on time-grid points.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let k = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=3);
    let bound = 10.0;
    let target_points = rng.gen_range(1..=3);
    let mut grids: Vec<Vec<[f64; 3]>> = (0..=n)
        .map(|_| {
            (0..k)
                .map(|_| {
                    let mode = if rng.gen_bool(0.15) {
                        0.0
                    } else {
                        rng.gen_range(1..=2) as f64
                    };
                    let x = if mode == 0.0 { bound } else { rng.gen_range(4.0..8.0) };
                    [mode, x, 0.0]
                })
                .collect()
        })
        .collect();
    if grids[..n].iter().flatten().all(|p| p[0] == 0.0) {
        grids[0][0] = [1.0, 5.0, 0.0];
    }
    let mut inst = Instance {
        bound,
        grids,
        weights: Vec::new(),
        trans: Vec::new(),
        knots: Vec::new(),
        beyond: rng.gen_range(0.0..1.0),
        target_points,
    };
    let step = inst.step();
    for g in inst.grids.iter_mut().skip(1) {
        for p in g.iter_mut() {
            p[2] = if rng.gen_bool(0.3) {
                rng.gen_range(1..=6) as f64 * step
            } else {
                rng.gen_range(0.0..7.0 * step)
            };
        }
    }
    inst.weights = (0..=n).map(|_| normalized(rng, k, false)).collect();
    inst.trans = (0..n)
        .map(|_| (0..k).map(|_| normalized(rng, k, true)).collect())
        .collect();
    let m = rng.gen_range(1..=5);
    let mut xs: Vec<f64> = (0..m).map(|_| rng.gen_range(3.0..bound + 1.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    inst.knots = xs.into_iter().map(|x| (x, rng.gen_range(0.0..5.0))).collect();
    inst
}

fn normalized<R: Rng>(rng: &mut R, k: usize, sparse: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| {
            if sparse && rng.gen_bool(0.3) {
                0.0
            } else {
                rng.gen_range(0.05..1.0)
            }
        })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Keeps `trajectory` up to time `at` and redraws everything after it: the
/// process restarts from the flowed state at `at` on a fresh stream.
pub fn splice<M, R>(
    model: &M,
    trajectory: &Trajectory<f64, M::State>,
    at: f64,
    rng: &mut R,
) -> Trajectory<f64, M::State>
where
    M: PdmpModel<f64>,
    R: Rng,
{
    let k = trajectory.jumps.partition_point(|j| j.time <= at);
    let horizon = trajectory.horizon;
    if k == horizon || (trajectory.absorbed && k == trajectory.jumps.len()) {
        return trajectory.clone();
    }
    let start = trajectory.jump_time(k).unwrap();
    let origin = trajectory.post_jump_state(k).unwrap();
    let fresh = simulate(model, model.flow(origin, at - start), horizon - k, rng).unwrap();
    let mut jumps = trajectory.jumps[..k].to_vec();
    for (i, j) in fresh.jumps.into_iter().enumerate() {
        jumps.push(JumpRecord {
            index: k + j.index,
            time: at + j.time,
            inter_jump: if i == 0 {
                at - start + j.inter_jump
            } else {
                j.inter_jump
            },
            ..j
        });
    }
    Trajectory {
        initial: trajectory.initial.clone(),
        jumps,
        horizon,
        absorbed: fresh.absorbed,
    }
}

/// Kolmogorov–Smirnov distance between a sample and a continuous law.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Independent uniform points on a box, two stages.
pub struct UniformBox {
    pub hi: Vec<f64>,
    pub seed: u64,
}

impl ChainSource<f64> for UniformBox {
    fn dims(&self) -> usize {
        self.hi.len()
    }

    fn horizon(&self) -> usize {
        1
    }

    fn realize(&self, index: u64, out: &mut [f64]) -> Result<()> {
        let mut rng = substream(self.seed, index);
        for (i, x) in out.iter_mut().enumerate() {
            *x = rng.gen::<f64>() * self.hi[i % self.hi.len()];
        }
        Ok(())
    }
}

/// Minimizes the empirical two-point distortion over all pairs on a mesh,
/// using prefix sums over the sorted sample.
pub fn exhaustive_two_point(samples: &[f64], mesh: f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let mut s1 = vec![0.0];
    let mut s2 = vec![0.0];
    for x in &xs {
        s1.push(s1.last().unwrap() + x);
        s2.push(s2.last().unwrap() + x * x);
    }
    let n = xs.len();
    // Σ (x − c)² over xs[i..j].
    let cost = |i: usize, j: usize, c: f64| (s2[j] - s2[i]) - 2.0 * c * (s1[j] - s1[i]) + c * c * (j - i) as f64;
    let steps = (1.0 / mesh).round() as usize;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for ia in 0..=steps {
        for ib in ia + 1..=steps {
            let (a, b) = (ia as f64 * mesh, ib as f64 * mesh);
            let cut = xs.partition_point(|x| *x < 0.5 * (a + b));
            let d = cost(0, cut, a) + cost(cut, n, b);
            if d < best.0 {
                best = (d, a, b);
            }
        }
    }
    (best.1, best.2)
}

/// Per-axis mean squared quantization error over the axis variance.
pub fn axis_distortion(chain: &Chain, norm: &WeightedNorm<f64>, test: &StageSamples<f64>, hi: &[f64]) -> Vec<f64> {
    let grid = &chain.grids[0];
    let mut acc = vec![0.0; hi.len()];
    for x in test.iter() {
        let q = grid.point(nearest(grid, x, norm));
        for (a, (xi, qi)) in acc.iter_mut().zip(x.iter().zip(q)) {
            *a += (xi - qi).powi(2);
        }
    }
    acc.iter()
        .zip(hi)
        .map(|(a, h)| a / test.len() as f64 / (h * h / 12.0))
        .collect()
}
