//! Optimal quantization of the embedded chain `(Z_n, S_n)`.
//!
//! Every stage `n = 0..=N` gets its own grid of `K` points trained by
//! competitive learning (CLVQ) under a weighted Euclidean norm, together
//! with empirical weights and the stage-to-stage transition matrices that
//! turn conditional expectations into finite weighted sums.

mod clvq;
pub mod io;
mod search;

use crate::error::{Error, Result};
use crate::pdmp::PdmpModel;
use crate::scalar::Scalar;
use search::ProjectionIndex;

pub use clvq::{stage_samples, train, ChainSource, SimulatedChain, StepSchedule, TrainOptions};

/// Scale of a discrete mode coordinate, relative to unit label spacing.
pub const MODE_SCALE: f64 = 1e-3;
/// Smallest scale a coordinate can receive.
pub const SCALE_FLOOR: f64 = 1e-12;

/// How a model's post-jump state and inter-jump time are laid out as a
/// point of `R^dims`. The inter-jump time is always the last coordinate.
pub trait ChainEmbedding<F: Scalar>: PdmpModel<F> {
    fn dims(&self) -> usize;

    fn embed(&self, z: &Self::State, inter_jump: F, out: &mut [F]);

    /// Model state represented by a grid point.
    fn restore(&self, point: &[F]) -> Self::State;

    /// Coordinates holding discrete mode labels.
    fn mode_coordinates(&self) -> &[usize] {
        &[]
    }
}

/// `‖x − y‖² = Σ ((x_i − y_i) / scale_i)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNorm<F> {
    scales: Vec<F>,
    inv_sq: Vec<F>,
}

impl<F: Scalar> WeightedNorm<F> {
    pub fn new(scales: Vec<F>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Input("norm needs at least one coordinate".into()));
        }
        if scales.iter().any(|s| !(s.is_finite() && *s > F::zero())) {
            return Err(Error::Input("norm scales must be positive and finite".into()));
        }
        let inv_sq = scales.iter().map(|s| F::one() / (*s * *s)).collect();
        Ok(Self { scales, inv_sq })
    }

    /// Plain Euclidean norm.
    pub fn unit(dims: usize) -> Self {
        Self::new(vec![F::one(); dims]).expect("unit scales")
    }

    pub fn scales(&self) -> &[F] {
        &self.scales
    }

    pub fn dims(&self) -> usize {
        self.scales.len()
    }

    #[inline]
    pub fn distance_sq(&self, x: &[F], y: &[F]) -> F {
        let mut acc = F::zero();
        for ((a, b), w) in x.iter().zip(y).zip(&self.inv_sq) {
            let d = *a - *b;
            acc = acc + d * d * *w;
        }
        acc
    }

    /// Same sum as [`distance_sq`](Self::distance_sq), abandoned once it
    /// exceeds `bound`.
    #[inline]
    pub(crate) fn distance_sq_upto(&self, x: &[F], y: &[F], bound: F) -> Option<F> {
        let mut acc = F::zero();
        for ((a, b), w) in x.iter().zip(y).zip(&self.inv_sq) {
            let d = *a - *b;
            acc = acc + d * d * *w;
            if acc > bound {
                return None;
            }
        }
        Some(acc)
    }

    /// Same sum as [`distance_sq`](Self::distance_sq), abandoned as soon as
    /// it reaches `bound`.
    #[inline]
    fn distance_sq_below(&self, x: &[F], y: &[F], bound: F) -> Option<F> {
        let mut acc = F::zero();
        for ((a, b), w) in x.iter().zip(y).zip(&self.inv_sq) {
            let d = *a - *b;
            acc = acc + d * d * *w;
            if acc >= bound {
                return None;
            }
        }
        Some(acc)
    }
}

/// A flat collection of points of equal dimension, one stage's samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageSamples<F> {
    pub dims: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> StageSamples<F> {
    pub fn new(dims: usize) -> Self {
        Self { dims, data: Vec::new() }
    }

    pub fn from_points(dims: usize, points: &[Vec<F>]) -> Self {
        let mut s = Self::new(dims);
        for p in points {
            s.push(p);
        }
        s
    }

    pub fn push(&mut self, p: &[F]) {
        debug_assert_eq!(p.len(), self.dims);
        self.data.extend_from_slice(p);
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dims).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks_exact(self.dims.max(1))
    }
}

/// Stage-`n` quantization grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<F> {
    pub stage: usize,
    pub dims: usize,
    /// `K × dims`, row-major.
    pub points: Vec<F>,
    pub weights: Vec<F>,
}

impl<F: Scalar> Grid<F> {
    pub fn new(stage: usize, dims: usize, points: Vec<F>, weights: Vec<F>) -> Result<Self> {
        if dims == 0 || points.is_empty() || !points.len().is_multiple_of(dims) {
            return Err(Error::Input(
                "grid needs at least one point of matching dimension".into(),
            ));
        }
        if weights.len() != points.len() / dims {
            return Err(Error::Input("one weight per grid point required".into()));
        }
        Ok(Self {
            stage,
            dims,
            points,
            weights,
        })
    }

    /// Grid with uniform weights.
    pub fn from_points(stage: usize, points: &[Vec<F>]) -> Result<Self> {
        let dims = points.first().map_or(0, Vec::len);
        let k = points.len();
        let flat = points.iter().flat_map(|p| p.iter().copied()).collect();
        let w = if k == 0 { F::zero() } else { F::one() / F::lit(k as f64) };
        Self::new(stage, dims, flat, vec![w; k])
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[F] {
        &self.points[i * self.dims..(i + 1) * self.dims]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[F]> {
        self.points.chunks_exact(self.dims)
    }
}

/// Index of the grid point nearest to `point` under `norm`, lowest index on
/// ties.
pub fn nearest<F: Scalar>(grid: &Grid<F>, point: &[F], norm: &WeightedNorm<F>) -> usize {
    assert_eq!(point.len(), grid.dims, "point dimension does not match grid");
    nearest_flat(&grid.points, grid.dims, point, norm)
}

/// Linear scan with partial-distance pruning. Candidates are only accepted
/// on a strictly smaller distance, which keeps the lowest index on ties and
/// returns exactly the plain argmin.
pub(crate) fn nearest_flat<F: Scalar>(points: &[F], dims: usize, point: &[F], norm: &WeightedNorm<F>) -> usize {
    let mut best = 0;
    let mut best_d = norm.distance_sq(&points[..dims], point);
    for (i, p) in points.chunks_exact(dims).enumerate().skip(1) {
        if let Some(d) = norm.distance_sq_below(p, point, best_d) {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Root mean squared weighted distance from each sample to its projection.
pub fn distortion<F: Scalar>(grid: &Grid<F>, norm: &WeightedNorm<F>, samples: &StageSamples<F>) -> F {
    let n = samples.len();
    if n == 0 {
        return F::zero();
    }
    let total: f64 = samples
        .iter()
        .map(|s| norm.distance_sq(grid.point(nearest(grid, s, norm)), s).as_f64())
        .sum();
    F::lit((total / n as f64).sqrt())
}

/// Per-coordinate scales from pilot samples: pooled within-stage standard
/// deviation, floored at [`SCALE_FLOOR`]. Mode coordinates get
/// [`MODE_SCALE`] so that points of different modes never compete.
pub fn estimate_scales<F: Scalar>(pilot: &[StageSamples<F>], mode_coords: &[usize]) -> Result<WeightedNorm<F>> {
    let total: usize = pilot.iter().map(StageSamples::len).sum();
    if pilot.is_empty() || total == 0 {
        return Err(Error::Input("empty pilot sample set".into()));
    }
    let dims = pilot[0].dims;
    if pilot.iter().any(|s| s.dims != dims) {
        return Err(Error::Input("pilot stages disagree on dimension".into()));
    }
    if let Some((n, _)) = pilot.iter().enumerate().find(|(_, s)| s.len() < 100) {
        return Err(Error::Input(format!("stage {n} has fewer than 100 pilot samples")));
    }
    let mut ss = vec![0.0f64; dims];
    let mut dof = 0usize;
    for stage in pilot {
        let n = stage.len();
        let mut mean = vec![0.0f64; dims];
        for p in stage.iter() {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        for p in stage.iter() {
            for ((acc, m), x) in ss.iter_mut().zip(&mean).zip(p) {
                let d = x.as_f64() - m;
                *acc += d * d;
            }
        }
        dof += n - 1;
    }
    let scales = (0..dims)
        .map(|i| {
            if mode_coords.contains(&i) {
                F::lit(MODE_SCALE)
            } else {
                F::lit((ss[i] / dof as f64).sqrt().max(SCALE_FLOOR))
            }
        })
        .collect();
    WeightedNorm::new(scales)
}

/// Sparse row-stochastic matrix, rows sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<F> {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<F>,
    /// Rows never visited on the counting pass, replaced by uniform rows.
    flagged: Vec<bool>,
    ncols: usize,
}

impl<F: Scalar> TransitionMatrix<F> {
    /// Builds from per-row `(column, probability)` lists. Rows are sorted by
    /// column; empty rows become uniform and are flagged.
    pub fn from_rows(rows: Vec<Vec<(u32, F)>>, ncols: usize) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        let mut flagged = Vec::with_capacity(rows.len());
        row_ptr.push(0);
        for mut row in rows {
            if row.is_empty() {
                let u = F::one() / F::lit(ncols as f64);
                cols.extend(0..ncols as u32);
                probs.extend(std::iter::repeat_n(u, ncols));
                flagged.push(true);
            } else {
                row.sort_by_key(|e| e.0);
                if row.windows(2).any(|w| w[0].0 == w[1].0) || row.iter().any(|e| e.0 as usize >= ncols) {
                    return Err(Error::Input(
                        "transition row has duplicate or out-of-range columns".into(),
                    ));
                }
                for (c, p) in row {
                    cols.push(c);
                    probs.push(p);
                }
                flagged.push(false);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            row_ptr,
            cols,
            probs,
            flagged,
            ncols,
        })
    }

    /// Dense constructor, mostly for tests and hand-built chains. Zero
    /// entries are dropped.
    pub fn from_dense(rows: &[Vec<F>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let sparse = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, p)| **p != F::zero())
                    .map(|(j, p)| (j as u32, *p))
                    .collect()
            })
            .collect();
        Self::from_rows(sparse, ncols)
    }

    pub(crate) fn from_parts(
        row_ptr: Vec<usize>,
        cols: Vec<u32>,
        probs: Vec<F>,
        flagged: Vec<bool>,
        ncols: usize,
    ) -> Self {
        Self {
            row_ptr,
            cols,
            probs,
            flagged,
            ncols,
        }
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Column indices and probabilities of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[F]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.probs[a..b])
    }

    pub fn is_flagged(&self, i: usize) -> bool {
        self.flagged[i]
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn dense_row(&self, i: usize) -> Vec<F> {
        let mut out = vec![F::zero(); self.ncols];
        let (c, p) = self.row(i);
        for (j, v) in c.iter().zip(p) {
            out[*j as usize] = *v;
        }
        out
    }
}

/// Metadata recorded while training a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta<F> {
    pub seed: u64,
    /// Realizations used by each of the training and counting passes.
    pub samples: u64,
    /// Per-stage distortion measured on the counting pass.
    pub distortion: Vec<F>,
    /// Caller-supplied binding to the configuration that produced the chain.
    pub fingerprint: [u8; 32],
}

/// `N + 1` grids with their weights and the `N` transition matrices;
/// `transitions[n - 1]` maps stage `n − 1` to stage `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedChain<F> {
    pub grids: Vec<Grid<F>>,
    pub transitions: Vec<TransitionMatrix<F>>,
    pub norm: WeightedNorm<F>,
    pub meta: TrainingMeta<F>,
    index: Vec<ProjectionIndex>,
}

impl<F: Scalar> QuantizedChain<F> {
    pub fn new(
        grids: Vec<Grid<F>>,
        transitions: Vec<TransitionMatrix<F>>,
        norm: WeightedNorm<F>,
        meta: TrainingMeta<F>,
    ) -> Result<Self> {
        if grids.is_empty() || transitions.len() + 1 != grids.len() {
            return Err(Error::Input("need N + 1 grids and N transition matrices".into()));
        }
        for (n, p) in transitions.iter().enumerate() {
            if p.nrows() != grids[n].len() || p.ncols() != grids[n + 1].len() {
                return Err(Error::Input(format!("transition {} has the wrong shape", n + 1)));
            }
        }
        if grids.iter().any(|g| g.dims != norm.dims()) {
            return Err(Error::Input("grid dimension does not match the norm".into()));
        }
        let index = grids
            .iter()
            .map(|g| ProjectionIndex::new(&g.points, g.dims, &norm))
            .collect();
        Ok(Self {
            grids,
            transitions,
            norm,
            meta,
            index,
        })
    }

    /// Horizon `N`.
    pub fn horizon(&self) -> usize {
        self.grids.len() - 1
    }

    /// Points per grid (grid 0's size; all grids share it after training).
    pub fn k(&self) -> usize {
        self.grids[0].len()
    }

    pub fn dims(&self) -> usize {
        self.norm.dims()
    }

    /// Transition matrix from stage `n − 1` to stage `n`, `n >= 1`.
    pub fn transition(&self, n: usize) -> &TransitionMatrix<F> {
        &self.transitions[n - 1]
    }

    pub fn project(&self, stage: usize, point: &[F]) -> usize {
        assert_eq!(point.len(), self.dims(), "point dimension does not match grid");
        self.index[stage].nearest(&self.grids[stage].points, point, &self.norm)
    }

    pub fn flagged_rows(&self) -> usize {
        self.transitions.iter().map(TransitionMatrix::flagged_count).sum()
    }
}
