//! Exact nearest-neighbour search over a grid sorted along one direction.
//!
//! Points are keyed by their projection on a unit vector of the scaled
//! space. Since `|key(x) − key(y)| <= ‖x − y‖`, a scan that walks outwards
//! from the query's key can stop on each side as soon as the key gap alone
//! exceeds the best distance found.

use super::WeightedNorm;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ProjectionIndex {
    dims: usize,
    /// Unit direction, premultiplied by the inverse scales.
    dir: Vec<f64>,
    /// Sorted keys; `keys[s]` belongs to point `order[s]`.
    keys: Vec<f64>,
    /// `Σ |x_i dir_i|` alongside each key, bounding its rounding error.
    mags: Vec<f64>,
    order: Vec<u32>,
    /// Inverse of `order`.
    slot: Vec<u32>,
    /// Relative slack on the stopping test, covering rounding in keys and
    /// distances.
    slack: f64,
}

impl ProjectionIndex {
    pub(crate) fn new<F: Scalar>(points: &[F], dims: usize, norm: &WeightedNorm<F>) -> Self {
        let root = (dims as f64).sqrt();
        let dir = norm.scales().iter().map(|s| 1.0 / (s.as_f64() * root)).collect();
        let n = points.len() / dims;
        let mut idx = Self {
            dims,
            dir,
            keys: Vec::with_capacity(n),
            mags: Vec::with_capacity(n),
            order: (0..n as u32).collect(),
            slot: vec![0; n],
            slack: 64.0 * dims as f64 * F::epsilon().as_f64(),
        };
        let keys: Vec<(f64, f64)> = points.chunks_exact(dims).map(|p| idx.key(p)).collect();
        idx.order
            .sort_by(|a, b| keys[*a as usize].0.total_cmp(&keys[*b as usize].0).then(a.cmp(b)));
        idx.keys = idx.order.iter().map(|&i| keys[i as usize].0).collect();
        idx.mags = idx.order.iter().map(|&i| keys[i as usize].1).collect();
        for (s, &i) in idx.order.iter().enumerate() {
            idx.slot[i as usize] = s as u32;
        }
        idx
    }

    fn key<F: Scalar>(&self, p: &[F]) -> (f64, f64) {
        p.iter().zip(&self.dir).fold((0.0, 0.0), |(k, m), (x, d)| {
            let t = x.as_f64() * d;
            (k + t, m + t.abs())
        })
    }

    /// Index of the point nearest to `q`, lowest index on ties; the same
    /// answer as a full scan.
    pub(crate) fn nearest<F: Scalar>(&self, points: &[F], q: &[F], norm: &WeightedNorm<F>) -> usize {
        let dims = self.dims;
        let n = self.keys.len();
        let (kq, mq) = self.key(q);
        let start = self.keys.partition_point(|k| *k < kq).min(n - 1);
        let mut best = self.order[start] as usize;
        let mut best_d = norm.distance_sq(&points[best * dims..(best + 1) * dims], q);
        let mut lo = start as isize - 1;
        let mut hi = start + 1;
        let stop_at = |s: usize, best_d: F| {
            let g = (self.keys[s] - kq).abs() - self.slack * (mq + self.mags[s]);
            g > 0.0 && g * g > best_d.as_f64() * (1.0 + self.slack)
        };
        let mut lo_open = lo >= 0;
        let mut hi_open = hi < n;
        while lo_open || hi_open {
            let take_lo = match (lo_open, hi_open) {
                (true, true) => kq - self.keys[lo as usize] <= self.keys[hi] - kq,
                (l, _) => l,
            };
            let s = if take_lo { lo as usize } else { hi };
            if stop_at(s, best_d) {
                if take_lo {
                    lo_open = false;
                } else {
                    hi_open = false;
                }
                continue;
            }
            let i = self.order[s] as usize;
            if let Some(d) = norm.distance_sq_upto(&points[i * dims..(i + 1) * dims], q, best_d) {
                if d < best_d || i < best {
                    best = i;
                    best_d = d;
                }
            }
            if take_lo {
                lo -= 1;
                lo_open = lo >= 0;
            } else {
                hi += 1;
                hi_open = hi < n;
            }
        }
        best
    }

    /// Re-keys point `i` after it moved to `p`.
    pub(crate) fn update<F: Scalar>(&mut self, i: usize, p: &[F]) {
        let (k, m) = self.key(p);
        let mut s = self.slot[i] as usize;
        self.keys[s] = k;
        self.mags[s] = m;
        while s > 0 && self.before(s, s - 1) {
            self.swap(s, s - 1);
            s -= 1;
        }
        while s + 1 < self.keys.len() && self.before(s + 1, s) {
            self.swap(s, s + 1);
            s += 1;
        }
    }

    fn before(&self, a: usize, b: usize) -> bool {
        self.keys[a]
            .total_cmp(&self.keys[b])
            .then(self.order[a].cmp(&self.order[b]))
            .is_lt()
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.keys.swap(a, b);
        self.mags.swap(a, b);
        self.order.swap(a, b);
        self.slot[self.order[a] as usize] = a as u32;
        self.slot[self.order[b] as usize] = b as u32;
    }
}
