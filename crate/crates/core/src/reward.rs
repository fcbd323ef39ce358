//! Terminal rewards collected at the stopping time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reward attached to stopping in a given state.
pub trait Reward<F, S>: Sync {
    fn reward(&self, state: &S) -> F;
}

/// Continuous piecewise-affine function given by its knots.
///
/// Below the first knot the first value is held; past the last knot the
/// function jumps to `beyond`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFunction<F> {
    knots: Vec<(F, F)>,
    beyond: F,
}

impl<F: Scalar> RewardFunction<F> {
    pub fn new(knots: Vec<(F, F)>, beyond: F) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Input("reward needs at least one knot".into()));
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) || !beyond.is_finite() {
            return Err(Error::Input("reward knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Input("reward knot abscissae must be strictly increasing".into()));
        }
        Ok(Self { knots, beyond })
    }

    /// Knots (0, 0), (0.15, 1), (0.18, 4), (0.20, 1), (0.25, 0) in mm, zero beyond.
    pub fn corrosion_default() -> Self {
        let k = |x: f64, y: f64| (F::lit(x), F::lit(y));
        Self {
            knots: vec![k(0.0, 0.0), k(0.15, 1.0), k(0.18, 4.0), k(0.20, 1.0), k(0.25, 0.0)],
            beyond: F::zero(),
        }
    }

    pub fn knots(&self) -> &[(F, F)] {
        &self.knots
    }

    pub fn beyond(&self) -> F {
        self.beyond
    }

    pub fn eval(&self, x: F) -> F {
        let first = self.knots[0];
        if x <= first.0 {
            return first.1;
        }
        let last = self.knots[self.knots.len() - 1];
        if x > last.0 {
            return self.beyond;
        }
        if x == last.0 {
            return last.1;
        }
        // First knot strictly to the right of x; x lies in [k-1, k).
        let k = self.knots.partition_point(|(kx, _)| *kx <= x);
        let (x0, y0) = self.knots[k - 1];
        let (x1, y1) = self.knots[k];
        if x == x0 {
            return y0;
        }
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn max_value(&self) -> F {
        self.knots.iter().map(|k| k.1).fold(self.beyond, F::max)
    }

    pub fn min_value(&self) -> F {
        self.knots.iter().map(|k| k.1).fold(self.beyond, F::min)
    }
}
