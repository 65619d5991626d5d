use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Piecewise-linear ground profile, constant beyond its end vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terrain<T> {
    xs: Vec<T>,
    heights: Vec<T>,
    pub friction_coefficient: T,
}

impl<T: Scalar> Terrain<T> {
    pub fn flat(friction_coefficient: T) -> Self {
        Terrain {
            xs: vec![T::zero()],
            heights: vec![T::zero()],
            friction_coefficient,
        }
    }

    /// Vertices must have strictly increasing `x`.
    pub fn from_vertices(vertices: Vec<(T, T)>, friction_coefficient: T) -> Self {
        assert!(!vertices.is_empty(), "terrain needs at least one vertex");
        assert!(
            vertices.windows(2).all(|w| w[0].0 < w[1].0),
            "terrain vertices must be strictly increasing in x"
        );
        let (xs, heights) = vertices.into_iter().unzip();
        Terrain {
            xs,
            heights,
            friction_coefficient,
        }
    }

    pub fn vertices(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.xs.iter().copied().zip(self.heights.iter().copied())
    }

    /// Height and slope `dh/dx` at `x`.
    pub fn sample(&self, x: T) -> (T, T) {
        let n = self.xs.len();
        if n == 1 || x <= self.xs[0] {
            return (self.heights[0], T::zero());
        }
        if x >= self.xs[n - 1] {
            return (self.heights[n - 1], T::zero());
        }
        // first vertex strictly right of x
        let i = self.xs.partition_point(|&v| v <= x);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let (h0, h1) = (self.heights[i - 1], self.heights[i]);
        let slope = (h1 - h0) / (x1 - x0);
        (h0 + slope * (x - x0), slope)
    }

    pub fn height(&self, x: T) -> T {
        self.sample(x).0
    }
}
