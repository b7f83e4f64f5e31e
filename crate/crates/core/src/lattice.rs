//! Index sets and sampling grids.
//!
//! Everything in this crate measures distance with the max-norm
//! `|x| = max_i |x_i|`, on `Z^d` and on `R^d` alike.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn max_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_norm_int(k: &[i64]) -> i64 {
    k.iter().map(|v| v.abs()).max().unwrap_or(0)
}

/// Max-norm distance between a point of `R^d` and a lattice node.
pub fn distance_to_node(x: &[f64], k: &[i64]) -> f64 {
    x.iter()
        .zip(k)
        .fold(0.0_f64, |acc, (xi, ki)| acc.max((xi - *ki as f64).abs()))
}

/// The finite index set `{k in Z^d : |k| <= N}`, enumerated lexicographically
/// with the first coordinate most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeWindow {
    dim: usize,
    radius: usize,
}

impl LatticeWindow {
    pub fn new(dim: usize, radius: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self { dim, radius })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Number of indices, `(2N+1)^d`.
    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        k.len() == self.dim && max_norm_int(k) <= self.radius as i64
    }

    /// Lattice index at enumeration position `pos`.
    pub fn index(&self, pos: usize) -> Vec<i64> {
        let side = self.side();
        let mut k = vec![0i64; self.dim];
        let mut rest = pos;
        for slot in k.iter_mut().rev() {
            *slot = (rest % side) as i64 - self.radius as i64;
            rest /= side;
        }
        k
    }

    /// Enumeration position of `k`, if it lies in the window.
    pub fn position(&self, k: &[i64]) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let side = self.side();
        Some(
            k.iter()
                .fold(0usize, |acc, &v| acc * side + (v + self.radius as i64) as usize),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len()).map(move |p| self.index(p))
    }

    /// Positions, inside `self`, of the sub-window of radius `r`, listed in
    /// the sub-window's own enumeration order.
    pub fn sub_positions(&self, r: usize) -> Vec<usize> {
        let sub = LatticeWindow {
            dim: self.dim,
            radius: r.min(self.radius),
        };
        sub.iter()
            .map(|k| self.position(&k).expect("sub-window is nested"))
            .collect()
    }
}

/// Uniform sampling grid `{h m : m in Z^d, |h m| <= R}` used for midpoint
/// quadrature; each point carries the weight `h^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    spacing: f64,
    extent: f64,
    dim: usize,
    half: usize,
}

impl Grid {
    /// Coarsest admissible spacing; unit-lattice bumps need a few samples per cell.
    pub const MAX_SPACING: f64 = 0.25;

    pub fn new(spacing: f64, extent: f64, dim: usize) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) || spacing > Self::MAX_SPACING {
            return Err(Error::InvalidParameter(format!(
                "grid spacing {spacing} must lie in (0, {}]",
                Self::MAX_SPACING
            )));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid extent {extent} must be positive"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        // Tolerate R/h landing a hair below an integer.
        let half = (extent / spacing + 1e-9).floor() as usize;
        Ok(Self {
            spacing,
            extent,
            dim,
            half,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points per axis.
    pub fn per_axis(&self) -> usize {
        2 * self.half + 1
    }

    pub fn len(&self) -> usize {
        self.per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of a single point.
    pub fn weight(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Coordinates along one axis.
    pub fn axis(&self) -> Vec<f64> {
        (0..self.per_axis())
            .map(|i| (i as f64 - self.half as f64) * self.spacing)
            .collect()
    }

    /// Writes the coordinates of point `idx` into `out`.
    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let side = self.per_axis();
        let mut rest = idx;
        for slot in out.iter_mut().rev() {
            *slot = ((rest % side) as f64 - self.half as f64) * self.spacing;
            rest /= side;
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.point_into(idx, &mut x);
        x
    }

    /// True when the cube of max-norm radius `radius` around `center` lies in the grid.
    pub fn covers(&self, center: &[f64], radius: f64) -> bool {
        max_norm(center) + radius <= self.extent + 1e-12
    }
}
