//! Trajectories on the level-`l` grid over `[0, T]`.

use crate::error::{Error, Result};
use crate::steps_per_unit;

/// One trajectory at level `l`: grid states `x_0, x_Δ, …, x_T`.
///
/// Block `u_t` (`t` in `1..=T`) is the `2^l` states `x_{t−1+Δ}, …, x_t`. The
/// starting point is stored at grid index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    level: u32,
    dim: usize,
    horizon: usize,
    states: Vec<f64>,
}

impl LatticePath {
    pub fn new(level: u32, dim: usize, horizon: usize, states: Vec<f64>) -> Result<Self> {
        let want = (horizon * steps_per_unit(level) + 1) * dim;
        if dim == 0 || horizon == 0 || states.len() != want {
            return Err(Error::precondition(format!(
                "lattice path at level {level} with T = {horizon}, d = {dim} needs {want} values, got {}",
                states.len()
            )));
        }
        Ok(LatticePath {
            level,
            dim,
            horizon,
            states,
        })
    }

    /// Constant path sitting at `x`.
    pub fn constant(level: u32, horizon: usize, x: &[f64]) -> Self {
        let n = horizon * steps_per_unit(level) + 1;
        let states = x.iter().copied().cycle().take(n * x.len()).collect();
        LatticePath {
            level,
            dim: x.len(),
            horizon,
            states,
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of grid steps `T·2^l`.
    pub fn steps(&self) -> usize {
        self.horizon * steps_per_unit(self.level)
    }

    /// Grid state `k`, `k` in `0..=steps()`.
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// State at unit time `t`.
    pub fn at_time(&self, t: usize) -> &[f64] {
        self.state(t * steps_per_unit(self.level))
    }

    /// Block `u_t`, `t` in `1..=T`.
    pub fn block(&self, t: usize) -> &[f64] {
        let s = steps_per_unit(self.level);
        &self.states[((t - 1) * s + 1) * self.dim..(t * s + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.states
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().all(|v| v.is_finite())
    }

    /// The path sampled on the level-`coarse` grid, `coarse <= level`.
    pub fn restrict(&self, coarse: u32) -> LatticePath {
        assert!(coarse <= self.level);
        let stride = 1usize << (self.level - coarse);
        let n = self.horizon * steps_per_unit(coarse) + 1;
        let mut states = Vec::with_capacity(n * self.dim);
        for k in 0..n {
            states.extend_from_slice(self.state(k * stride));
        }
        LatticePath {
            level: coarse,
            dim: self.dim,
            horizon: self.horizon,
            states,
        }
    }
}

/// A fine path at level `l` and a coarse path at level `l − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPath {
    pub fine: LatticePath,
    pub coarse: LatticePath,
}

impl CoupledPath {
    pub fn new(fine: LatticePath, coarse: LatticePath) -> Result<Self> {
        if fine.level == 0 || coarse.level + 1 != fine.level || fine.horizon != coarse.horizon {
            return Err(Error::precondition(format!(
                "coupled path needs levels (l, l-1) and equal horizons, got ({}, {}) and T = ({}, {})",
                fine.level, coarse.level, fine.horizon, coarse.horizon
            )));
        }
        Ok(CoupledPath { fine, coarse })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_the_grid() {
        let states: Vec<f64> = (0..=8).map(|k| k as f64).collect();
        let p = LatticePath::new(2, 1, 2, states).unwrap();
        assert_eq!(p.block(1), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.block(2), &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(p.at_time(2), &[8.0]);
        assert_eq!(p.restrict(1).values(), &[0.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(LatticePath::new(1, 1, 2, vec![0.0; 4]).is_err());
        let f = LatticePath::constant(2, 3, &[0.0]);
        let c = LatticePath::constant(2, 3, &[0.0]);
        assert!(CoupledPath::new(f, c).is_err());
    }
}
