use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};

/// Uniform grid `t_i = i·dt`, `i = 0..=n_steps`, on `[0, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_max: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_steps: usize) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(argument(format!("grid horizon must be positive, got {t_max}")));
        }
        if n_steps == 0 {
            return Err(argument("grid needs at least one step"));
        }
        Ok(Self { t_max, n_steps })
    }

    /// Grid with spacing `dt` covering `[0, t_max]`; `t_max/dt` must be an integer.
    pub fn with_spacing(t_max: f64, dt: f64) -> Result<Self> {
        let steps = aligned_steps(t_max, dt)
            .ok_or_else(|| argument(format!("horizon {t_max} is not a multiple of dt = {dt}")))?;
        Self::new(t_max, steps)
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_steps as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_max
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|i| self.t(i))
    }

    /// Index of `t` when it lies on the grid (relative tolerance 1e-9 of dt).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let i = x.round();
        if (x - i).abs() <= 1e-9 && i >= 0.0 && i as usize <= self.n_steps {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Grid with `factor` times as many steps over the same horizon.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            t_max: self.t_max,
            n_steps: self.n_steps * factor.max(1),
        }
    }
}

/// `Some(n)` when `len / dt` is within 1e-9 of the positive integer `n`.
pub fn aligned_steps(len: f64, dt: f64) -> Option<usize> {
    if !(dt > 0.0 && len > 0.0 && dt.is_finite() && len.is_finite()) {
        return None;
    }
    let x = len / dt;
    let n = x.round();
    ((x - n).abs() <= 1e-9 * x.max(1.0) && n >= 1.0).then_some(n as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let g = TimeGrid::new(0.75, 384).unwrap();
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(384), 0.75);
        assert_eq!(g.index_of(0.25), Some(128));
        assert_eq!(g.index_of(0.2501), None);
    }

    #[test]
    fn spacing_must_divide_horizon() {
        assert!(TimeGrid::with_spacing(1.0, 0.3).is_err());
        assert_eq!(TimeGrid::with_spacing(0.75, 1.0 / 512.0).unwrap().n_steps(), 384);
        assert_eq!(aligned_steps(0.25, 1.0 / 512.0), Some(128));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }
}
