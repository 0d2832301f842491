//! Time-dependent fields on a uniform grid with linear interpolation.

use crate::error::{CoreError, Result};
use crate::space::Field;

/// Uniform time grid `t_start = tau_0 < ... < tau_steps = t_end` with
/// `t_end <= 0` (the final condition sits at time 0 in the usual case).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) {
            return Err(CoreError::NonFinite { context: "time grid endpoints" });
        }
        if t_end > 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "time grids live in the past: t_end = {t_end} > 0"
            )));
        }
        if t_start >= t_end {
            return Err(CoreError::InvalidArgument(format!(
                "need t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        if steps == 0 {
            return Err(CoreError::InvalidArgument("time grid needs at least one step".into()));
        }
        Ok(Self { t_start, t_end, steps })
    }

    /// Grid over `[t, 0]`.
    pub fn to_zero(t: f64, steps: usize) -> Result<Self> {
        Self::new(t, 0.0, steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid nodes, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps as f64
    }

    pub fn span(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn time(&self, j: usize) -> f64 {
        debug_assert!(j <= self.steps);
        if j == self.steps {
            self.t_end
        } else {
            self.t_start + j as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.time(j)).collect()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start - 1e-12 && t <= self.t_end + 1e-12
    }

    /// Index of `t` if it coincides with a grid node (within 1e-9 dt).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        if !self.contains(t) {
            return None;
        }
        let raw = (t - self.t_start) / self.dt();
        let j = raw.round() as usize;
        let j = j.min(self.steps);
        if (self.time(j) - t).abs() <= 1e-9 * self.dt().abs().max(1e-300) {
            Some(j)
        } else {
            None
        }
    }
}

/// A [`Field`]-valued function of time on a [`TimeGrid`], linear between
/// nodes. Houses solution frames of the evolution equations.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeField {
    grid: TimeGrid,
    frames: Vec<Field>,
}

impl TimeField {
    pub fn new(grid: TimeGrid, frames: Vec<Field>) -> Result<Self> {
        if frames.len() != grid.len() {
            return Err(CoreError::GridMismatch(format!(
                "{} frames for a grid of {} nodes",
                frames.len(),
                grid.len()
            )));
        }
        let n = frames[0].len();
        for f in &frames {
            if f.len() != n {
                return Err(CoreError::GridMismatch("frames of unequal length".into()));
            }
            if f.values().iter().any(|v| !v.is_finite()) {
                return Err(CoreError::NonFinite { context: "time field frame" });
            }
        }
        Ok(Self { grid, frames })
    }

    pub fn constant(grid: TimeGrid, frame: Field) -> Self {
        let frames = vec![frame; grid.len()];
        Self { grid, frames }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_points(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn frame(&self, j: usize) -> &Field {
        &self.frames[j]
    }

    /// Frame at an arbitrary time by linear interpolation.
    pub fn frame_at(&self, t: f64) -> Result<Field> {
        if !self.grid.contains(t) {
            return Err(CoreError::GridMismatch(format!(
                "time {t} outside [{}, {}]",
                self.grid.t_start(),
                self.grid.t_end()
            )));
        }
        if let Some(j) = self.grid.index_of(t) {
            return Ok(self.frames[j].clone());
        }
        let raw = (t - self.grid.t_start()) / self.grid.dt();
        let j = (raw.floor() as usize).min(self.grid.steps() - 1);
        let w = raw - j as f64;
        Ok(self.frames[j].zip_map(&self.frames[j + 1], |a, b| (1.0 - w) * a + w * b))
    }

    pub fn value_at(&self, t: f64, x: usize) -> Result<f64> {
        Ok(self.frame_at(t)?.get(x))
    }

    pub fn map_frames(&self, f: impl Fn(&Field) -> Field) -> TimeField {
        TimeField { grid: self.grid, frames: self.frames.iter().map(f).collect() }
    }

    pub fn sub(&self, other: &TimeField) -> Result<TimeField> {
        if self.grid != other.grid {
            return Err(CoreError::GridMismatch("subtracting fields on different grids".into()));
        }
        Ok(TimeField {
            grid: self.grid,
            frames: self
                .frames
                .iter()
                .zip(&other.frames)
                .map(|(a, b)| a.sub(b))
                .collect(),
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.frames.iter().map(Field::sup_norm).fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.frames.iter().map(Field::min).fold(f64::INFINITY, f64::min)
    }

    /// Discrete time derivative: centered differences at interior nodes,
    /// second-order one-sided stencils at the ends.
    pub fn time_derivative(&self) -> TimeField {
        let dt = self.grid.dt();
        let n = self.grid.steps();
        let frames: Vec<Field> = (0..=n)
            .map(|j| {
                if n == 1 {
                    return self.frames[1].sub(&self.frames[0]).scale(1.0 / dt);
                }
                if j == 0 {
                    self.frames[0]
                        .scale(-3.0)
                        .add(&self.frames[1].scale(4.0))
                        .add(&self.frames[2].scale(-1.0))
                        .scale(1.0 / (2.0 * dt))
                } else if j == n {
                    self.frames[n]
                        .scale(3.0)
                        .add(&self.frames[n - 1].scale(-4.0))
                        .add(&self.frames[n - 2])
                        .scale(1.0 / (2.0 * dt))
                } else {
                    self.frames[j + 1].sub(&self.frames[j - 1]).scale(1.0 / (2.0 * dt))
                }
            })
            .collect();
        TimeField { grid: self.grid, frames }
    }

    /// Restriction to the sub-grid of nodes `j0..=j1`.
    pub fn slice(&self, j0: usize, j1: usize) -> Result<TimeField> {
        if j0 >= j1 || j1 > self.grid.steps() {
            return Err(CoreError::GridMismatch(format!("bad slice [{j0}, {j1}]")));
        }
        let grid = TimeGrid::new(self.grid.time(j0), self.grid.time(j1), j1 - j0)?;
        Ok(TimeField { grid, frames: self.frames[j0..=j1].to_vec() })
    }
}
