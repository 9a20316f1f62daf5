//! Complex grid functions and time-sampled trajectories.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{LabError, Result};
use crate::grid::Grid;

/// Complex-valued function on the interior nodes of a grid.
#[derive(Debug, Clone)]
pub struct ComplexField {
    pub grid: Arc<Grid>,
    pub values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        ComplexField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let p = grid.node(i);
                f(p[0], p[1])
            })
            .collect();
        ComplexField { grid, values }
    }

    pub fn from_real_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::from_fn(grid, |x, y| Complex64::new(f(x, y), 0.0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn conj(&self) -> Self {
        ComplexField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        ComplexField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        ComplexField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        ComplexField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn mul_pointwise(&self, other: &Self) -> Self {
        ComplexField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn mul_real(&self, real: &[f64]) -> Self {
        ComplexField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(real)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    /// Hermitian discrete L2 inner product `(f, g) = sum f conj(g) w`.
    pub fn l2_inner(&self, other: &Self) -> Complex64 {
        let w = self.grid.cell_weight();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b.conj())
            .sum::<Complex64>()
            * w
    }

    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.cell_weight();
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * w).sqrt()
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(LabError::GridMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }
}

/// Uniformly sampled time evolution of a complex field on `[t0, t0 + M*dt]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<ComplexField>,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, fields: Vec<ComplexField>) -> Self {
        assert!(times.len() >= 3, "need at least 3 time samples");
        assert_eq!(times.len(), fields.len());
        let dt = times[1] - times[0];
        for w in times.windows(2) {
            assert!(
                ((w[1] - w[0]) - dt).abs() < 1e-9 * dt.abs().max(1.0),
                "time samples not uniform"
            );
        }
        Trajectory { times, fields, dt }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the sample closest to `t`; panics if `t` is off the grid.
    pub fn index_of(&self, t: f64) -> usize {
        let idx = ((t - self.times[0]) / self.dt).round() as isize;
        assert!(idx >= 0 && (idx as usize) < self.len(), "time {t} off grid");
        let idx = idx as usize;
        assert!(
            (self.times[idx] - t).abs() < 1e-8 * self.dt.abs().max(1.0),
            "time {t} not on the sample grid"
        );
        idx
    }

    pub fn at(&self, t: f64) -> &ComplexField {
        &self.fields[self.index_of(t)]
    }

    /// Sample-wise difference.
    pub fn sub(&self, other: &Trajectory) -> Trajectory {
        assert_eq!(self.len(), other.len());
        Trajectory {
            times: self.times.clone(),
            fields: self
                .fields
                .iter()
                .zip(&other.fields)
                .map(|(a, b)| a.sub(b))
                .collect(),
            dt: self.dt,
        }
    }

    pub fn scaled(&self, c: Complex64) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            fields: self.fields.iter().map(|f| f.scaled(c)).collect(),
            dt: self.dt,
        }
    }

    /// Max over samples of the discrete L2 norm.
    pub fn sup_l2(&self) -> f64 {
        self.fields.iter().map(|f| f.l2_norm()).fold(0.0, f64::max)
    }
}

/// Uniform time grid `t0, t0+dt, ..., t1` (inclusive).
pub fn time_samples(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let steps = ((t1 - t0) / dt).round() as usize;
    (0..=steps).map(|j| t0 + j as f64 * dt).collect()
}
