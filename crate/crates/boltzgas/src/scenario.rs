//! Run configuration: a JSON scenario file with schema validation and
//! explicit error paths.

use crate::error::{Error, Result};
use crate::grid::{DistributionField, PhaseGrid, Representation};
use crate::kinematics::norm_sq;
use crate::restitution::RestitutionModel;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_extent: f64,
    pub xi_extent: f64,
    pub x_cells: usize,
    pub xi_cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationSpec {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IterationSpec {
    fn default() -> Self {
        IterationSpec {
            tol: 1e-6,
            max_iter: 30,
        }
    }
}

/// Initial datum: a Maxwellian hump or a velocity-shifted double hump,
/// both with Gaussian decay in position.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Maxwellian { amplitude: f64 },
    DoubleMaxwellian { amplitude: f64, shift: Vec<f64> },
}

impl InitialSpec {
    pub fn amplitude(&self) -> f64 {
        match self {
            InitialSpec::Maxwellian { amplitude } => *amplitude,
            InitialSpec::DoubleMaxwellian { amplitude, .. } => *amplitude,
        }
    }
}

fn default_angular_order() -> usize {
    24
}

/// Full scenario description, deserialized from the `--config` JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub dimension: usize,
    pub grid: GridSpec,
    pub alpha: f64,
    pub beta: f64,
    pub initial: InitialSpec,
    pub restitution: RestitutionModel,
    pub time: TimeSpec,
    #[serde(default)]
    pub iteration: IterationSpec,
    /// Full-circle-equivalent angular quadrature order.
    #[serde(default = "default_angular_order")]
    pub angular_order: usize,
    #[serde(default)]
    pub override_threshold: bool,
    /// Times at which solution snapshots are written (nearest mesh node).
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != 2 && self.dimension != 3 {
            return Err(Error::config("dimension", "must be 2 or 3"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("alpha", "must be positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("beta", "must be positive"));
        }
        if !(self.grid.x_extent > 0.0) || !(self.grid.xi_extent > 0.0) {
            return Err(Error::config("grid", "extents must be positive"));
        }
        if self.grid.x_cells < 4 || self.grid.xi_cells < 4 {
            return Err(Error::config("grid", "need at least 4 cells per axis"));
        }
        if !(self.time.horizon > 0.0) {
            return Err(Error::config("time.horizon", "must be positive"));
        }
        if self.time.steps < 2 {
            return Err(Error::config("time.steps", "need at least 2 steps"));
        }
        if !(self.iteration.tol > 0.0) {
            return Err(Error::config("iteration.tol", "must be positive"));
        }
        if self.iteration.max_iter == 0 {
            return Err(Error::config("iteration.max_iter", "must be positive"));
        }
        if self.angular_order < 8 {
            return Err(Error::config("angular_order", "must be at least 8"));
        }
        match &self.initial {
            InitialSpec::Maxwellian { amplitude } => {
                if !(*amplitude >= 0.0) {
                    return Err(Error::config("initial.amplitude", "must be nonnegative"));
                }
            }
            InitialSpec::DoubleMaxwellian { amplitude, shift } => {
                if !(*amplitude >= 0.0) {
                    return Err(Error::config("initial.amplitude", "must be nonnegative"));
                }
                if shift.len() != self.dimension {
                    return Err(Error::config(
                        "initial.shift",
                        format!("expected {} components", self.dimension),
                    ));
                }
            }
        }
        self.restitution.validate()?;
        for (i, t) in self.snapshot_times.iter().enumerate() {
            if !(*t >= 0.0 && *t <= self.time.horizon) {
                return Err(Error::config(
                    format!("snapshot_times[{i}]"),
                    "must lie in [0, horizon]",
                ));
            }
        }
        Ok(())
    }

    pub fn build_grid<const N: usize>(&self) -> Result<Arc<PhaseGrid<N>>> {
        assert_eq!(N, self.dimension);
        PhaseGrid::<N>::new(
            self.grid.x_extent,
            self.grid.xi_extent,
            self.grid.x_cells,
            self.grid.xi_cells,
        )
    }

    /// Sample the initial datum on the grid (sharp coordinates at t = 0).
    pub fn initial_field<const N: usize>(&self, grid: &Arc<PhaseGrid<N>>) -> DistributionField<N> {
        let alpha = self.alpha;
        let beta = self.beta;
        match &self.initial {
            InitialSpec::Maxwellian { amplitude } => {
                DistributionField::maxwellian(grid, *amplitude, alpha, beta, Representation::Sharp)
            }
            InitialSpec::DoubleMaxwellian { amplitude, shift } => {
                let amp = *amplitude;
                let mut v = [0.0; N];
                for (k, s) in shift.iter().take(N).enumerate() {
                    v[k] = *s;
                }
                DistributionField::from_fn(grid, 0.0, Representation::Sharp, |x, xi| {
                    let plus: [f64; N] = std::array::from_fn(|k| xi[k] - v[k]);
                    let minus: [f64; N] = std::array::from_fn(|k| xi[k] + v[k]);
                    amp * (-alpha * norm_sq(x)).exp()
                        * ((-beta * norm_sq(plus)).exp() + (-beta * norm_sq(minus)).exp())
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_json() -> String {
        r#"{
            "dimension": 2,
            "grid": {"x_extent": 5.3, "xi_extent": 5.3, "x_cells": 16, "xi_cells": 16},
            "alpha": 1.0,
            "beta": 1.0,
            "initial": {"type": "maxwellian", "amplitude": 0.00357},
            "restitution": {"kind": "elastic"},
            "time": {"horizon": 1.0, "steps": 32},
            "iteration": {"tol": 1e-6, "max_iter": 30},
            "angular_order": 24
        }"#
        .to_string()
    }

    #[test]
    fn parses_reference_scenario() {
        let s = Scenario::from_json(&reference_json()).unwrap();
        assert_eq!(s.dimension, 2);
        assert_eq!(s.grid.x_cells, 16);
        assert!(matches!(s.restitution, RestitutionModel::Elastic));
    }

    #[test]
    fn rejects_unknown_fields() {
        let bad = reference_json().replace("\"alpha\"", "\"alpha_typo\"");
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn rejects_bad_values_with_paths() {
        let bad = reference_json().replace("\"dimension\": 2", "\"dimension\": 5");
        match Scenario::from_json(&bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "dimension"),
            other => panic!("expected config error, got {other:?}"),
        }
        let bad = reference_json().replace("0.00357", "-1.0");
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn double_maxwellian_requires_matching_shift() {
        let json = reference_json().replace(
            r#"{"type": "maxwellian", "amplitude": 0.00357}"#,
            r#"{"type": "double_maxwellian", "amplitude": 0.001, "shift": [1.0]}"#,
        );
        assert!(Scenario::from_json(&json).is_err());
        let json = reference_json().replace(
            r#"{"type": "maxwellian", "amplitude": 0.00357}"#,
            r#"{"type": "double_maxwellian", "amplitude": 0.001, "shift": [1.0, 0.0]}"#,
        );
        let s = Scenario::from_json(&json).unwrap();
        let grid = s.build_grid::<2>().unwrap();
        let f = s.initial_field(&grid);
        f.validate().unwrap();
        assert!(f.l1_norm() > 0.0);
    }
}
