//! Experiment manifests: strict TOML schema, validation that names every
//! offending key, and a canonical serializer with byte-identical round-trips.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::ComplexField;
use crate::grid::{build_grid, Grid, PotentialField};
use crate::nonlinearity::NonlinearitySpec;

pub const KNOWN_GENERATORS: &[&str] = &["zero", "constant", "sine", "bump"];
pub const KNOWN_KINDS: &[&str] = &[
    "solve",
    "linearize",
    "carleman-check",
    "fbi-check",
    "recover-p",
    "recover-q",
    "partial-data",
];

/// Named coefficient or data generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorSpec {
    pub generator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

impl GeneratorSpec {
    pub fn zero() -> Self {
        GeneratorSpec {
            generator: "zero".into(),
            amplitude: None,
            frequency: None,
            offset: None,
        }
    }

    pub fn constant(amplitude: f64) -> Self {
        GeneratorSpec {
            amplitude: Some(amplitude),
            ..Self::zero().with_name("constant")
        }
    }

    pub fn sine(amplitude: f64, frequency: usize) -> Self {
        GeneratorSpec {
            amplitude: Some(amplitude),
            frequency: Some(frequency),
            ..Self::zero().with_name("sine")
        }
    }

    fn with_name(mut self, name: &str) -> Self {
        self.generator = name.into();
        self
    }

    fn validate(&self, key: &str, problems: &mut Vec<String>) {
        if !KNOWN_GENERATORS.contains(&self.generator.as_str()) {
            problems.push(format!("{key}.generator: unknown name '{}'", self.generator));
            return;
        }
        let needs_amplitude = matches!(self.generator.as_str(), "constant" | "sine" | "bump");
        if needs_amplitude && self.amplitude.is_none() {
            problems.push(format!("{key}.amplitude: required for '{}'", self.generator));
        }
    }

    fn profile(&self, grid: &Grid, i: usize) -> f64 {
        let p = grid.node(i);
        let amp = self.amplitude.unwrap_or(0.0);
        let off = self.offset.unwrap_or(0.0);
        match self.generator.as_str() {
            "zero" => 0.0,
            "constant" => amp + off,
            "sine" => {
                let freq = self.frequency.unwrap_or(1) as f64;
                let mut v = amp * (freq * std::f64::consts::PI * p[0] / grid.extent[0]).sin();
                if grid.dim == 2 {
                    v *= (std::f64::consts::PI * p[1] / grid.extent[1]).sin();
                }
                v + off
            }
            "bump" => {
                // Squared-parabola bump supported off the collar.
                let mut v = amp;
                for ax in 0..grid.dim {
                    let lo = grid.collar_width + 2.0 * grid.spacing[ax];
                    let hi = grid.extent[ax] - lo;
                    if p[ax] <= lo || p[ax] >= hi {
                        return off;
                    }
                    let s = (p[ax] - lo) / (hi - lo);
                    v *= (4.0 * s * (1.0 - s)).powi(2);
                }
                v + off
            }
            _ => unreachable!("validated"),
        }
    }

    pub fn build_potential(&self, grid: &Grid, label: &str) -> PotentialField {
        PotentialField {
            values: (0..grid.len()).map(|i| self.profile(grid, i)).collect(),
            label: label.to_string(),
        }
    }

    pub fn build_field(&self, grid: &Arc<Grid>) -> ComplexField {
        ComplexField {
            grid: grid.clone(),
            values: (0..grid.len())
                .map(|i| num_complex::Complex64::new(self.profile(grid, i), 0.0))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainBlock {
    pub dim: usize,
    pub extent: Vec<f64>,
    pub points: Vec<usize>,
    pub collar_width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CoefficientsBlock {
    pub p: GeneratorSpec,
    pub q: GeneratorSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NonlinearityBlock {
    pub m0: usize,
    pub n0: usize,
    pub c0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolverBlock {
    pub t_max: f64,
    pub dt: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentBlock {
    pub kind: String,
    pub data: GeneratorSpec,
    /// Exterior weight point (carleman / recovery selections).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    /// Length of the geometric s-ladder starting at s0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_rungs: Option<usize>,
    /// Variation order for `linearize`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    /// FBI / observability gamma ladder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family_amplitude: Option<f64>,
    /// Fraction of the gamma0 set retained for `partial-data`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub domain: DomainBlock,
    pub coefficients: CoefficientsBlock,
    pub nonlinearity: NonlinearityBlock,
    pub solver: SolverBlock,
    pub experiment: ExperimentBlock,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let m: Manifest =
            toml::from_str(text).map_err(|e| LabError::ManifestInvalid(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        Manifest::parse(&fs::read_to_string(path)?)
    }

    /// Canonical serialization; shipped manifests are emitted through this so
    /// parse -> serialize round-trips byte-identically.
    pub fn canonical(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    /// Strict validation listing every offending key.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.domain.dim == 1 || self.domain.dim == 2) {
            problems.push(format!("domain.dim: must be 1 or 2, got {}", self.domain.dim));
        }
        if self.domain.extent.len() != self.domain.dim {
            problems.push(format!(
                "domain.extent: expected {} entries, got {}",
                self.domain.dim,
                self.domain.extent.len()
            ));
        }
        if self.domain.points.len() != self.domain.dim {
            problems.push(format!(
                "domain.points: expected {} entries, got {}",
                self.domain.dim,
                self.domain.points.len()
            ));
        }
        if !(self.domain.collar_width > 0.0) {
            problems.push("domain.collar_width: must be positive".into());
        }
        self.coefficients.p.validate("coefficients.p", &mut problems);
        self.coefficients.q.validate("coefficients.q", &mut problems);
        if self.nonlinearity.m0 + self.nonlinearity.n0 < 2 {
            problems.push("nonlinearity: m0 + n0 must be at least 2".into());
        }
        if !(self.nonlinearity.c0 > 0.0) {
            problems.push("nonlinearity.c0: must be positive".into());
        }
        if !(self.solver.dt > 0.0) {
            problems.push("solver.dt: must be positive".into());
        }
        if self.solver.t_max == 0.0 {
            problems.push("solver.t_max: must be nonzero".into());
        }
        let e = &self.experiment;
        if !KNOWN_KINDS.contains(&e.kind.as_str()) {
            problems.push(format!("experiment.kind: unknown kind '{}'", e.kind));
        }
        e.data.validate("experiment.data", &mut problems);
        match e.kind.as_str() {
            "carleman-check" => {
                for (key, missing) in [
                    ("experiment.x0", e.x0.is_none()),
                    ("experiment.lambda", e.lambda.is_none()),
                    ("experiment.s0", e.s0.is_none()),
                ] {
                    if missing {
                        problems.push(format!("{key}: required for carleman-check"));
                    }
                }
                if let Some(x0) = &e.x0 {
                    if x0.len() != self.domain.dim {
                        problems.push("experiment.x0: wrong dimension".into());
                    }
                }
            }
            "linearize" => {
                if e.order.is_none() {
                    problems.push("experiment.order: required for linearize".into());
                }
                match &e.epsilons {
                    None => problems.push("experiment.epsilons: required for linearize".into()),
                    Some(l) if l.len() < 4 => {
                        problems.push("experiment.epsilons: need at least 4 rungs".into())
                    }
                    _ => {}
                }
            }
            "fbi-check" => {
                if e.gammas.as_ref().map_or(true, |g| g.is_empty()) {
                    problems.push("experiment.gammas: required for fbi-check".into());
                }
            }
            "recover-p" | "recover-q" | "partial-data" => {
                if e.x0.is_none() {
                    problems.push(format!("experiment.x0: required for {}", e.kind));
                }
                if e.family_count.is_none() {
                    problems.push(format!("experiment.family_count: required for {}", e.kind));
                }
                if e.kind == "partial-data" {
                    if e.gamma_fraction.map_or(true, |f| !(0.0 < f && f <= 1.0)) {
                        problems
                            .push("experiment.gamma_fraction: required in (0, 1]".into());
                    }
                    if e.gammas.as_ref().map_or(true, |g| g.is_empty()) {
                        problems.push("experiment.gammas: required for partial-data".into());
                    }
                }
            }
            _ => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(LabError::ManifestInvalid(problems.join("; ")))
        }
    }

    pub fn build_grid(&self) -> Result<Arc<Grid>> {
        let mut extent = [0.0; 2];
        let mut points = [0usize; 2];
        for ax in 0..self.domain.dim {
            extent[ax] = self.domain.extent[ax];
            points[ax] = self.domain.points[ax];
        }
        Ok(Arc::new(build_grid(
            self.domain.dim,
            extent,
            points,
            self.domain.collar_width,
        )?))
    }

    pub fn nonlinearity_spec(&self) -> NonlinearitySpec {
        NonlinearitySpec::monomial(self.nonlinearity.m0, self.nonlinearity.n0, self.nonlinearity.c0)
    }

    pub fn x0(&self) -> [f64; 2] {
        let mut out = [0.0; 2];
        if let Some(x0) = &self.experiment.x0 {
            for (ax, &v) in x0.iter().enumerate().take(2) {
                out[ax] = v;
            }
        }
        out
    }
}

/// A complete 1D example used by tests and shipped under manifests/.
pub fn example_solve_manifest() -> Manifest {
    Manifest {
        seed: 42,
        domain: DomainBlock {
            dim: 1,
            extent: vec![std::f64::consts::PI],
            points: vec![63],
            collar_width: 0.3,
        },
        coefficients: CoefficientsBlock {
            p: GeneratorSpec::zero(),
            q: GeneratorSpec::constant(1.0),
        },
        nonlinearity: NonlinearityBlock {
            m0: 1,
            n0: 1,
            c0: 1.0,
        },
        solver: SolverBlock {
            t_max: 0.5,
            dt: 0.01,
            tolerance: 1e-12,
            max_iterations: 60,
        },
        experiment: ExperimentBlock {
            kind: "solve".into(),
            data: GeneratorSpec::sine(0.05, 1),
            x0: None,
            lambda: None,
            t1: None,
            s0: None,
            s_rungs: None,
            order: None,
            epsilons: None,
            gammas: None,
            family_count: None,
            family_amplitude: None,
            gamma_fraction: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let m = example_solve_manifest();
        let text = m.canonical();
        let back = Manifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.canonical(), text);
    }

    #[test]
    fn unknown_generator_and_kind_named() {
        let mut m = example_solve_manifest();
        m.coefficients.q.generator = "mystery".into();
        m.experiment.kind = "dance".into();
        let err = m.validate().unwrap_err();
        let text = err.to_string();
        assert!(text.contains("coefficients.q.generator"), "{text}");
        assert!(text.contains("experiment.kind"), "{text}");
    }

    #[test]
    fn kind_specific_requirements() {
        let mut m = example_solve_manifest();
        m.experiment.kind = "carleman-check".into();
        let err = m.validate().unwrap_err().to_string();
        for key in ["experiment.x0", "experiment.lambda", "experiment.s0"] {
            assert!(err.contains(key), "{err}");
        }
        m.experiment.x0 = Some(vec![-10.0]);
        m.experiment.lambda = Some(0.01);
        m.experiment.s0 = Some(0.02);
        m.validate().unwrap();
    }

    #[test]
    fn generators_build_expected_profiles() {
        let m = example_solve_manifest();
        let g = m.build_grid().unwrap();
        let q = m.coefficients.q.build_potential(&g, "q");
        assert!((q.sup_norm() - 1.0).abs() < 1e-14);
        let f = m.experiment.data.build_field(&g);
        // Peak of 0.05 sin(x) on (0, pi).
        let peak = f.values.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        assert!((peak - 0.05).abs() < 1e-4);
        // Bump generator vanishes on the collar.
        let bump = GeneratorSpec {
            amplitude: Some(1.0),
            ..GeneratorSpec::zero().with_name("bump")
        };
        let b = bump.build_potential(&g, "b");
        for i in 0..g.len() {
            if g.collar[i] {
                assert_eq!(b.values[i], 0.0);
            }
        }
        assert!(b.sup_norm() > 0.5);
    }

    #[test]
    fn dimension_mismatch_listed() {
        let mut m = example_solve_manifest();
        m.domain.extent = vec![1.0, 2.0];
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("domain.extent"), "{err}");
    }
}
