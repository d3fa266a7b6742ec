//! Scenario files: TOML documents describing one pipeline run.
//!
//! Every table rejects unknown keys. Task-specific keys are optional in the
//! schema and checked by [`ScenarioConfig::validate`], which names the
//! missing or offending key by its dotted path.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wienerlab::elliptic::EllipticCoefficients;
use wienerlab::grid::{BallSpec, Shape};
use wienerlab::measures::{DensityModel, MeasureModel};
use wienerlab::relaxed::Datum;
use wienerlab::wiener::{Denominator, Verdict};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("missing key `{key}` (required by task {task})")]
    Missing { key: String, task: &'static str },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    CapacitySweep,
    GreenCheck,
    WienerClassify,
    RelaxedSolve,
    EnergyVerify,
    IntegrationLemma,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::CapacitySweep => "capacity_sweep",
            Task::GreenCheck => "green_check",
            Task::WienerClassify => "wiener_classify",
            Task::RelaxedSolve => "relaxed_solve",
            Task::EnergyVerify => "energy_verify",
            Task::IntegrationLemma => "integration_lemma",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Ball { center: Vec<f64>, radius: f64 },
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Box { min: Vec<f64>, max: Vec<f64> },
    /// The nodes sitting exactly at one point.
    Point { at: Vec<f64> },
    Complement { shape: Box<ShapeConfig> },
    Union { shapes: Vec<ShapeConfig> },
    Intersection { shapes: Vec<ShapeConfig> },
}

impl ShapeConfig {
    pub fn to_shape(&self) -> Shape {
        match self {
            ShapeConfig::Ball { center, radius } => Shape::ball(center, *radius),
            ShapeConfig::Annulus { center, inner, outer } => Shape::Annulus {
                center: center.clone(),
                inner: *inner,
                outer: *outer,
            },
            ShapeConfig::HalfSpace { normal, offset } => Shape::HalfSpace {
                normal: normal.clone(),
                offset: *offset,
            },
            ShapeConfig::Box { min, max } => Shape::Box {
                min: min.clone(),
                max: max.clone(),
            },
            ShapeConfig::Point { at } => Shape::ball(at, 0.0),
            ShapeConfig::Complement { shape } => shape.to_shape().complement(),
            ShapeConfig::Union { shapes } => Shape::Union(shapes.iter().map(|s| s.to_shape()).collect()),
            ShapeConfig::Intersection { shapes } => {
                Shape::Intersection(shapes.iter().map(|s| s.to_shape()).collect())
            }
        }
    }

    fn validate(&self, key: &str, dim: usize) -> Result<(), ConfigError> {
        let point = |name: &str, v: &[f64]| {
            if v.len() != dim {
                Err(invalid(&format!("{key}.{name}"), format!("expected {dim} coordinates, got {}", v.len())))
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(invalid(&format!("{key}.{name}"), "coordinates must be finite"))
            } else {
                Ok(())
            }
        };
        match self {
            ShapeConfig::Ball { center, radius } => {
                point("center", center)?;
                if !(*radius > 0.0) {
                    return Err(invalid(&format!("{key}.radius"), "must be positive"));
                }
            }
            ShapeConfig::Annulus { center, inner, outer } => {
                point("center", center)?;
                if !(*inner >= 0.0 && outer > inner) {
                    return Err(invalid(&format!("{key}.outer"), "need 0 <= inner < outer"));
                }
            }
            ShapeConfig::HalfSpace { normal, offset } => {
                point("normal", normal)?;
                if normal.iter().all(|&x| x == 0.0) || !offset.is_finite() {
                    return Err(invalid(&format!("{key}.normal"), "need a nonzero normal and a finite offset"));
                }
            }
            ShapeConfig::Box { min, max } => {
                point("min", min)?;
                point("max", max)?;
                if min.iter().zip(max).any(|(a, b)| a > b) {
                    return Err(invalid(&format!("{key}.max"), "box corners are reversed"));
                }
            }
            ShapeConfig::Point { at } => point("at", at)?,
            ShapeConfig::Complement { shape } => shape.validate(&format!("{key}.shape"), dim)?,
            ShapeConfig::Union { shapes } | ShapeConfig::Intersection { shapes } => {
                if shapes.is_empty() {
                    return Err(invalid(&format!("{key}.shapes"), "must not be empty"));
                }
                for (i, s) in shapes.iter().enumerate() {
                    s.validate(&format!("{key}.shapes[{i}]"), dim)?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    Constant { value: f64 },
    RadialPower {
        center: Vec<f64>,
        scale: f64,
        power: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    Indicator { shape: ShapeConfig, value: f64 },
}

fn default_cap() -> f64 {
    1e12
}

impl DensityConfig {
    fn to_model(&self) -> DensityModel {
        match self {
            DensityConfig::Constant { value } => DensityModel::Constant(*value),
            DensityConfig::RadialPower {
                center,
                scale,
                power,
                cap,
            } => DensityModel::RadialPower {
                center: center.clone(),
                scale: *scale,
                power: *power,
                cap: *cap,
            },
            DensityConfig::Indicator { shape, value } => DensityModel::Indicator {
                shape: shape.to_shape(),
                value: *value,
            },
        }
    }

    fn validate(&self, key: &str, dim: usize, signed: bool) -> Result<(), ConfigError> {
        let sign_ok = |v: f64| v.is_finite() && (signed || v >= 0.0);
        match self {
            DensityConfig::Constant { value } => {
                if !sign_ok(*value) {
                    return Err(invalid(&format!("{key}.value"), "must be finite and nonnegative"));
                }
            }
            DensityConfig::RadialPower {
                center,
                scale,
                power,
                cap,
            } => {
                if center.len() != dim {
                    return Err(invalid(&format!("{key}.center"), format!("expected {dim} coordinates")));
                }
                if !sign_ok(*scale) || !power.is_finite() || !(*cap > 0.0) {
                    return Err(invalid(&format!("{key}.scale"), "need a finite nonnegative scale and positive cap"));
                }
            }
            DensityConfig::Indicator { shape, value } => {
                shape.validate(&format!("{key}.shape"), dim)?;
                if !sign_ok(*value) {
                    return Err(invalid(&format!("{key}.value"), "must be finite and nonnegative"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureConfig {
    #[default]
    Zero,
    Density {
        density: DensityConfig,
        support: Option<ShapeConfig>,
    },
    Obstacle { shape: ShapeConfig },
    Signed {
        density: DensityConfig,
        support: Option<ShapeConfig>,
    },
}

impl MeasureConfig {
    pub fn to_model(&self) -> MeasureModel {
        match self {
            MeasureConfig::Zero => MeasureModel::Zero,
            MeasureConfig::Density { density, support } => MeasureModel::Density {
                density: density.to_model(),
                support: support.as_ref().map(|s| s.to_shape()),
            },
            MeasureConfig::Obstacle { shape } => MeasureModel::Obstacle(shape.to_shape()),
            MeasureConfig::Signed { density, support } => MeasureModel::Signed {
                density: density.to_model(),
                support: support.as_ref().map(|s| s.to_shape()),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, MeasureConfig::Zero)
    }

    fn validate(&self, key: &str, dim: usize) -> Result<(), ConfigError> {
        match self {
            MeasureConfig::Zero => Ok(()),
            MeasureConfig::Density { density, support } | MeasureConfig::Signed { density, support } => {
                let signed = matches!(self, MeasureConfig::Signed { .. });
                density.validate(&format!("{key}.density"), dim, signed)?;
                if let Some(s) = support {
                    s.validate(&format!("{key}.support"), dim)?;
                }
                Ok(())
            }
            MeasureConfig::Obstacle { shape } => shape.validate(&format!("{key}.shape"), dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientConfig {
    #[default]
    Laplacian,
    /// Constant matrix with declared bounds.
    Constant {
        matrix: Vec<Vec<f64>>,
        lambda: f64,
        big_lambda: f64,
    },
    /// `(1 + amplitude · sin(2π x₁ / period)) I`.
    Oscillating { amplitude: f64, period: f64 },
}

impl CoefficientConfig {
    pub fn build(&self, dim: usize) -> wienerlab::Result<EllipticCoefficients> {
        match self {
            CoefficientConfig::Laplacian => Ok(EllipticCoefficients::laplacian(dim)),
            CoefficientConfig::Constant {
                matrix,
                lambda,
                big_lambda,
            } => {
                let mut a = [[0.0; 3]; 3];
                for (i, row) in matrix.iter().enumerate().take(dim) {
                    for (j, v) in row.iter().enumerate().take(dim) {
                        a[i][j] = *v;
                    }
                }
                if dim == 2 {
                    a[2][2] = 1.0;
                }
                EllipticCoefficients::constant(dim, a, *lambda, *big_lambda)
            }
            CoefficientConfig::Oscillating { amplitude, period } => {
                let (amp, per) = (*amplitude, *period);
                EllipticCoefficients::variable(
                    dim,
                    move |x| {
                        let s = 1.0 + amp * (2.0 * std::f64::consts::PI * x[0] / per).sin();
                        [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]]
                    },
                    1.0 - amp,
                    1.0 + amp,
                )
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<(), ConfigError> {
        match self {
            CoefficientConfig::Laplacian => Ok(()),
            CoefficientConfig::Constant { matrix, .. } => {
                if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                    return Err(invalid("coefficients.matrix", format!("expected a {dim}x{dim} matrix")));
                }
                self.build(dim)
                    .map(|_| ())
                    .map_err(|e| invalid("coefficients", e.to_string()))
            }
            CoefficientConfig::Oscillating { amplitude, period } => {
                if !(*amplitude >= 0.0 && *amplitude < 1.0) || !(*period > 0.0) {
                    return Err(invalid("coefficients.amplitude", "need 0 <= amplitude < 1 and period > 0"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatumConfig {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `constant + gradient · x`.
    Affine { constant: f64, gradient: Vec<f64> },
    /// `scale · max(x_axis, 0)`.
    PositivePart { axis: usize, scale: f64 },
}

impl DatumConfig {
    pub fn to_datum(&self) -> Datum {
        match self.clone() {
            DatumConfig::Zero => Datum::zero(),
            DatumConfig::Constant { value } => Datum::new(move |_| value),
            DatumConfig::Affine { constant, gradient } => {
                Datum::new(move |x| constant + gradient.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            }
            DatumConfig::PositivePart { axis, scale } => Datum::new(move |x| scale * x[axis].max(0.0)),
        }
    }

    fn validate(&self, dim: usize) -> Result<(), ConfigError> {
        match self {
            DatumConfig::Affine { gradient, .. } if gradient.len() != dim => {
                Err(invalid("datum.gradient", format!("expected {dim} components")))
            }
            DatumConfig::PositivePart { axis, .. } if *axis >= dim => {
                Err(invalid("datum.axis", format!("must be below {dim}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    /// Inner radii `ρ`; the condenser is `(B_ρ, B_{outer_factor · ρ})`.
    pub radii: Vec<f64>,
    #[serde(default = "default_outer_factor")]
    pub outer_factor: f64,
    /// Number of additional solves, each at the spacing divided by `refine`.
    #[serde(default)]
    pub refinements: usize,
    /// Compare with the radial closed form.
    #[serde(default)]
    pub analytic: bool,
    /// Largest relative error at the finest spacing.
    pub tolerance: Option<f64>,
    /// Largest error ratio between consecutive spacings.
    pub convergence_ratio: Option<f64>,
}

fn default_outer_factor() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenConfig {
    #[serde(default = "default_green_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_k_range")]
    pub k_range: [f64; 2],
    #[serde(default = "default_k_change")]
    pub max_k_change: f64,
    /// Random positive test functions for the normalization check.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Random point pairs for the symmetry check.
    #[serde(default = "default_samples")]
    pub symmetry_pairs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GreenConfig {
    fn default() -> Self {
        GreenConfig {
            ratios: default_green_ratios(),
            k_range: default_k_range(),
            max_k_change: default_k_change(),
            samples: default_samples(),
            symmetry_pairs: default_samples(),
            seed: 0,
        }
    }
}

fn default_green_ratios() -> Vec<f64> {
    vec![0.125, 0.25, 0.5]
}

fn default_k_range() -> [f64; 2] {
    [0.3, 3.0]
}

fn default_k_change() -> f64 {
    0.2
}

fn default_samples() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RelaxedConfig {
    /// Ω for the classical comparison; the problem itself lives on
    /// `domain` (Ω′) and `mu` should be the obstacle on `Ω′ − Ω`.
    pub classical_domain: Option<ShapeConfig>,
    #[serde(default = "default_equivalence_tol")]
    pub equivalence_tol: f64,
    /// Radii of the oscillation table around `x0`.
    #[serde(default)]
    pub osc_radii: Vec<f64>,
}

fn default_equivalence_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    /// Radius of the local solve around `x0`.
    pub local_radius: f64,
    /// Spacing of the parent solve on `B_{r0}`; without it `u` is solved
    /// on the local ball directly.
    pub parent_h: Option<f64>,
    /// Radii of `V`; by default the Wiener radii `R q_wᵏ`.
    pub radii: Option<Vec<f64>>,
    /// Radii of the oscillation table; by default dyadic from `R`.
    pub osc_radii: Option<Vec<f64>>,
    #[serde(default = "default_k_max")]
    pub k_max: f64,
    #[serde(default = "default_k_stability")]
    pub k_stability: f64,
    /// Fail unless `V` strictly decreases along the radii.
    #[serde(default)]
    pub require_decreasing: bool,
    /// Fail unless osc at the smallest radius is at most this fraction of
    /// osc at the largest.
    pub osc_ratio_max: Option<f64>,
    /// Fail unless osc at the smallest radius is at least this fraction.
    pub osc_ratio_min: Option<f64>,
    pub max_green_cells: Option<usize>,
    #[serde(default = "default_m")]
    pub m: f64,
}

fn default_k_max() -> f64 {
    100.0
}

fn default_k_stability() -> f64 {
    0.3
}

fn default_m() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaConfig {
    pub q: f64,
    pub k: f64,
    /// Explicit `δ` samples; otherwise `random_cases` random profiles.
    pub delta: Option<Vec<f64>>,
    #[serde(default)]
    pub random_cases: usize,
    #[serde(default = "default_lemma_levels")]
    pub levels: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lemma_levels() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expected {
    Verdict(String),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub task: Task,
    pub dim: usize,
    pub h: f64,
    /// Refinement factor for two-resolution checks.
    #[serde(default = "default_refine")]
    pub refine: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Axis-aligned box `[[min, max], ...]`.
    #[serde(rename = "box")]
    pub bbox: Option<Vec<[f64; 2]>>,
    pub x0: Option<Vec<f64>>,
    /// Outer scale `R` of the task.
    pub radius: Option<f64>,
    /// Radius of the parent ball `B_{R₀}`.
    pub r0: Option<f64>,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_q_w")]
    pub q_w: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub laplacian_denominator: bool,
    pub expected: Option<Expected>,
    pub output: Option<String>,
    #[serde(default)]
    pub coefficients: CoefficientConfig,
    pub domain: Option<ShapeConfig>,
    #[serde(default)]
    pub mu: MeasureConfig,
    #[serde(default)]
    pub nu: MeasureConfig,
    #[serde(default)]
    pub datum: DatumConfig,
    pub capacity: Option<CapacityConfig>,
    pub green: Option<GreenConfig>,
    pub relaxed: Option<RelaxedConfig>,
    pub energy: Option<EnergyConfig>,
    pub lemma: Option<LemmaConfig>,
}

fn default_refine() -> usize {
    2
}

fn default_rel_tol() -> f64 {
    1e-10
}

fn default_q() -> f64 {
    0.125
}

fn default_q_w() -> f64 {
    0.5
}

fn default_levels() -> usize {
    5
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, path: &str) -> Result<ScenarioConfig, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize")
    }

    fn missing(&self, key: &str) -> ConfigError {
        ConfigError::Missing {
            key: key.to_string(),
            task: self.task.as_str(),
        }
    }

    pub fn x0(&self) -> &[f64] {
        self.x0.as_deref().expect("validated")
    }

    pub fn radius(&self) -> f64 {
        self.radius.expect("validated")
    }

    pub fn denominator(&self) -> Denominator {
        if self.laplacian_denominator {
            Denominator::Laplacian
        } else {
            Denominator::SameOperator
        }
    }

    pub fn coefficients(&self) -> EllipticCoefficients {
        self.coefficients.build(self.dim).expect("validated")
    }

    pub fn expected_verdict(&self) -> Option<Verdict> {
        match &self.expected {
            Some(Expected::Verdict(v)) => parse_verdict(v),
            _ => None,
        }
    }

    pub fn domain_shape(&self) -> Option<Shape> {
        self.domain.as_ref().map(|s| s.to_shape())
    }

    /// Bounding box, by default the one of `B_radius(x0)` grown by a cell.
    pub fn bounding_box(&self) -> Option<Vec<(f64, f64)>> {
        if let Some(b) = &self.bbox {
            return Some(b.iter().map(|r| (r[0], r[1])).collect());
        }
        let (x0, r) = (self.x0.as_ref()?, self.radius?);
        Some(x0.iter().map(|c| (c - r - self.h, c + r + self.h)).collect())
    }

    /// All containments and task keys, before any solve.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.dim;
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(invalid("name", "must be a non-empty plain file name"));
        }
        if d != 2 && d != 3 {
            return Err(invalid("dim", format!("must be 2 or 3, got {d}")));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid("h", "must be positive"));
        }
        if self.refine < 2 {
            return Err(invalid("refine", "must be at least 2"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(invalid("rel_tol", "must lie in (0, 1)"));
        }
        if !(self.q_w > 0.0 && self.q_w < 1.0) {
            return Err(invalid("q_w", "must lie in (0, 1)"));
        }
        if self.levels == 0 {
            return Err(invalid("levels", "must be positive"));
        }
        if let Some(b) = &self.bbox {
            if b.len() != d || b.iter().any(|r| !(r[0] < r[1])) {
                return Err(invalid("box", format!("expected {d} increasing [min, max] pairs")));
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != d || x0.iter().any(|x| !x.is_finite()) {
                return Err(invalid("x0", format!("expected {d} finite coordinates")));
            }
        }
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return Err(invalid("radius", "must be positive"));
            }
        }
        if let Some(Expected::Verdict(v)) = &self.expected {
            if parse_verdict(v).is_none() {
                return Err(invalid(
                    "expected",
                    format!("unknown verdict {v:?}; use wiener_point, not_wiener_point or inconclusive"),
                ));
            }
        }
        self.coefficients.validate(d)?;
        if let Some(s) = &self.domain {
            s.validate("domain", d)?;
        }
        self.mu.validate("mu", d)?;
        self.nu.validate("nu", d)?;
        self.datum.validate(d)?;
        if matches!(self.mu, MeasureConfig::Signed { .. }) {
            return Err(invalid("mu.kind", "μ must be nonnegative"));
        }
        if matches!(self.nu, MeasureConfig::Obstacle { .. }) {
            return Err(invalid("nu.kind", "ν cannot be an obstacle"));
        }
        match self.task {
            Task::CapacitySweep => self.validate_capacity(),
            Task::GreenCheck => self.validate_green(),
            Task::WienerClassify => self.validate_wiener(),
            Task::RelaxedSolve => self.validate_relaxed(),
            Task::EnergyVerify => self.validate_energy(),
            Task::IntegrationLemma => self.validate_lemma(),
        }
    }

    fn require_point(&self) -> Result<(), ConfigError> {
        if self.x0.is_none() {
            return Err(self.missing("x0"));
        }
        if self.radius.is_none() {
            return Err(self.missing("radius"));
        }
        Ok(())
    }

    fn require_box_contains(&self, ball: &BallSpec, key: &str) -> Result<(), ConfigError> {
        if let Some(b) = &self.bbox {
            for (i, r) in b.iter().enumerate() {
                let c = ball.center[i];
                if c - ball.radius < r[0] - 1e-12 || c + ball.radius > r[1] + 1e-12 {
                    return Err(invalid(key, format!("B_{}({:?}) leaves the box", ball.radius, ball.center)));
                }
            }
        }
        Ok(())
    }

    fn validate_capacity(&self) -> Result<(), ConfigError> {
        let c = self.capacity.as_ref().ok_or_else(|| self.missing("capacity"))?;
        if c.radii.is_empty() || c.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(invalid("capacity.radii", "need positive radii"));
        }
        if !(c.outer_factor > 1.0) {
            return Err(invalid("capacity.outer_factor", "must exceed 1"));
        }
        if c.tolerance.is_some() && !c.analytic && self.expected.is_none() {
            return Err(invalid("capacity.tolerance", "needs `analytic = true` or `expected`"));
        }
        let center = self.capacity_center().ok_or_else(|| self.missing("x0"))?;
        for &r in &c.radii {
            self.require_box_contains(&BallSpec::new(&center, c.outer_factor * r), "capacity.radii")?;
            if r < 2.0 * self.h {
                return Err(invalid("capacity.radii", format!("radius {r} is below two grid spacings")));
            }
        }
        Ok(())
    }

    /// Centre of the condensers: `x0`, else the centre of the box.
    pub fn capacity_center(&self) -> Option<Vec<f64>> {
        if let Some(x0) = &self.x0 {
            return Some(x0.clone());
        }
        self.bbox
            .as_ref()
            .map(|b| b.iter().map(|r| 0.5 * (r[0] + r[1])).collect())
    }

    fn validate_green(&self) -> Result<(), ConfigError> {
        self.require_point()?;
        let g = self.green.clone().unwrap_or_default();
        if g.ratios.is_empty() || g.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(invalid("green.ratios", "need ratios in (0, 1)"));
        }
        if !(g.k_range[0] > 0.0 && g.k_range[0] < g.k_range[1]) {
            return Err(invalid("green.k_range", "need 0 < lower < upper"));
        }
        let smallest = g.ratios.iter().cloned().fold(f64::INFINITY, f64::min) * self.radius();
        if smallest < 4.0 * self.h {
            return Err(invalid("green.ratios", "the smallest sphere must span four grid spacings"));
        }
        Ok(())
    }

    fn validate_wiener(&self) -> Result<(), ConfigError> {
        self.require_point()?;
        let rho_min = self.radius() * self.q_w.powi(self.levels as i32 - 1);
        if rho_min < 4.0 * self.h {
            return Err(invalid(
                "levels",
                format!("smallest radius {rho_min} is below 4h = {}", 4.0 * self.h),
            ));
        }
        Ok(())
    }

    fn validate_relaxed(&self) -> Result<(), ConfigError> {
        if self.domain.is_none() {
            return Err(self.missing("domain"));
        }
        if self.bounding_box().is_none() {
            return Err(self.missing("box"));
        }
        if let Some(r) = &self.relaxed {
            if let Some(s) = &r.classical_domain {
                s.validate("relaxed.classical_domain", self.dim)?;
            }
            if !r.osc_radii.is_empty() && self.x0.is_none() {
                return Err(self.missing("x0"));
            }
        }
        Ok(())
    }

    fn validate_energy(&self) -> Result<(), ConfigError> {
        self.require_point()?;
        let e = self.energy.as_ref().ok_or_else(|| self.missing("energy"))?;
        if !(e.m >= 1.0 && self.q > 0.0 && self.q < 1.0 / (5.0 * e.m)) {
            return Err(invalid("q", format!("must lie in (0, 1/(5m)) with m = {}", e.m)));
        }
        let big_r = self.radius();
        if e.local_radius < big_r {
            return Err(invalid("energy.local_radius", "must be at least `radius`"));
        }
        if let Some(ph) = e.parent_h {
            let r0 = self.r0.ok_or_else(|| self.missing("r0"))?;
            if !(ph >= self.h) {
                return Err(invalid("energy.parent_h", "must be at least h"));
            }
            if !(r0 > e.local_radius) {
                return Err(invalid("r0", "must exceed energy.local_radius"));
            }
            if 2.0 * big_r / self.q > r0 * (1.0 + 1e-12) {
                return Err(invalid("r0", format!("need 2R/q = {} <= r0", 2.0 * big_r / self.q)));
            }
        }
        let radii = self.energy_radii();
        if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] < w[0])) || radii[0] > big_r * (1.0 + 1e-12) {
            return Err(invalid("energy.radii", "need at least two decreasing radii up to `radius`"));
        }
        let rho_min = big_r * self.q_w.powi(self.levels as i32 - 1);
        if rho_min < 4.0 * self.h {
            return Err(invalid("levels", format!("smallest Wiener radius {rho_min} is below 4h")));
        }
        if radii[radii.len() - 1] < rho_min * (1.0 - 1e-9) {
            return Err(invalid("energy.radii", "radii must stay within the Wiener radii"));
        }
        if let Some(o) = &e.osc_radii {
            if o.len() < 2 || o.windows(2).any(|w| !(w[1] < w[0])) || o[0] > e.local_radius {
                return Err(invalid("energy.osc_radii", "need decreasing radii inside the local ball"));
            }
        }
        Ok(())
    }

    fn validate_lemma(&self) -> Result<(), ConfigError> {
        let l = self.lemma.as_ref().ok_or_else(|| self.missing("lemma"))?;
        if !(l.q > 0.0 && l.q < 1.0) {
            return Err(invalid("lemma.q", "must lie in (0, 1)"));
        }
        if !(l.k > 0.0) {
            return Err(invalid("lemma.k", "must be positive"));
        }
        match &l.delta {
            Some(d) if d.len() < 2 || d.iter().any(|x| !(0.0..=1.0).contains(x)) => {
                Err(invalid("lemma.delta", "need at least two samples in [0, 1]"))
            }
            None if l.random_cases == 0 => Err(invalid("lemma.random_cases", "give `delta` or a positive count")),
            None if l.levels < 2 => Err(invalid("lemma.levels", "must be at least 2")),
            _ => Ok(()),
        }
    }

    /// Wiener radii `R q_wᵏ`, `k < levels`.
    pub fn wiener_radii(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|k| self.radius() * self.q_w.powi(k as i32))
            .collect()
    }

    pub fn energy_radii(&self) -> Vec<f64> {
        self.energy
            .as_ref()
            .and_then(|e| e.radii.clone())
            .unwrap_or_else(|| self.wiener_radii())
    }

    /// Copy with the solver tolerance and refinement factor overridden.
    pub fn with_overrides(mut self, rel_tol: Option<f64>, refine: Option<usize>) -> Result<Self, ConfigError> {
        if let Some(t) = rel_tol {
            self.rel_tol = t;
        }
        if let Some(r) = refine {
            self.refine = r;
        }
        self.validate()?;
        Ok(self)
    }
}

pub fn parse_verdict(s: &str) -> Option<Verdict> {
    match s {
        "wiener_point" => Some(Verdict::WienerPoint),
        "not_wiener_point" => Some(Verdict::NotWienerPoint),
        "inconclusive" => Some(Verdict::Inconclusive),
        _ => None,
    }
}
