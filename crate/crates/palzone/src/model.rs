//! Shared physical model: medium constants, array geometry, frequency
//! plans, control zones, quadrature domain, and validation of a full
//! experiment configuration.
//!
//! Everything here is immutable after [`validate_config`] succeeds and is
//! safe to share across threads. Defaults reproduce the reference
//! experiment: 24 elements of 1 cm width centered on the origin, bright
//! zone x in [-0.6, -0.3], dark zone x in [0.3, 0.6], both z in
//! [0.6, 0.9] with 10 x 10 control points, 40 kHz carriers in air at
//! 20 degC / 70 % RH.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// A point in the Oxz plane (the model is two-dimensional).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub z: f64,
}

impl Point2 {
    pub fn new(x: f64, z: f64) -> Self {
        Point2 { x, z }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dz = self.z - other.z;
        (dx * dx + dz * dz).sqrt()
    }
}

/// Air properties plus the nonlinearity coefficient of the Westervelt
/// model. `alpha_override`, when set, replaces the atmospheric absorption
/// model at every frequency (useful for lossless test cases).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumParams {
    /// Air density, kg/m^3.
    pub rho0: f64,
    /// Sound speed, m/s.
    pub c0: f64,
    /// Nonlinearity coefficient (dimensionless).
    pub beta: f64,
    /// Air temperature, degrees Celsius.
    pub temperature: f64,
    /// Relative humidity, percent.
    pub humidity: f64,
    /// Absorption coefficient override, Np/m.
    pub alpha_override: Option<f64>,
}

impl Default for MediumParams {
    fn default() -> Self {
        MediumParams {
            rho0: 1.21,
            c0: 343.0,
            beta: 1.2,
            temperature: 20.0,
            humidity: 70.0,
            alpha_override: None,
        }
    }
}

/// Carrier pair around a center frequency. The two ultrasound carriers
/// sit at f_center -/+ f_audio/2. After placing f1, the pair is
/// round-tripped (f2 = f1 + f_audio, f1 = f2 - f_audio) so that
/// f2 - f1 == f_audio holds exactly whenever f_audio is representable at
/// the carrier scale (every practical configuration); the symmetric
/// placement moves by at most one ulp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrequencyPlan {
    f_center: f64,
    f_audio: f64,
    f1: f64,
    f2: f64,
}

fn derive_carriers(f_center: f64, f_audio: f64) -> (f64, f64) {
    let f1 = f_center - f_audio / 2.0;
    let f2 = f1 + f_audio;
    (f2 - f_audio, f2)
}

impl FrequencyPlan {
    pub fn new(f_center: f64, f_audio: f64) -> Result<Self, ConfigError> {
        let (f1, f2) = derive_carriers(f_center, f_audio);
        let plan = FrequencyPlan { f_center, f_audio, f1, f2 };
        let mut v = Violations::new();
        plan.check(&mut v, "frequencies");
        v.into_result(plan)
    }

    fn check(&self, v: &mut Violations, path: &str) {
        if !(self.f_audio > 0.0) {
            v.push(format!("{path}.f_audio"), "audio frequency must be positive");
        }
        if !(self.f1 > 0.0) {
            v.push(
                format!("{path}.f_audio"),
                format!("f1 > 0 violated: f_center - f_audio/2 = {} Hz", self.f1),
            );
        }
        if !(self.f_audio < self.f_center) {
            v.push(
                format!("{path}.f_audio"),
                "f_audio must be below the ultrasound center frequency",
            );
        }
    }

    pub fn f_center(&self) -> f64 {
        self.f_center
    }
    pub fn f_audio(&self) -> f64 {
        self.f_audio
    }
    /// Lower carrier frequency, Hz.
    pub fn f1(&self) -> f64 {
        self.f1
    }
    /// Upper carrier frequency, Hz.
    pub fn f2(&self) -> f64 {
        self.f2
    }
    pub fn omega1(&self) -> f64 {
        TAU * self.f1
    }
    pub fn omega2(&self) -> f64 {
        TAU * self.f2
    }
    pub fn omega_audio(&self) -> f64 {
        TAU * self.f_audio
    }
    /// Lossless audio wavenumber omega_a / c0, rad/m.
    pub fn k_audio(&self, c0: f64) -> f64 {
        self.omega_audio() / c0
    }
}

/// Positions of the radiating elements along the x axis (z = 0 plane).
/// Shared by the PAL and EDL arrays, which have identical dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayGeometry {
    n_elements: usize,
    element_width: f64,
    element_centers: Vec<f64>,
}

impl ArrayGeometry {
    /// Elements touching edge-to-edge ("closely arranged"), centroid at
    /// the origin.
    pub fn closely_arranged(n_elements: usize, element_width: f64) -> Self {
        let offset = (n_elements as f64 - 1.0) / 2.0;
        let element_centers = (0..n_elements)
            .map(|i| (i as f64 - offset) * element_width)
            .collect();
        ArrayGeometry { n_elements, element_width, element_centers }
    }

    pub fn with_centers(element_width: f64, element_centers: Vec<f64>) -> Self {
        ArrayGeometry { n_elements: element_centers.len(), element_width, element_centers }
    }

    fn check(&self, v: &mut Violations, path: &str) {
        if self.n_elements == 0 {
            v.push(format!("{path}.n_elements"), "at least one element is required");
        }
        if !(self.element_width > 0.0) {
            v.push(format!("{path}.element_width"), "element width must be positive");
        }
        for w in self.element_centers.windows(2) {
            if !(w[1] > w[0]) {
                v.push(
                    format!("{path}.element_centers"),
                    "element centers must be strictly increasing",
                );
                break;
            }
        }
        for w in self.element_centers.windows(2) {
            if w[1] - w[0] < self.element_width - 1e-12 {
                v.push(
                    format!("{path}.element_centers"),
                    format!(
                        "elements overlap: spacing {} < width {}",
                        w[1] - w[0],
                        self.element_width
                    ),
                );
                break;
            }
        }
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }
    pub fn element_width(&self) -> f64 {
        self.element_width
    }
    pub fn element_centers(&self) -> &[f64] {
        &self.element_centers
    }
    /// x extent of the radiating aperture [left edge, right edge].
    pub fn aperture(&self) -> (f64, f64) {
        let half = self.element_width / 2.0;
        (
            self.element_centers.first().copied().unwrap_or(0.0) - half,
            self.element_centers.last().copied().unwrap_or(0.0) + half,
        )
    }
}

/// Rectangular control region sampled on a uniform nx x nz grid
/// (endpoints included; a single point sits at the rectangle center).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub nx: usize,
    pub nz: usize,
}

impl Zone {
    fn check(&self, v: &mut Violations, path: &str) {
        if !(self.x_min < self.x_max) {
            v.push(format!("{path}.x_min"), "zone requires x_min < x_max");
        }
        if !(self.z_min < self.z_max) {
            v.push(format!("{path}.z_min"), "zone requires z_min < z_max");
        }
        if self.nx == 0 {
            v.push(format!("{path}.nx"), "nx must be at least 1");
        }
        if self.nz == 0 {
            v.push(format!("{path}.nz"), "nz must be at least 1");
        }
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        hi // exact endpoint, no roundoff overshoot
                    } else {
                        lo + (hi - lo) * i as f64 / (n - 1) as f64
                    }
                })
                .collect()
        }
    }

    /// The derived uniform control-point grid, z-major then x, exactly
    /// nx * nz points, all inside the rectangle.
    pub fn control_points(&self) -> Vec<Point2> {
        let xs = Self::axis(self.x_min, self.x_max, self.nx);
        let zs = Self::axis(self.z_min, self.z_max, self.nz);
        let mut pts = Vec::with_capacity(self.nx * self.nz);
        for &z in &zs {
            for &x in &xs {
                pts.push(Point2::new(x, z));
            }
        }
        pts
    }

    pub fn n_points(&self) -> usize {
        self.nx * self.nz
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.z >= self.z_min && p.z <= self.z_max
    }
}

/// Truncated integration domain for the virtual-source integral, with the
/// midpoint-rule cell spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub dx: f64,
    pub dz: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { x_min: -0.75, x_max: 0.75, z_min: 0.001, z_max: 1.2, dx: 0.005, dz: 0.005 }
    }
}

impl QuadratureSpec {
    fn check(&self, v: &mut Violations, path: &str, geom: &ArrayGeometry, zones: [&Zone; 2]) {
        if !(self.dx > 0.0) {
            v.push(format!("{path}.dx"), "spacing must be positive");
        }
        if !(self.dz > 0.0) {
            v.push(format!("{path}.dz"), "spacing must be positive");
        }
        if !(self.x_min < self.x_max) || !(self.z_min < self.z_max) {
            v.push(format!("{path}.x_min"), "domain bounds must be ordered");
        }
        if !(self.z_min > 0.0) {
            v.push(format!("{path}.z_min"), "domain must sit above the source line z = 0");
        }
        let (ap_lo, ap_hi) = geom.aperture();
        if self.x_min > ap_lo + 1e-12 || self.x_max < ap_hi - 1e-12 {
            v.push(
                format!("{path}.x_min"),
                format!(
                    "domain x [{}, {}] must enclose the array aperture [{ap_lo}, {ap_hi}]",
                    self.x_min, self.x_max
                ),
            );
        }
        for (name, zone) in ["bright", "dark"].iter().zip(zones) {
            if zone.z_min < self.z_min || zone.z_min > self.z_max {
                v.push(
                    format!("{path}.z_max"),
                    format!("domain z range must reach the {name} zone start z = {}", zone.z_min),
                );
            }
        }
    }

    /// Number of midpoint cells per axis (nearest integer cover of the
    /// domain extent).
    pub fn n_cells(&self) -> (usize, usize) {
        let nx = ((self.x_max - self.x_min) / self.dx).round().max(1.0) as usize;
        let nz = ((self.z_max - self.z_min) / self.dz).round().max(1.0) as usize;
        (nx, nz)
    }

    /// Midpoint-rule cell centers, z-major then x. The cell weight is
    /// dx * dz for every cell.
    pub fn cell_centers(&self) -> Vec<Point2> {
        let (nx, nz) = self.n_cells();
        let mut pts = Vec::with_capacity(nx * nz);
        for iz in 0..nz {
            let z = self.z_min + (iz as f64 + 0.5) * self.dz;
            for ix in 0..nx {
                let x = self.x_min + (ix as f64 + 0.5) * self.dx;
                pts.push(Point2::new(x, z));
            }
        }
        pts
    }

    pub fn cell_weight(&self) -> f64 {
        self.dx * self.dz
    }

    /// Spec with both spacings halved (convergence checks).
    pub fn halved(&self) -> QuadratureSpec {
        QuadratureSpec { dx: self.dx / 2.0, dz: self.dz / 2.0, ..self.clone() }
    }
}

// ---------------------------------------------------------------------------
// Configuration file schema
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_elements: usize,
    /// Element width a, m.
    pub element_width: f64,
    /// Explicit element centers; defaults to closely arranged around x = 0.
    pub element_centers: Option<Vec<f64>>,
    /// Velocity scale v0, m/s. Contrast is invariant to it; field maps scale with it.
    pub v0: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig { n_elements: 24, element_width: 0.01, element_centers: None, v0: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencyConfig {
    /// Ultrasound center frequency, Hz.
    pub f_center: f64,
    /// Audio (difference) frequencies to simulate, Hz.
    pub f_audio: Vec<f64>,
}

impl Default for FrequencyConfig {
    fn default() -> Self {
        FrequencyConfig { f_center: 40_000.0, f_audio: vec![1_000.0, 2_000.0, 4_000.0, 8_000.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZonesConfig {
    pub bright: Zone,
    pub dark: Zone,
}

impl Default for ZonesConfig {
    fn default() -> Self {
        ZonesConfig {
            bright: Zone { x_min: -0.6, x_max: -0.3, z_min: 0.6, z_max: 0.9, nx: 10, nz: 10 },
            dark: Zone { x_min: 0.3, x_max: 0.6, z_min: 0.6, z_max: 0.9, nx: 10, nz: 10 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Alternating iterations N_itr.
    pub n_iterations: usize,
    /// Seed for the random drive initialization.
    pub seed: u64,
    /// Independent restarts; the best final contrast wins.
    pub n_starts: usize,
    /// Ridge added to the dark-zone matrix as ridge_scale * trace(B)/N.
    pub ridge_scale: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { n_iterations: 200, seed: 100, n_starts: 1, ridge_scale: 1e-10 }
    }
}

/// Which tensor the contrast is evaluated on after optimizing on the
/// perturbed one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluateOn {
    Perturbed,
    Clean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Amplitude-perturbation signal-to-noise ratio, dB (inf disables).
    pub snr_db: f64,
    /// Phase-perturbation range R, degrees.
    pub phase_range_deg: f64,
    /// Base seed of the perturbation noise streams.
    pub seed: u64,
    /// Monte-Carlo trials per sweep cell.
    pub n_trials: usize,
    pub evaluate_on: EvaluateOn,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            snr_db: 30.0,
            phase_range_deg: 15.0,
            seed: 7,
            n_trials: 100,
            evaluate_on: EvaluateOn::Perturbed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    /// SNR sweep grid, dB (phase range held at perturbation.phase_range_deg).
    pub snr_grid_db: Vec<f64>,
    /// Phase-range sweep grid, degrees (SNR held at perturbation.snr_db).
    pub phase_grid_deg: Vec<f64>,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            snr_grid_db: vec![20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0],
            phase_grid_deg: vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Grid step in both directions, m.
    pub step: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { x_min: -1.0, x_max: 1.0, z_min: 0.0, z_max: 1.2, step: 0.005 }
    }
}

/// Complete experiment description, one-to-one with the TOML config file.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub medium: MediumParams,
    pub array: ArrayConfig,
    pub frequencies: FrequencyConfig,
    pub zones: ZonesConfig,
    pub quadrature: QuadratureSpec,
    pub optimizer: OptimizerConfig,
    pub perturbation: PerturbationConfig,
    pub robustness: RobustnessConfig,
    pub render: RenderConfig,
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq)]
#[error("configuration invalid:\n{}", self.describe())]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

impl ConfigError {
    fn describe(&self) -> String {
        self.violations
            .iter()
            .map(|v| format!("  {}: {}", v.path, v.message))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

struct Violations(Vec<Violation>);

impl Violations {
    fn new() -> Self {
        Violations(Vec::new())
    }
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation { path: path.into(), message: message.into() });
    }
    fn into_result<T>(self, value: T) -> Result<T, ConfigError> {
        if self.0.is_empty() {
            Ok(value)
        } else {
            Err(ConfigError { violations: self.0 })
        }
    }
}

/// Fully derived, validated model. No partial models escape validation:
/// either every derived field is populated or the error lists every
/// violated invariant by field path.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub medium: MediumParams,
    pub geometry: ArrayGeometry,
    pub plans: Vec<FrequencyPlan>,
    pub bright: Zone,
    pub dark: Zone,
    pub quadrature: QuadratureSpec,
    pub v0: f64,
    pub optimizer: OptimizerConfig,
    pub perturbation: PerturbationConfig,
    pub robustness: RobustnessConfig,
    pub render: RenderConfig,
    /// The configuration this model was derived from (validation is
    /// idempotent: `validate_config(&model.config)` returns an equal model).
    pub config: ExperimentConfig,
}

pub fn validate_config(config: &ExperimentConfig) -> Result<Model, ConfigError> {
    let mut v = Violations::new();

    let m = &config.medium;
    if !(m.rho0 > 0.0) {
        v.push("medium.rho0", "air density must be positive");
    }
    if !(m.c0 > 0.0) {
        v.push("medium.c0", "sound speed must be positive");
    }
    if !(m.beta > 0.0) {
        v.push("medium.beta", "nonlinearity coefficient must be positive");
    }
    if !(0.0..=100.0).contains(&m.humidity) {
        v.push("medium.humidity", "relative humidity must lie in [0, 100]");
    }
    if !(m.temperature > -273.15) {
        v.push("medium.temperature", "temperature must be above absolute zero");
    }
    if let Some(a) = m.alpha_override {
        if !(a >= 0.0) || !a.is_finite() {
            v.push("medium.alpha_override", "absorption override must be finite and >= 0");
        }
    }

    let geometry = match &config.array.element_centers {
        Some(centers) => ArrayGeometry::with_centers(config.array.element_width, centers.clone()),
        None => ArrayGeometry::closely_arranged(config.array.n_elements, config.array.element_width),
    };
    if config.array.element_centers.is_some()
        && geometry.n_elements() != config.array.n_elements
    {
        v.push(
            "array.n_elements",
            format!(
                "n_elements = {} disagrees with {} explicit centers",
                config.array.n_elements,
                geometry.n_elements()
            ),
        );
    }
    geometry.check(&mut v, "array");
    if !(config.array.v0 > 0.0) {
        v.push("array.v0", "velocity scale must be positive");
    }

    if config.frequencies.f_audio.is_empty() {
        v.push("frequencies.f_audio", "at least one audio frequency is required");
    }
    let mut plans = Vec::new();
    for &fa in &config.frequencies.f_audio {
        let (f1, f2) = derive_carriers(config.frequencies.f_center, fa);
        let plan = FrequencyPlan { f_center: config.frequencies.f_center, f_audio: fa, f1, f2 };
        plan.check(&mut v, "frequencies");
        plans.push(plan);
    }

    config.zones.bright.check(&mut v, "zones.bright");
    config.zones.dark.check(&mut v, "zones.dark");
    config.quadrature.check(
        &mut v,
        "quadrature",
        &geometry,
        [&config.zones.bright, &config.zones.dark],
    );

    if config.optimizer.n_iterations == 0 {
        v.push("optimizer.n_iterations", "at least one iteration is required");
    }
    if config.optimizer.n_starts == 0 {
        v.push("optimizer.n_starts", "at least one start is required");
    }
    if !(config.optimizer.ridge_scale >= 0.0) {
        v.push("optimizer.ridge_scale", "ridge scale must be >= 0");
    }

    if config.perturbation.n_trials == 0 {
        v.push("perturbation.n_trials", "n_trials must be at least 1");
    }
    if !(config.perturbation.phase_range_deg >= 0.0) {
        v.push("perturbation.phase_range_deg", "phase range must be >= 0");
    }
    if config.perturbation.snr_db.is_nan() {
        v.push("perturbation.snr_db", "SNR must not be NaN");
    }

    if config.robustness.snr_grid_db.is_empty() {
        v.push("robustness.snr_grid_db", "SNR grid must not be empty");
    }
    if config.robustness.phase_grid_deg.is_empty() {
        v.push("robustness.phase_grid_deg", "phase grid must not be empty");
    }

    let r = &config.render;
    if !(r.step > 0.0) {
        v.push("render.step", "render step must be positive");
    }
    if !(r.x_min < r.x_max) || !(r.z_min < r.z_max) {
        v.push("render.x_min", "render bounds must be ordered");
    }

    v.into_result(Model {
        medium: config.medium.clone(),
        geometry,
        plans,
        bright: config.zones.bright.clone(),
        dark: config.zones.dark.clone(),
        quadrature: config.quadrature.clone(),
        v0: config.array.v0,
        optimizer: config.optimizer.clone(),
        perturbation: config.perturbation.clone(),
        robustness: config.robustness.clone(),
        render: config.render.clone(),
        config: config.clone(),
    })
}

impl Model {
    /// Bright-zone control points followed by dark-zone control points;
    /// the convention every transfer tensor in this crate uses.
    pub fn control_points(&self) -> (Vec<Point2>, usize) {
        let mut pts = self.bright.control_points();
        let bright_count = pts.len();
        pts.extend(self.dark.control_points());
        (pts, bright_count)
    }
}
