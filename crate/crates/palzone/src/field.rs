//! Quasilinear field model: per-element ultrasound fields via the 2D
//! Rayleigh integral, the virtual audio source density, PAL transfer
//! tensors, EDL transfer vectors, and SPL rendering.
//!
//! Conventions (time factor exp(-i omega t) omitted):
//!   p_hat_{u,n}(r)  = (rho0 omega_u v0 / 2) Int_elem H0(k_u |r - r'|) dx'
//!   q(r_v)          = (beta omega_a / (i rho0^2 c0^4)) p1*(r_v) p2(r_v)
//!   H_{m;i,j}       = (beta omega_a^2 / (4 i rho0 c0^4))
//!                     IInt p1_i*(r_v) p2_j(r_v) H0(k_a |r_m - r_v|) d2r_v
//!   h_{m;n}         = (rho0 omega_a v0 / 2) Int_elem H0(k_a |r_m - r'|) dx'
//!   p_a(r_m)        = s1^H H_m s2  (PAL)   |   h_m^T s  (EDL)
//!
//! Wavenumbers carry absorption: k = omega/c0 + i alpha. The area
//! integral is a tensor-product midpoint rule on the truncated domain;
//! element faces use Gauss-Legendre with >= 8 nodes per wavelength. Cells
//! whose center lies within one cell diagonal of the evaluation point get
//! a 4x refined sub-grid for the log-singular audio kernel. Summation
//! order is fixed (grid traversal), so tensors are bit-identical across
//! runs and worker counts; only the map over evaluation points is
//! parallel.

use crate::absorption::{absorption_coefficient, AbsorptionError};
use crate::linalg::{vec_dot, CMat, C64};
use crate::model::{ArrayGeometry, FrequencyPlan, MediumParams, Point2, QuadratureSpec, Zone};
use crate::special::{hankel1_0_unchecked, SpecialFnError};
use rayon::prelude::*;
use thiserror::Error;

/// SPL values below this are clamped (and zero pressure maps here).
pub const SPL_FLOOR_DB: f64 = -120.0;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error(transparent)]
    Absorption(#[from] AbsorptionError),
    #[error(transparent)]
    Special(#[from] SpecialFnError),
    #[error("grid point {index} at z = {z} is not above the baffle (z > 0 required)")]
    PointNotAboveBaffle { index: usize, z: f64 },
    #[error("grid point {index} at x = {x} lies on the source line inside an element")]
    SingularSourcePoint { index: usize, x: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("quadrature domain [{x_min}, {x_max}] does not enclose the array aperture")]
    QuadratureExcludesAperture { x_min: f64, x_max: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("control point index {index} out of range ({len} points)")]
    IndexOutOfRange { index: usize, len: usize },
}

// ---------------------------------------------------------------------------
// Gauss-Legendre rules
// ---------------------------------------------------------------------------

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// nodes ascending. Computed by Newton iteration on the recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess for the i-th root (descending).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence: P_k(x), derivative from the standard relation.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Node count giving at least 8 nodes per wavelength across an element
/// face, never fewer than 4.
pub fn nodes_per_element(element_width: f64, wavelength: f64) -> usize {
    ((8.0 * element_width / wavelength).ceil() as usize).max(4)
}

/// Complex wavenumber omega/c0 + i alpha(f).
pub fn wavenumber(medium: &MediumParams, f_hz: f64) -> Result<C64, FieldError> {
    let alpha = absorption_coefficient(medium, f_hz)?;
    Ok(C64::new(std::f64::consts::TAU * f_hz / medium.c0, alpha))
}

/// Line integral of the Hankel kernel over one element face:
/// Int_{cx-hw}^{cx+hw} H0(k |r - (x', 0)|) dx' by Gauss-Legendre.
/// No domain checks; r on the face inside the element is the caller's
/// responsibility.
pub fn element_kernel_integral(
    center_x: f64,
    half_width: f64,
    k: C64,
    nodes: &[f64],
    weights: &[f64],
    p: Point2,
) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (t, w) in nodes.iter().zip(weights) {
        let xp = center_x + half_width * t;
        let dx = p.x - xp;
        let d = (dx * dx + p.z * p.z).sqrt();
        acc += *w * hankel1_0_unchecked(k * d);
    }
    acc * half_width
}

// ---------------------------------------------------------------------------
// Ultrasound field tables
// ---------------------------------------------------------------------------

/// Per-element, per-carrier complex pressures on a point grid (for the
/// configured drive scale v0). Layout is row-major: `carrier1[g * N + n]`
/// is element n at grid point g.
#[derive(Clone, Debug, PartialEq)]
pub struct UltrasoundFieldTable {
    pub points: Vec<Point2>,
    pub n_elements: usize,
    pub carrier1: Vec<C64>,
    pub carrier2: Vec<C64>,
}

/// Rayleigh-integral ultrasound pressures of every element at both
/// carrier frequencies, on an arbitrary grid with z > 0.
pub fn ultrasound_field(
    geometry: &ArrayGeometry,
    medium: &MediumParams,
    plan: &FrequencyPlan,
    v0: f64,
    points: &[Point2],
) -> Result<UltrasoundFieldTable, FieldError> {
    let half = geometry.element_width() / 2.0;
    for (index, p) in points.iter().enumerate() {
        if p.z == 0.0
            && geometry
                .element_centers()
                .iter()
                .any(|&c| (p.x - c).abs() <= half)
        {
            return Err(FieldError::SingularSourcePoint { index, x: p.x });
        }
        if !(p.z > 0.0) {
            return Err(FieldError::PointNotAboveBaffle { index, z: p.z });
        }
    }
    let n = geometry.n_elements();
    let mut table = UltrasoundFieldTable {
        points: points.to_vec(),
        n_elements: n,
        carrier1: vec![C64::new(0.0, 0.0); points.len() * n],
        carrier2: vec![C64::new(0.0, 0.0); points.len() * n],
    };
    for (f, out) in [(plan.f1(), &mut table.carrier1), (plan.f2(), &mut table.carrier2)] {
        let k = wavenumber(medium, f)?;
        let pref = 0.5 * medium.rho0 * std::f64::consts::TAU * f * v0;
        let (nodes, weights) = gauss_legendre(nodes_per_element(
            geometry.element_width(),
            medium.c0 / f,
        ));
        out.par_chunks_mut(n)
            .zip(points.par_iter())
            .for_each(|(row, p)| {
                for (slot, &cx) in row.iter_mut().zip(geometry.element_centers()) {
                    *slot = pref * element_kernel_integral(cx, half, k, &nodes, &weights, *p);
                }
            });
        if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(FieldError::NonFinite("ultrasound field table".into()));
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Drives and virtual sources
// ---------------------------------------------------------------------------

/// Complex drive vectors, dimensionless multiples of v0.
#[derive(Clone, Debug, PartialEq)]
pub enum SourcePair {
    Pal { s1: Vec<C64>, s2: Vec<C64> },
    Edl { s: Vec<C64> },
}

impl SourcePair {
    pub fn n_elements(&self) -> usize {
        match self {
            SourcePair::Pal { s1, .. } => s1.len(),
            SourcePair::Edl { s } => s.len(),
        }
    }
}

/// Which array model a tensor describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArrayKind {
    Pal,
    Edl,
}

impl ArrayKind {
    pub fn label(&self) -> &'static str {
        match self {
            ArrayKind::Pal => "pal",
            ArrayKind::Edl => "edl",
        }
    }
}

/// Virtual audio source density q on the table grid:
/// q = (beta omega_a / (i rho0^2 c0^4)) p1* p2 with the carrier fields
/// superposed from the drive vectors.
pub fn virtual_source_density(
    table: &UltrasoundFieldTable,
    medium: &MediumParams,
    plan: &FrequencyPlan,
    drives: &SourcePair,
) -> Result<Vec<C64>, FieldError> {
    let (s1, s2) = match drives {
        SourcePair::Pal { s1, s2 } => (s1, s2),
        SourcePair::Edl { .. } => {
            return Err(FieldError::DimensionMismatch(
                "virtual sources require PAL drives".into(),
            ))
        }
    };
    let n = table.n_elements;
    if s1.len() != n || s2.len() != n {
        return Err(FieldError::DimensionMismatch(format!(
            "drive length {} / {} does not match {} elements",
            s1.len(),
            s2.len(),
            n
        )));
    }
    let c0_4 = medium.c0.powi(4);
    // beta omega_a / (i rho0^2 c0^4)  =  -i beta omega_a / (rho0^2 c0^4)
    let pref = C64::new(0.0, -1.0) * (medium.beta * plan.omega_audio() / (medium.rho0 * medium.rho0 * c0_4));
    Ok((0..table.points.len())
        .map(|g| {
            let row1 = &table.carrier1[g * n..(g + 1) * n];
            let row2 = &table.carrier2[g * n..(g + 1) * n];
            let p1: C64 = row1.iter().zip(s1).map(|(p, s)| p * s).sum();
            let p2: C64 = row2.iter().zip(s2).map(|(p, s)| p * s).sum();
            pref * p1.conj() * p2
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Transfer tensors
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    /// One N x N matrix per control point.
    Pal(Vec<CMat>),
    /// One length-N vector per control point.
    Edl(Vec<Vec<C64>>),
}

/// Audio transfer functions at the control points. The first
/// `bright_count` points belong to the bright zone, the remainder to the
/// dark zone.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferTensor {
    pub points: Vec<Point2>,
    pub bright_count: usize,
    pub f_audio: f64,
    pub data: TensorData,
}

impl TransferTensor {
    pub fn kind(&self) -> ArrayKind {
        match self.data {
            TensorData::Pal(_) => ArrayKind::Pal,
            TensorData::Edl(_) => ArrayKind::Edl,
        }
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn n_elements(&self) -> usize {
        match &self.data {
            TensorData::Pal(ms) => ms.first().map_or(0, |m| m.n()),
            TensorData::Edl(vs) => vs.first().map_or(0, |v| v.len()),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = C64> + '_ {
        let pal = match &self.data {
            TensorData::Pal(ms) => Some(ms),
            _ => None,
        };
        let edl = match &self.data {
            TensorData::Edl(vs) => Some(vs),
            _ => None,
        };
        pal.into_iter()
            .flatten()
            .flat_map(|m| m.data().iter().copied())
            .chain(edl.into_iter().flatten().flat_map(|v| v.iter().copied()))
    }

    /// Root-mean-square magnitude over every complex entry.
    pub fn rms_magnitude(&self) -> f64 {
        let (sum, count) = self
            .entries()
            .fold((0.0, 0usize), |(s, c), z| (s + z.norm_sqr(), c + 1));
        if count == 0 {
            0.0
        } else {
            (sum / count as f64).sqrt()
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Midpoint-rule kernel column for one evaluation point: entry g is the
/// quadrature weight times the (possibly sub-grid refined) audio kernel
/// H0(k |target - cell_g|).
pub fn audio_kernel_column(
    cells: &[Point2],
    quad: &QuadratureSpec,
    k: C64,
    target: Point2,
) -> Vec<C64> {
    let w = quad.cell_weight();
    let diag = (quad.dx * quad.dx + quad.dz * quad.dz).sqrt();
    // Distances are floored at a quarter of the sub-cell diagonal; only
    // points essentially on top of a sub-cell center are affected.
    let sub_floor = diag / 16.0;
    let w_sub = w / 16.0;
    cells
        .iter()
        .map(|c| {
            let d = c.distance(&target);
            if d > diag {
                w * hankel1_0_unchecked(k * d)
            } else {
                let mut acc = C64::new(0.0, 0.0);
                for sz in 0..4 {
                    let z = c.z + (sz as f64 - 1.5) * quad.dz / 4.0;
                    for sx in 0..4 {
                        let x = c.x + (sx as f64 - 1.5) * quad.dx / 4.0;
                        let dd = Point2::new(x, z).distance(&target).max(sub_floor);
                        acc += hankel1_0_unchecked(k * dd);
                    }
                }
                w_sub * acc
            }
        })
        .collect()
}

/// PAL transfer tensor over the given control points (bright points
/// first). Each H_m is assembled through the factorization
/// H_m = P1^H diag(w . h_m) P2 with P_u the grid x N field table and h_m
/// the kernel column, so the cost per control point is O(G N^2).
pub fn assemble_pal_tensor(
    geometry: &ArrayGeometry,
    medium: &MediumParams,
    plan: &FrequencyPlan,
    quad: &QuadratureSpec,
    v0: f64,
    points: Vec<Point2>,
    bright_count: usize,
) -> Result<TransferTensor, FieldError> {
    let (ap_lo, ap_hi) = geometry.aperture();
    if quad.x_min > ap_lo + 1e-12 || quad.x_max < ap_hi - 1e-12 {
        return Err(FieldError::QuadratureExcludesAperture {
            x_min: quad.x_min,
            x_max: quad.x_max,
        });
    }
    let cells = quad.cell_centers();
    let table = ultrasound_field(geometry, medium, plan, v0, &cells)?;
    let k_a = wavenumber(medium, plan.f_audio())?;
    let c0_4 = medium.c0.powi(4);
    // beta omega_a^2 / (4 i rho0 c0^4) = -i beta omega_a^2 / (4 rho0 c0^4)
    let pref = C64::new(0.0, -1.0)
        * (medium.beta * plan.omega_audio() * plan.omega_audio() / (4.0 * medium.rho0 * c0_4));
    let n = geometry.n_elements();

    let matrices: Vec<CMat> = points
        .par_iter()
        .map(|&target| {
            let kern = audio_kernel_column(&cells, quad, k_a, target);
            let mut h = CMat::zeros(n);
            for (g, kg) in kern.iter().enumerate() {
                let row1 = &table.carrier1[g * n..(g + 1) * n];
                let row2 = &table.carrier2[g * n..(g + 1) * n];
                for i in 0..n {
                    let a = row1[i].conj() * kg;
                    let hrow = h.row_mut(i);
                    for (hj, p2) in hrow.iter_mut().zip(row2) {
                        *hj += a * p2;
                    }
                }
            }
            for v in h.data_mut() {
                *v *= pref;
            }
            h
        })
        .collect();

    let tensor = TransferTensor {
        points,
        bright_count,
        f_audio: plan.f_audio(),
        data: TensorData::Pal(matrices),
    };
    if !tensor.all_finite() {
        return Err(FieldError::NonFinite("PAL transfer tensor".into()));
    }
    Ok(tensor)
}

/// EDL transfer vectors: the same baffled Rayleigh integral evaluated
/// directly at the audio frequency.
pub fn assemble_edl_vector(
    geometry: &ArrayGeometry,
    medium: &MediumParams,
    plan: &FrequencyPlan,
    v0: f64,
    points: Vec<Point2>,
    bright_count: usize,
) -> Result<TransferTensor, FieldError> {
    let k_a = wavenumber(medium, plan.f_audio())?;
    let pref = 0.5 * medium.rho0 * plan.omega_audio() * v0;
    let half = geometry.element_width() / 2.0;
    let (nodes, weights) = gauss_legendre(nodes_per_element(
        geometry.element_width(),
        medium.c0 / plan.f_audio(),
    ));
    for (index, p) in points.iter().enumerate() {
        if !(p.z > 0.0) {
            return Err(FieldError::PointNotAboveBaffle { index, z: p.z });
        }
    }
    let vectors: Vec<Vec<C64>> = points
        .par_iter()
        .map(|&p| {
            geometry
                .element_centers()
                .iter()
                .map(|&cx| pref * element_kernel_integral(cx, half, k_a, &nodes, &weights, p))
                .collect()
        })
        .collect();
    let tensor = TransferTensor {
        points,
        bright_count,
        f_audio: plan.f_audio(),
        data: TensorData::Edl(vectors),
    };
    if !tensor.all_finite() {
        return Err(FieldError::NonFinite("EDL transfer vector".into()));
    }
    Ok(tensor)
}

/// Audio pressure at control point m: s1^H H_m s2 for PAL tensors,
/// h_m^T s for EDL tensors.
pub fn audio_pressure(
    tensor: &TransferTensor,
    drives: &SourcePair,
    m: usize,
) -> Result<C64, FieldError> {
    if m >= tensor.n_points() {
        return Err(FieldError::IndexOutOfRange { index: m, len: tensor.n_points() });
    }
    match (&tensor.data, drives) {
        (TensorData::Pal(ms), SourcePair::Pal { s1, s2 }) => {
            let h = &ms[m];
            if s1.len() != h.n() || s2.len() != h.n() {
                return Err(FieldError::DimensionMismatch(format!(
                    "drive length {}/{} vs tensor size {}",
                    s1.len(),
                    s2.len(),
                    h.n()
                )));
            }
            Ok(vec_dot(s1, &h.matvec(s2)))
        }
        (TensorData::Edl(vs), SourcePair::Edl { s }) => {
            let h = &vs[m];
            if s.len() != h.len() {
                return Err(FieldError::DimensionMismatch(format!(
                    "drive length {} vs tensor size {}",
                    s.len(),
                    h.len()
                )));
            }
            Ok(h.iter().zip(s).map(|(a, b)| a * b).sum())
        }
        _ => Err(FieldError::DimensionMismatch(
            "tensor mode and drive mode disagree".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Field rendering
// ---------------------------------------------------------------------------

/// Uniform render grid (inclusive of both ends at the given step).
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGrid {
    pub xs: Vec<f64>,
    pub zs: Vec<f64>,
}

impl RenderGrid {
    pub fn from_bounds(x_min: f64, x_max: f64, z_min: f64, z_max: f64, step: f64) -> Self {
        let axis = |lo: f64, hi: f64| {
            let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            (0..n).map(|i| lo + i as f64 * step).collect::<Vec<f64>>()
        };
        RenderGrid { xs: axis(x_min, x_max), zs: axis(z_min, z_max) }
    }

    pub fn points(&self) -> Vec<Point2> {
        let mut pts = Vec::with_capacity(self.xs.len() * self.zs.len());
        for &z in &self.zs {
            for &x in &self.xs {
                pts.push(Point2::new(x, z));
            }
        }
        pts
    }
}

/// Sound pressure level map in dB re 20 uPa, row-major over (z, x).
#[derive(Clone, Debug, PartialEq)]
pub struct SplMap {
    pub xs: Vec<f64>,
    pub zs: Vec<f64>,
    pub spl_db: Vec<f64>,
}

impl SplMap {
    /// Mean SPL over the grid points falling inside a zone rectangle.
    pub fn zone_mean(&self, zone: &Zone) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (iz, &z) in self.zs.iter().enumerate() {
            for (ix, &x) in self.xs.iter().enumerate() {
                if zone.contains(&Point2::new(x, z)) {
                    sum += self.spl_db[iz * self.xs.len() + ix];
                    count += 1;
                }
            }
        }
        if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        }
    }
}

/// Complex amplitude -> SPL treating |p| as a peak value (divide by
/// sqrt 2 for RMS); non-finite and tiny values clamp to the floor.
pub fn spl_db(p: C64) -> f64 {
    let rms = p.norm() / std::f64::consts::SQRT_2;
    if !(rms > 0.0) {
        return SPL_FLOOR_DB;
    }
    let spl = 20.0 * (rms / 20e-6).log10();
    if spl.is_finite() {
        spl.max(SPL_FLOOR_DB)
    } else {
        SPL_FLOOR_DB
    }
}

/// Render the audio field of optimized drives on a grid. PAL fields
/// integrate the virtual source density against the audio kernel; EDL
/// fields evaluate the Rayleigh integral directly.
pub fn render_field(
    geometry: &ArrayGeometry,
    medium: &MediumParams,
    plan: &FrequencyPlan,
    quad: &QuadratureSpec,
    v0: f64,
    drives: &SourcePair,
    grid: &RenderGrid,
) -> Result<SplMap, FieldError> {
    let table = match drives {
        SourcePair::Pal { .. } => {
            Some(ultrasound_field(geometry, medium, plan, v0, &quad.cell_centers())?)
        }
        SourcePair::Edl { .. } => None,
    };
    render_field_with_table(geometry, medium, plan, quad, v0, table.as_ref(), drives, grid)
}

/// [`render_field`] with a caller-supplied ultrasound table on the
/// quadrature cell centers (PAL drives only; pass None for EDL).
#[allow(clippy::too_many_arguments)]
pub fn render_field_with_table(
    geometry: &ArrayGeometry,
    medium: &MediumParams,
    plan: &FrequencyPlan,
    quad: &QuadratureSpec,
    v0: f64,
    table: Option<&UltrasoundFieldTable>,
    drives: &SourcePair,
    grid: &RenderGrid,
) -> Result<SplMap, FieldError> {
    let points = grid.points();
    let k_a = wavenumber(medium, plan.f_audio())?;
    let pressures: Vec<C64> = match drives {
        SourcePair::Pal { .. } => {
            let cells = quad.cell_centers();
            let table = table.ok_or_else(|| {
                FieldError::DimensionMismatch("PAL rendering needs a field table".into())
            })?;
            if table.points.len() != cells.len() {
                return Err(FieldError::DimensionMismatch(format!(
                    "field table has {} points but the quadrature grid has {}",
                    table.points.len(),
                    cells.len()
                )));
            }
            let q = virtual_source_density(table, medium, plan, drives)?;
            let pref = 0.25 * medium.rho0 * plan.omega_audio();
            points
                .par_iter()
                .map(|&target| {
                    let kern = audio_kernel_column(&cells, quad, k_a, target);
                    let s: C64 = kern.iter().zip(&q).map(|(k, qv)| k * qv).sum();
                    pref * s
                })
                .collect()
        }
        SourcePair::Edl { s } => {
            if s.len() != geometry.n_elements() {
                return Err(FieldError::DimensionMismatch(format!(
                    "drive length {} vs {} elements",
                    s.len(),
                    geometry.n_elements()
                )));
            }
            let pref = 0.5 * medium.rho0 * plan.omega_audio() * v0;
            let half = geometry.element_width() / 2.0;
            let (nodes, weights) = gauss_legendre(nodes_per_element(
                geometry.element_width(),
                medium.c0 / plan.f_audio(),
            ));
            points
                .par_iter()
                .map(|&p| {
                    // On-baffle rows (z = 0) are rendered as-is; the GL nodes
                    // never coincide with grid points, so values stay finite.
                    geometry
                        .element_centers()
                        .iter()
                        .zip(s)
                        .map(|(&cx, sv)| {
                            sv * pref * element_kernel_integral(cx, half, k_a, &nodes, &weights, p)
                        })
                        .sum()
                })
                .collect()
        }
    };
    Ok(SplMap {
        xs: grid.xs.clone(),
        zs: grid.zs.clone(),
        spl_db: pressures.into_iter().map(spl_db).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ExperimentConfig;
    use approx::assert_relative_eq;

    fn lossless_medium() -> MediumParams {
        MediumParams { alpha_override: Some(0.0), ..MediumParams::default() }
    }

    fn plan_1k() -> FrequencyPlan {
        FrequencyPlan::new(40_000.0, 1_000.0).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n-point rule is exact through degree 2n-1.
        let (nodes, weights) = gauss_legendre(5);
        let val: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| w * (3.0 * x.powi(8) + x.powi(3) - x + 2.0))
            .sum();
        // Int_{-1}^{1} 3x^8 + x^3 - x + 2 dx = 6/9 + 4
        assert_relative_eq!(val, 6.0 / 9.0 + 4.0, max_relative = 1e-13);
        let wsum: f64 = weights.iter().sum();
        assert_relative_eq!(wsum, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn cylindrical_spreading_far_from_a_single_element() {
        let geom = ArrayGeometry::closely_arranged(1, 0.01);
        let medium = lossless_medium();
        let plan = plan_1k();
        let pts = vec![Point2::new(0.0, 2.0), Point2::new(0.0, 8.0)];
        let table = ultrasound_field(&geom, &medium, &plan, 1.0, &pts).unwrap();
        let ratio = table.carrier1[0].norm() / table.carrier1[1].norm();
        assert!((ratio - 2.0).abs() < 0.1, "1/sqrt(z) decay violated: {ratio}");
    }

    #[test]
    fn zero_drive_scale_gives_zero_field() {
        let geom = ArrayGeometry::closely_arranged(2, 0.01);
        let table = ultrasound_field(
            &geom,
            &lossless_medium(),
            &plan_1k(),
            0.0,
            &[Point2::new(0.0, 0.5)],
        )
        .unwrap();
        assert!(table.carrier1.iter().chain(&table.carrier2).all(|z| z.norm() == 0.0));
    }

    #[test]
    fn single_element_matches_adaptive_quadrature_oracle() {
        // Self-convergent oracle: composite 8-node GL panels, panel count
        // doubled until the value changes by < 1e-8 relative.
        let medium = lossless_medium();
        let f = 40_000.0;
        let k = wavenumber(&medium, f).unwrap();
        let p = Point2::new(0.0, 0.5);
        let (half, pref) = (0.005, 0.5 * medium.rho0 * std::f64::consts::TAU * f * 1.0);
        let oracle = {
            let (n8, w8) = gauss_legendre(8);
            let eval = |panels: usize| {
                let mut acc = C64::new(0.0, 0.0);
                let width = 2.0 * half / panels as f64;
                for i in 0..panels {
                    let c = -half + (i as f64 + 0.5) * width;
                    acc += element_kernel_integral(c, width / 2.0, k, &n8, &w8, p);
                }
                pref * acc
            };
            let mut panels = 1;
            let mut prev = eval(panels);
            loop {
                panels *= 2;
                let next = eval(panels);
                if (next - prev).norm() <= 1e-8 * next.norm() || panels > 4096 {
                    break next;
                }
                prev = next;
            }
        };
        let geom = ArrayGeometry::closely_arranged(1, 0.01);
        let plan = FrequencyPlan::new(40_250.0, 500.0).unwrap(); // f1 = 40 kHz
        let table = ultrasound_field(&geom, &medium, &plan, 1.0, &[p]).unwrap();
        assert_relative_eq!(table.carrier1[0].re, oracle.re, max_relative = 1e-7);
        assert_relative_eq!(table.carrier1[0].im, oracle.im, max_relative = 1e-7);
    }

    #[test]
    fn field_point_domain_errors() {
        let geom = ArrayGeometry::closely_arranged(2, 0.01);
        let err = ultrasound_field(
            &geom,
            &lossless_medium(),
            &plan_1k(),
            1.0,
            &[Point2::new(0.004, 0.0)],
        )
        .unwrap_err();
        assert!(matches!(err, FieldError::SingularSourcePoint { .. }));
        let err = ultrasound_field(
            &geom,
            &lossless_medium(),
            &plan_1k(),
            1.0,
            &[Point2::new(0.3, -0.1)],
        )
        .unwrap_err();
        assert!(matches!(err, FieldError::PointNotAboveBaffle { .. }));
    }

    #[test]
    fn absorption_reduces_field_magnitude() {
        let geom = ArrayGeometry::closely_arranged(1, 0.01);
        let plan = plan_1k();
        let p = [Point2::new(0.05, 0.8)];
        let lossless = ultrasound_field(&geom, &lossless_medium(), &plan, 1.0, &p).unwrap();
        let damped_medium =
            MediumParams { alpha_override: Some(0.5), ..MediumParams::default() };
        let damped = ultrasound_field(&geom, &damped_medium, &plan, 1.0, &p).unwrap();
        assert!(damped.carrier1[0].norm() < lossless.carrier1[0].norm());
        assert!(damped.carrier2[0].norm() < lossless.carrier2[0].norm());
    }

    fn three_element_table() -> (UltrasoundFieldTable, MediumParams, FrequencyPlan) {
        let geom = ArrayGeometry::closely_arranged(3, 0.01);
        let medium = MediumParams::default();
        let plan = plan_1k();
        let pts: Vec<Point2> = (0..5).map(|i| Point2::new(0.01 * i as f64, 0.2)).collect();
        let table = ultrasound_field(&geom, &medium, &plan, 1.0, &pts).unwrap();
        (table, medium, plan)
    }

    #[test]
    fn virtual_sources_vanish_with_zero_s1() {
        let (table, medium, plan) = three_element_table();
        let zero = vec![C64::new(0.0, 0.0); 3];
        let ones = vec![C64::new(1.0, 0.0); 3];
        let q = virtual_source_density(
            &table,
            &medium,
            &plan,
            &SourcePair::Pal { s1: zero, s2: ones },
        )
        .unwrap();
        assert!(q.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn virtual_sources_are_bilinear_in_drive_magnitude() {
        let (table, medium, plan) = three_element_table();
        let s: Vec<C64> = vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.5), C64::new(0.7, 0.0)];
        let twice: Vec<C64> = s.iter().map(|z| 2.0 * z).collect();
        let q1 = virtual_source_density(
            &table,
            &medium,
            &plan,
            &SourcePair::Pal { s1: s.clone(), s2: s.clone() },
        )
        .unwrap();
        let q4 = virtual_source_density(
            &table,
            &medium,
            &plan,
            &SourcePair::Pal { s1: twice.clone(), s2: twice },
        )
        .unwrap();
        for (a, b) in q1.iter().zip(&q4) {
            assert_relative_eq!(4.0 * a.norm(), b.norm(), max_relative = 1e-12);
        }
    }

    #[test]
    fn virtual_source_phase_conjugates_s1() {
        let (table, medium, plan) = three_element_table();
        let s: Vec<C64> = vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.5), C64::new(0.7, 0.0)];
        let phi = 0.7;
        let rot = C64::from_polar(1.0, phi);
        let s_rot: Vec<C64> = s.iter().map(|z| z * rot).collect();
        let q0 = virtual_source_density(
            &table,
            &medium,
            &plan,
            &SourcePair::Pal { s1: s.clone(), s2: s.clone() },
        )
        .unwrap();
        let q1 = virtual_source_density(
            &table,
            &medium,
            &plan,
            &SourcePair::Pal { s1: s_rot, s2: s },
        )
        .unwrap();
        let expect = C64::from_polar(1.0, -phi);
        for (a, b) in q0.iter().zip(&q1) {
            if a.norm() > 0.0 {
                assert_relative_eq!((b / a).re, expect.re, max_relative = 1e-10);
                assert_relative_eq!((b / a).im, expect.im, max_relative = 1e-10);
            }
        }
    }

    fn desk_quad() -> QuadratureSpec {
        QuadratureSpec { x_min: -0.06, x_max: 0.06, z_min: 0.001, z_max: 0.25, dx: 0.005, dz: 0.005 }
    }

    #[test]
    fn diagonal_entry_equals_single_element_audio_pressure() {
        // H_{m;n,n} with every other element removed equals the audio
        // pressure of a one-element array for unit drives.
        let medium = MediumParams::default();
        let plan = plan_1k();
        let quad = desk_quad();
        let pts = vec![Point2::new(-0.02, 0.2)];
        let full_geom = ArrayGeometry::closely_arranged(3, 0.01);
        let full =
            assemble_pal_tensor(&full_geom, &medium, &plan, &quad, 1.0, pts.clone(), 1).unwrap();
        let n = 1usize; // middle element is at x = 0
        let single_geom = ArrayGeometry::with_centers(0.01, vec![0.0]);
        let single =
            assemble_pal_tensor(&single_geom, &medium, &plan, &quad, 1.0, pts, 1).unwrap();
        let (h_full, h_single) = match (&full.data, &single.data) {
            (TensorData::Pal(a), TensorData::Pal(b)) => (&a[0], &b[0]),
            _ => unreachable!(),
        };
        let d = h_full[(n, n)] - h_single[(0, 0)];
        assert!(d.norm() <= 1e-12 * h_single[(0, 0)].norm());
    }

    #[test]
    fn mirror_symmetry_of_tensor_assembly() {
        // Mirroring geometry and control points in x -> -x maps entries as
        // H_{m;i,j} -> H_{m';N+1-i,N+1-j}. The default-style geometry is its
        // own mirror image with indices reversed.
        let medium = MediumParams::default();
        let plan = plan_1k();
        let quad = desk_quad();
        let n = 4usize;
        let geom = ArrayGeometry::closely_arranged(n, 0.01);
        let p = Point2::new(-0.03, 0.17);
        let p_mirror = Point2::new(0.03, 0.17);
        let t = assemble_pal_tensor(&geom, &medium, &plan, &quad, 1.0, vec![p], 1).unwrap();
        let tm =
            assemble_pal_tensor(&geom, &medium, &plan, &quad, 1.0, vec![p_mirror], 1).unwrap();
        let (h, hm) = match (&t.data, &tm.data) {
            (TensorData::Pal(a), TensorData::Pal(b)) => (&a[0], &b[0]),
            _ => unreachable!(),
        };
        let scale = h.frobenius_norm();
        for i in 0..n {
            for j in 0..n {
                let d = h[(i, j)] - hm[(n - 1 - i, n - 1 - j)];
                assert!(
                    d.norm() <= 1e-11 * scale,
                    "mirror mismatch at ({i},{j}): {}",
                    d.norm() / scale
                );
            }
        }
    }

    #[test]
    fn factorized_assembly_matches_naive_triple_loop() {
        // Brute-force oracle: recompute every H_{m;i,j} with a plain loop
        // over cells, fresh per-point Rayleigh integrals, and the same
        // refinement rule, independent of the table/factorized path.
        let medium = MediumParams::default();
        let plan = plan_1k();
        let quad = desk_quad();
        let geom = ArrayGeometry::closely_arranged(2, 0.01);
        let pts = vec![Point2::new(-0.02, 0.18), Point2::new(0.025, 0.21)];
        let tensor =
            assemble_pal_tensor(&geom, &medium, &plan, &quad, 1.0, pts.clone(), 1).unwrap();

        let k1 = wavenumber(&medium, plan.f1()).unwrap();
        let k2 = wavenumber(&medium, plan.f2()).unwrap();
        let ka = wavenumber(&medium, plan.f_audio()).unwrap();
        let half = geom.element_width() / 2.0;
        let (n1, w1) =
            gauss_legendre(nodes_per_element(geom.element_width(), medium.c0 / plan.f1()));
        let (n2, w2) =
            gauss_legendre(nodes_per_element(geom.element_width(), medium.c0 / plan.f2()));
        let cells = quad.cell_centers();
        let c0_4 = medium.c0.powi(4);
        let pref = C64::new(0.0, -1.0)
            * (medium.beta * plan.omega_audio() * plan.omega_audio() / (4.0 * medium.rho0 * c0_4));
        let pref1 = 0.5 * medium.rho0 * plan.omega1();
        let pref2 = 0.5 * medium.rho0 * plan.omega2();

        let ms = match &tensor.data {
            TensorData::Pal(ms) => ms,
            _ => unreachable!(),
        };
        for (m, &target) in pts.iter().enumerate() {
            let kern = audio_kernel_column(&cells, &quad, ka, target);
            for i in 0..2 {
                for j in 0..2 {
                    let mut acc = C64::new(0.0, 0.0);
                    for (g, cell) in cells.iter().enumerate() {
                        let p1 = pref1
                            * element_kernel_integral(
                                geom.element_centers()[i],
                                half,
                                k1,
                                &n1,
                                &w1,
                                *cell,
                            );
                        let p2 = pref2
                            * element_kernel_integral(
                                geom.element_centers()[j],
                                half,
                                k2,
                                &n2,
                                &w2,
                                *cell,
                            );
                        acc += p1.conj() * p2 * kern[g];
                    }
                    let expect = pref * acc;
                    let got = ms[m][(i, j)];
                    assert!(
                        (got - expect).norm() <= 1e-10 * expect.norm(),
                        "entry ({i},{j}) of point {m}: {} vs {}",
                        got,
                        expect
                    );
                }
            }
        }
    }

    #[test]
    fn carrier_swap_transposes_the_tensor() {
        // Swapping which carrier each element index radiates (with the
        // conjugation staying on the lower carrier) relabels the slots of
        // the bilinear form, so the swapped-construction entry (j,i) must
        // equal the standard entry (i,j). Recomputed entry-by-entry on a
        // 2-element instance.
        let medium = MediumParams::default();
        let plan = plan_1k();
        let quad = desk_quad();
        let geom = ArrayGeometry::closely_arranged(2, 0.01);
        let target = Point2::new(-0.025, 0.19);
        let tensor =
            assemble_pal_tensor(&geom, &medium, &plan, &quad, 1.0, vec![target], 1).unwrap();
        let h = match &tensor.data {
            TensorData::Pal(ms) => &ms[0],
            _ => unreachable!(),
        };

        let k1 = wavenumber(&medium, plan.f1()).unwrap();
        let k2 = wavenumber(&medium, plan.f2()).unwrap();
        let ka = wavenumber(&medium, plan.f_audio()).unwrap();
        let half = geom.element_width() / 2.0;
        let (n1, w1) =
            gauss_legendre(nodes_per_element(geom.element_width(), medium.c0 / plan.f1()));
        let (n2, w2) =
            gauss_legendre(nodes_per_element(geom.element_width(), medium.c0 / plan.f2()));
        let cells = quad.cell_centers();
        let kern = audio_kernel_column(&cells, &quad, ka, target);
        let pref = C64::new(0.0, -1.0)
            * (medium.beta * plan.omega_audio() * plan.omega_audio()
                / (4.0 * medium.rho0 * medium.c0.powi(4)));
        let pref1 = 0.5 * medium.rho0 * plan.omega1();
        let pref2 = 0.5 * medium.rho0 * plan.omega2();
        // swapped construction: first index radiates carrier 2, second
        // radiates (conjugated) carrier 1
        let swapped_entry = |a: usize, b: usize| -> C64 {
            let mut acc = C64::new(0.0, 0.0);
            for (g, cell) in cells.iter().enumerate() {
                let p1b = pref1
                    * element_kernel_integral(
                        geom.element_centers()[b],
                        half,
                        k1,
                        &n1,
                        &w1,
                        *cell,
                    );
                let p2a = pref2
                    * element_kernel_integral(
                        geom.element_centers()[a],
                        half,
                        k2,
                        &n2,
                        &w2,
                        *cell,
                    );
                acc += p1b.conj() * p2a * kern[g];
            }
            pref * acc
        };
        for i in 0..2 {
            for j in 0..2 {
                let expect = h[(i, j)];
                let got = swapped_entry(j, i);
                assert!(
                    (got - expect).norm() <= 1e-12 * expect.norm(),
                    "swapped ({j},{i}) != standard ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn audio_pressure_rejects_bad_indices_and_modes() {
        let medium = MediumParams::default();
        let plan = plan_1k();
        let geom = ArrayGeometry::closely_arranged(2, 0.01);
        let pts = vec![Point2::new(0.1, 0.5)];
        let t = assemble_edl_vector(&geom, &medium, &plan, 1.0, pts, 1).unwrap();
        let s = vec![C64::new(1.0, 0.0); 2];
        assert!(matches!(
            audio_pressure(&t, &SourcePair::Edl { s: s.clone() }, 5),
            Err(FieldError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            audio_pressure(&t, &SourcePair::Edl { s: vec![C64::new(1.0, 0.0); 3] }, 0),
            Err(FieldError::DimensionMismatch(_))
        ));
        assert!(matches!(
            audio_pressure(&t, &SourcePair::Pal { s1: s.clone(), s2: s }, 0),
            Err(FieldError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn edl_matches_ultrasound_field_at_audio_frequency() {
        // A single centered element driven at the audio frequency is the
        // same kernel; carrier 1 of a plan with f1 = f_audio must agree.
        let medium = MediumParams::default();
        let geom = ArrayGeometry::closely_arranged(1, 0.01);
        let f_audio = 2_000.0;
        let pts = vec![Point2::new(0.05, 0.4)];
        let edl_plan = FrequencyPlan::new(40_000.0, f_audio).unwrap();
        let edl =
            assemble_edl_vector(&geom, &medium, &edl_plan, 1.0, pts.clone(), 1).unwrap();
        let carrier_plan = FrequencyPlan::new(2_500.0, 1_000.0).unwrap(); // f1 = 2 kHz
        let table = ultrasound_field(&geom, &medium, &carrier_plan, 1.0, &pts).unwrap();
        let h = match &edl.data {
            TensorData::Edl(v) => v[0][0],
            _ => unreachable!(),
        };
        assert_relative_eq!(h.re, table.carrier1[0].re, max_relative = 1e-12);
        assert_relative_eq!(h.im, table.carrier1[0].im, max_relative = 1e-12);
    }

    #[test]
    fn edl_pressure_is_linear_and_symmetric() {
        let medium = MediumParams::default();
        let geom = ArrayGeometry::closely_arranged(4, 0.01);
        let plan = plan_1k();
        let pts = vec![Point2::new(-0.21, 0.5), Point2::new(0.21, 0.5)];
        let t = assemble_edl_vector(&geom, &medium, &plan, 1.0, pts, 1).unwrap();
        let s: Vec<C64> = vec![
            C64::new(0.2, -0.4),
            C64::new(0.5, 0.1),
            C64::new(-0.3, 0.3),
            C64::new(0.1, 0.6),
        ];
        let c = C64::new(1.7, -0.4);
        let cs: Vec<C64> = s.iter().map(|z| z * c).collect();
        let p = audio_pressure(&t, &SourcePair::Edl { s: s.clone() }, 0).unwrap();
        let pc = audio_pressure(&t, &SourcePair::Edl { s: cs }, 0).unwrap();
        assert_relative_eq!((pc / p).re, c.re, max_relative = 1e-12);
        assert_relative_eq!((pc / p).im, c.im, max_relative = 1e-12);

        // mirrored control points see mirrored element magnitudes
        let vs = match &t.data {
            TensorData::Edl(v) => v,
            _ => unreachable!(),
        };
        for n in 0..4 {
            assert_relative_eq!(
                vs[0][n].norm(),
                vs[1][3 - n].norm(),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn audio_pressure_extracts_tensor_entries() {
        let medium = MediumParams::default();
        let plan = plan_1k();
        let quad = desk_quad();
        let geom = ArrayGeometry::closely_arranged(2, 0.01);
        let t = assemble_pal_tensor(
            &geom,
            &medium,
            &plan,
            &quad,
            1.0,
            vec![Point2::new(0.0, 0.2)],
            1,
        )
        .unwrap();
        let h = match &t.data {
            TensorData::Pal(ms) => &ms[0],
            _ => unreachable!(),
        };
        let e = |i: usize| {
            let mut v = vec![C64::new(0.0, 0.0); 2];
            v[i] = C64::new(1.0, 0.0);
            v
        };
        for i in 0..2 {
            for j in 0..2 {
                let p = audio_pressure(&t, &SourcePair::Pal { s1: e(i), s2: e(j) }, 0).unwrap();
                assert!((p - h[(i, j)]).norm() < 1e-15 * h[(i, j)].norm().max(1e-300));
            }
        }
        // sesquilinearity: scaling s1 by c scales p by conj(c)
        let c = C64::new(0.3, 1.1);
        let s1c: Vec<C64> = e(0).iter().map(|z| z * c).collect();
        let p0 = audio_pressure(&t, &SourcePair::Pal { s1: e(0), s2: e(1) }, 0).unwrap();
        let pc = audio_pressure(&t, &SourcePair::Pal { s1: s1c, s2: e(1) }, 0).unwrap();
        assert!((pc - c.conj() * p0).norm() < 1e-12 * p0.norm());
        // superposition in s2
        let u: Vec<C64> = vec![C64::new(0.4, 0.2), C64::new(-0.1, 0.9)];
        let v: Vec<C64> = vec![C64::new(-0.7, 0.3), C64::new(0.2, -0.2)];
        let uv: Vec<C64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        let pu = audio_pressure(&t, &SourcePair::Pal { s1: e(0), s2: u }, 0).unwrap();
        let pv = audio_pressure(&t, &SourcePair::Pal { s1: e(0), s2: v }, 0).unwrap();
        let puv = audio_pressure(&t, &SourcePair::Pal { s1: e(0), s2: uv }, 0).unwrap();
        assert!((puv - (pu + pv)).norm() < 1e-12 * puv.norm());
    }

    #[test]
    fn spl_reference_levels() {
        let sqrt2 = std::f64::consts::SQRT_2;
        assert_relative_eq!(spl_db(C64::new(20e-6 * sqrt2, 0.0)), 0.0, epsilon = 1e-12);
        assert_relative_eq!(spl_db(C64::new(200e-6 * sqrt2, 0.0)), 20.0, epsilon = 1e-12);
        assert_eq!(spl_db(C64::new(0.0, 0.0)), SPL_FLOOR_DB);
    }

    #[test]
    fn assembly_is_bit_identical_across_worker_counts() {
        let medium = MediumParams::default();
        let plan = plan_1k();
        let quad = desk_quad();
        let geom = ArrayGeometry::closely_arranged(3, 0.01);
        let pts = vec![Point2::new(-0.02, 0.2), Point2::new(0.01, 0.15)];
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    assemble_pal_tensor(&geom, &medium, &plan, &quad, 1.0, pts.clone(), 1)
                        .unwrap()
                })
        };
        let single = run(1);
        let multi = run(3);
        assert_eq!(single, multi);
    }

    #[test]
    fn render_grid_dimensions_match_config() {
        let cfg = ExperimentConfig::default();
        let g = RenderGrid::from_bounds(
            cfg.render.x_min,
            cfg.render.x_max,
            cfg.render.z_min,
            cfg.render.z_max,
            cfg.render.step,
        );
        assert_eq!(g.xs.len(), 401);
        assert_eq!(g.zs.len(), 241);
    }
}
