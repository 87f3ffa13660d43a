//! Ground-truth deformable retina and needle kinematics.
//!
//! Depth is measured along +z into the eye, in micrometres. Lateral
//! coordinates (x, y) are micrometres in the phantom frame; x is the
//! B-scan direction and the lateral heading of the needle.
//!
//! The tissue model is deliberately small: a Gaussian indentation bump that
//! follows the needle tip until the ILM gives way, then relaxes towards a
//! residual dent (the bounce-back seen after puncture).

use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Insertion angle between the needle axis and the retinal plane.
pub const INSERTION_ANGLE_DEG: f64 = 45.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("lateral position ({x:.3}, {y:.3}) µm is outside the phantom")]
    OutOfBounds { x: f64, y: f64 },
    #[error("needle can only advance, got distance {0} µm")]
    NegativeAdvance(f64),
    #[error("invalid phantom: {0}")]
    Invalid(String),
}

/// Regular grid of depths with bilinear lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    origin: (f64, f64),
    pitch: f64,
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl HeightField {
    pub fn from_fn(
        origin: (f64, f64),
        pitch: f64,
        nx: usize,
        ny: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, PhantomError> {
        if nx < 2 || ny < 2 || !(pitch > 0.0) {
            return Err(PhantomError::Invalid(format!(
                "height field needs at least 2x2 nodes and positive pitch (got {nx}x{ny}, {pitch})"
            )));
        }
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(f(origin.0 + i as f64 * pitch, origin.1 + j as f64 * pitch));
            }
        }
        Ok(Self { origin, pitch, nx, ny, values })
    }

    pub fn from_values(
        origin: (f64, f64),
        pitch: f64,
        nx: usize,
        ny: usize,
        values: Vec<f64>,
    ) -> Result<Self, PhantomError> {
        if values.len() != nx * ny {
            return Err(PhantomError::Invalid(format!(
                "expected {} values, got {}",
                nx * ny,
                values.len()
            )));
        }
        let mut field = Self::from_fn(origin, pitch, nx, ny, |_, _| 0.0)?;
        field.values = values;
        Ok(field)
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Lateral bounds as ((x_min, x_max), (y_min, y_max)).
    pub fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        (
            (self.origin.0, self.origin.0 + (self.nx - 1) as f64 * self.pitch),
            (self.origin.1, self.origin.1 + (self.ny - 1) as f64 * self.pitch),
        )
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let ((x0, x1), (y0, y1)) = self.bounds();
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    pub fn sample(&self, x: f64, y: f64) -> Result<f64, PhantomError> {
        if !self.contains(x, y) {
            return Err(PhantomError::OutOfBounds { x, y });
        }
        let u = (x - self.origin.0) / self.pitch;
        let v = (y - self.origin.1) / self.pitch;
        let i = (u.floor() as usize).min(self.nx - 2);
        let j = (v.floor() as usize).min(self.ny - 2);
        let fu = u - i as f64;
        let fv = v - j as f64;
        let a = self.node(i, j) * (1.0 - fu) + self.node(i + 1, j) * fu;
        let b = self.node(i, j + 1) * (1.0 - fu) + self.node(i + 1, j + 1) * fu;
        Ok(a * (1.0 - fv) + b * fv)
    }
}

/// Undeformed ILM and RPE surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct RetinaRest {
    ilm: HeightField,
    rpe: HeightField,
}

impl RetinaRest {
    /// Both fields must share a grid and the RPE must lie strictly deeper
    /// than the ILM, with the thickness inside `band`.
    pub fn new(ilm: HeightField, rpe: HeightField, band: (f64, f64)) -> Result<Self, PhantomError> {
        if ilm.origin != rpe.origin || ilm.pitch != rpe.pitch || ilm.nx != rpe.nx || ilm.ny != rpe.ny
        {
            return Err(PhantomError::Invalid("ILM and RPE grids differ".into()));
        }
        for (k, (a, b)) in ilm.values.iter().zip(&rpe.values).enumerate() {
            let t = b - a;
            if !(t > 0.0) || t < band.0 || t > band.1 {
                return Err(PhantomError::Invalid(format!(
                    "rest thickness {t:.1} µm at node {k} outside band [{}, {}]",
                    band.0, band.1
                )));
            }
        }
        Ok(Self { ilm, rpe })
    }

    pub fn ilm(&self) -> &HeightField {
        &self.ilm
    }

    pub fn rpe(&self) -> &HeightField {
        &self.rpe
    }

    pub fn min_thickness(&self) -> f64 {
        self.ilm
            .values
            .iter()
            .zip(&self.rpe.values)
            .map(|(a, b)| b - a)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn lateral_extent_um(&self) -> (f64, f64) {
        let ((x0, x1), (y0, y1)) = self.ilm.bounds();
        (x1 - x0, y1 - y0)
    }
}

/// Tissue mechanics parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TissueParams {
    /// Lateral standard deviation of the indentation bump (µm).
    pub indent_sigma_um: f64,
    /// Fraction of the ILM indentation transmitted to the RPE.
    pub rpe_coupling: f64,
    /// Peak indentation at which the ILM is punctured (µm).
    pub puncture_threshold_um: f64,
    /// Fraction of the puncture indentation that remains after recoil.
    pub residual_fraction: f64,
    /// Recoil time constant (s).
    pub recoil_time_s: f64,
    /// Tissue deforms under the needle before puncture.
    pub deformable: bool,
    /// Post-puncture recoil; when false the dent stays at its puncture depth.
    pub bounce_back: bool,
}

impl Default for TissueParams {
    fn default() -> Self {
        Self {
            indent_sigma_um: 300.0,
            rpe_coupling: 0.25,
            puncture_threshold_um: 150.0,
            residual_fraction: 0.2,
            recoil_time_s: 0.5,
            deformable: true,
            bounce_back: true,
        }
    }
}

impl TissueParams {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |msg: &str| Err(PhantomError::Invalid(msg.to_string()));
        if !(self.indent_sigma_um > 0.0) {
            return bad("indent_sigma_um must be positive");
        }
        if !(0.0..=1.0).contains(&self.rpe_coupling) {
            return bad("rpe_coupling must lie in [0, 1]");
        }
        if !(self.puncture_threshold_um >= 0.0) {
            return bad("puncture_threshold_um must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.residual_fraction) {
            return bad("residual_fraction must lie in [0, 1]");
        }
        if !(self.recoil_time_s > 0.0) {
            return bad("recoil_time_s must be positive");
        }
        Ok(())
    }
}

/// Radially symmetric Gaussian dent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Indentation {
    pub center: (f64, f64),
    pub peak_um: f64,
    pub sigma_um: f64,
}

impl Indentation {
    pub fn at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        self.peak_um * (-(dx * dx + dy * dy) / (2.0 * self.sigma_um * self.sigma_um)).exp()
    }
}

/// Deformed retina at one instant.
#[derive(Debug, Clone)]
pub struct RetinaState {
    rest: Arc<RetinaRest>,
    params: TissueParams,
    indentation: Option<Indentation>,
    punctured: bool,
    puncture_time: Option<f64>,
    puncture_peak_um: f64,
    recoil_progress: f64,
    time_s: f64,
}

impl RetinaState {
    pub fn new(rest: Arc<RetinaRest>, params: TissueParams) -> Result<Self, PhantomError> {
        params.validate()?;
        // The dent compresses the retina by (1 - coupling) * peak; puncture
        // has to happen before the layers would cross.
        if params.deformable
            && params.puncture_threshold_um * (1.0 - params.rpe_coupling) >= rest.min_thickness()
        {
            return Err(PhantomError::Invalid(format!(
                "puncture threshold {} µm would collapse a {:.1} µm retina",
                params.puncture_threshold_um,
                rest.min_thickness()
            )));
        }
        Ok(Self {
            rest,
            params,
            indentation: None,
            punctured: false,
            puncture_time: None,
            puncture_peak_um: 0.0,
            recoil_progress: 0.0,
            time_s: 0.0,
        })
    }

    pub fn rest(&self) -> &RetinaRest {
        &self.rest
    }

    pub fn params(&self) -> &TissueParams {
        &self.params
    }

    pub fn indentation(&self) -> Option<&Indentation> {
        self.indentation.as_ref()
    }

    pub fn punctured(&self) -> bool {
        self.punctured
    }

    pub fn puncture_time(&self) -> Option<f64> {
        self.puncture_time
    }

    pub fn recoil_progress(&self) -> f64 {
        self.recoil_progress
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.rest.ilm.contains(x, y)
    }

    /// Indentation offset applied to the ILM at (x, y).
    pub fn indentation_at(&self, x: f64, y: f64) -> f64 {
        self.indentation.map_or(0.0, |ind| ind.at(x, y))
    }

    /// Deformed (ILM, RPE) depths at a lateral position.
    pub fn layer_depths(&self, x: f64, y: f64) -> Result<(f64, f64), PhantomError> {
        let ilm = self.rest.ilm.sample(x, y)?;
        let rpe = self.rest.rpe.sample(x, y)?;
        let dent = self.indentation_at(x, y);
        Ok((ilm + dent, rpe + self.params.rpe_coupling * dent))
    }

    /// Replaces the indentation directly. Intended for fixtures.
    pub fn with_indentation(mut self, indentation: Option<Indentation>) -> Self {
        self.indentation = indentation;
        self
    }

    /// Marks the state as punctured at the current time with the current dent.
    pub fn with_puncture(mut self) -> Self {
        self.punctured = true;
        self.puncture_time = Some(self.time_s);
        self.puncture_peak_um = self.indentation.map_or(0.0, |i| i.peak_um);
        self
    }

    /// Advances tissue time by `dt` seconds given the current needle pose.
    pub fn step(&mut self, needle: &NeedlePose, dt: f64) {
        debug_assert!(dt > 0.0);
        self.time_s += dt;
        if self.punctured {
            self.relax();
            return;
        }
        let tip = needle.tip();
        let Ok(rest_ilm) = self.rest.ilm.sample(tip.x, tip.y) else {
            return;
        };
        let penetration = tip.z - rest_ilm;
        if penetration <= 0.0 {
            self.indentation = None;
            return;
        }
        if !self.params.deformable {
            self.punctured = true;
            self.puncture_time = Some(self.time_s);
            return;
        }
        self.indentation = Some(Indentation {
            center: (tip.x, tip.y),
            peak_um: penetration,
            sigma_um: self.params.indent_sigma_um,
        });
        if penetration >= self.params.puncture_threshold_um {
            self.punctured = true;
            self.puncture_time = Some(self.time_s);
            self.puncture_peak_um = penetration;
        }
    }

    fn relax(&mut self) {
        let (Some(t0), Some(ind)) = (self.puncture_time, self.indentation.as_mut()) else {
            return;
        };
        if !self.params.bounce_back {
            return;
        }
        let elapsed = (self.time_s - t0).max(0.0);
        let decay = (-elapsed / self.params.recoil_time_s).exp();
        let rho = self.params.residual_fraction;
        ind.peak_um = self.puncture_peak_um * (rho + (1.0 - rho) * decay);
        self.recoil_progress = self.recoil_progress.max(1.0 - decay);
    }
}

/// Pure form of [`RetinaState::step`].
pub fn step_tissue(state: &RetinaState, needle: &NeedlePose, dt: f64) -> RetinaState {
    let mut next = state.clone();
    next.step(needle, dt);
    next
}

/// Needle pose. The tip is the top of the distal cross-section, the point the
/// scanner sees first.
///
/// The tip is stored as a start point plus the distance travelled so that
/// advances compose exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedlePose {
    start: Vec3,
    axis: Vec3,
    radius: f64,
    odometer: f64,
}

impl NeedlePose {
    /// Pose with a 45° insertion axis whose lateral component points along
    /// `heading_rad` (0 = +x).
    pub fn new(tip: Vec3, heading_rad: f64, radius: f64) -> Self {
        let elev = INSERTION_ANGLE_DEG.to_radians();
        let axis = Vec3::new(
            elev.cos() * heading_rad.cos(),
            elev.cos() * heading_rad.sin(),
            elev.sin(),
        );
        Self { start: tip, axis, radius, odometer: 0.0 }
    }

    pub fn tip(&self) -> Vec3 {
        self.start + self.axis * self.odometer
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn odometer(&self) -> f64 {
        self.odometer
    }

    /// Unit lateral heading of the axis.
    pub fn heading(&self) -> (f64, f64) {
        let h = (self.axis.x * self.axis.x + self.axis.y * self.axis.y).sqrt();
        (self.axis.x / h, self.axis.y / h)
    }

    /// Depth gained per micrometre of lateral travel along the heading.
    pub fn depth_slope(&self) -> f64 {
        self.axis.z / (self.axis.x * self.axis.x + self.axis.y * self.axis.y).sqrt()
    }

    pub fn advance(&self, distance: f64) -> Result<Self, PhantomError> {
        if !(distance >= 0.0) {
            return Err(PhantomError::NegativeAdvance(distance));
        }
        Ok(Self { odometer: self.odometer + distance, ..*self })
    }

    /// Depth of the needle's upper surface in the vertical column at (x, y),
    /// or `None` if the column misses the needle.
    ///
    /// Cross-sections normal to the heading are discs of `radius` whose top
    /// point lies on the line through the tip; the distal end is cut
    /// vertically at the tip.
    pub fn top_surface_depth(&self, x: f64, y: f64) -> Option<f64> {
        let tip = self.tip();
        let (hx, hy) = self.heading();
        let dx = x - tip.x;
        let dy = y - tip.y;
        let along = dx * hx + dy * hy;
        if along > 0.0 {
            return None;
        }
        let across = -dx * hy + dy * hx;
        let r2 = self.radius * self.radius - across * across;
        if r2 < 0.0 {
            return None;
        }
        let center = tip.z + self.radius + along * self.depth_slope();
        Some(center - r2.sqrt())
    }
}

pub fn advance_needle(needle: &NeedlePose, distance: f64) -> Result<NeedlePose, PhantomError> {
    needle.advance(distance)
}

/// Rest-geometry parameters for a planar, optionally tilted phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Rest ILM depth at the phantom centre (µm).
    pub ilm_depth_um: f64,
    pub thickness_um: f64,
    /// Tilt of the retinal plane about the y axis (degrees).
    pub tilt_deg: f64,
    /// Lateral extent (mm), centred on the origin.
    pub extent_mm: [f64; 2],
    pub grid_pitch_um: f64,
    pub thickness_band_um: [f64; 2],
    pub tissue: TissueParams,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            ilm_depth_um: 1000.0,
            thickness_um: 400.0,
            tilt_deg: 0.0,
            extent_mm: [4.4, 0.4],
            grid_pitch_um: 4.0,
            thickness_band_um: [300.0, 500.0],
            tissue: TissueParams::default(),
        }
    }
}

impl PhantomConfig {
    pub fn build_rest(&self) -> Result<RetinaRest, PhantomError> {
        let w = self.extent_mm[0] * 1000.0;
        let h = self.extent_mm[1] * 1000.0;
        let nx = (w / self.grid_pitch_um).round() as usize + 1;
        let ny = (h / self.grid_pitch_um).round() as usize + 1;
        let origin = (-0.5 * (nx - 1) as f64 * self.grid_pitch_um, -0.5 * (ny - 1) as f64 * self.grid_pitch_um);
        let slope = self.tilt_deg.to_radians().tan();
        let ilm = HeightField::from_fn(origin, self.grid_pitch_um, nx, ny, |x, _| {
            self.ilm_depth_um + slope * x
        })?;
        let rpe = HeightField::from_fn(origin, self.grid_pitch_um, nx, ny, |x, _| {
            self.ilm_depth_um + self.thickness_um + slope * x
        })?;
        RetinaRest::new(ilm, rpe, (self.thickness_band_um[0], self.thickness_band_um[1]))
    }

    pub fn build(&self) -> Result<RetinaState, PhantomError> {
        RetinaState::new(Arc::new(self.build_rest()?), self.tissue)
    }
}
