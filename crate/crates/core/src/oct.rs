//! B⁵-scan synthesis by vertical raycasting through the phantom.
//!
//! A scan is a stack of label rasters: `n_bscans` parallel B-scans along x,
//! each `n_ascans` columns wide and `depth_pixels` deep. Only the first
//! reflective interface of each structure is labelled (needle top surface,
//! ILM, RPE); structures below the needle are shadowed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phantom::{NeedlePose, RetinaState, Vec3};

#[derive(Debug, Error)]
pub enum OctError {
    #[error("voxel index ({0}, {1}, {2}) outside raster bounds")]
    IndexOutOfBounds(usize, usize, usize),
    #[error("scan column at ({x:.1}, {y:.1}) µm lies outside the phantom")]
    OutsidePhantom { x: f64, y: f64 },
    #[error("invalid scan configuration: {0}")]
    InvalidConfig(String),
    #[error("raster corpus: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Segmentation classes, stored as their raster codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Needle = 1,
    Ilm = 2,
    Rpe = 3,
}

impl Label {
    pub const SURFACES: [Label; 3] = [Label::Needle, Label::Ilm, Label::Rpe];

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Background),
            1 => Some(Self::Needle),
            2 => Some(Self::Ilm),
            3 => Some(Self::Rpe),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Background => "background",
            Self::Needle => "needle",
            Self::Ilm => "ilm",
            Self::Rpe => "rpe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Lateral extent (mm): along the B-scans, then across them.
    pub extent_mm: [f64; 2],
    pub n_bscans: usize,
    pub n_ascans_per_bscan: usize,
    pub depth_pixels: usize,
    pub depth_range_mm: f64,
    pub acquisition_ms: f64,
    /// Lateral centre of the scan area in phantom coordinates (µm).
    pub center_um: [f64; 2],
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            extent_mm: [4.0, 0.1],
            n_bscans: 5,
            n_ascans_per_bscan: 500,
            depth_pixels: 1024,
            depth_range_mm: 4.0,
            acquisition_ms: 115.0,
            center_um: [0.0, 0.0],
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), OctError> {
        let bad = |m: &str| Err(OctError::InvalidConfig(m.into()));
        if self.n_bscans < 2 {
            return bad("n_bscans must be at least 2");
        }
        if self.n_ascans_per_bscan < 2 || self.depth_pixels < 2 {
            return bad("rasters need at least 2 A-scans and 2 depth pixels");
        }
        if self.n_bscans > u16::MAX as usize
            || self.n_ascans_per_bscan > u16::MAX as usize
            || self.depth_pixels > u16::MAX as usize
        {
            return bad("raster dimensions are limited to 65535");
        }
        if !(self.extent_mm[0] > 0.0 && self.extent_mm[1] > 0.0 && self.depth_range_mm > 0.0) {
            return bad("extents must be positive");
        }
        if !(self.acquisition_ms > 0.0) {
            return bad("acquisition_ms must be positive");
        }
        Ok(())
    }

    pub fn spacing(&self) -> VoxelSpacing {
        VoxelSpacing {
            lateral: self.extent_mm[0] * 1000.0 / (self.n_ascans_per_bscan - 1) as f64,
            bscan: self.extent_mm[1] * 1000.0 / (self.n_bscans - 1) as f64,
            axial: self.depth_range_mm * 1000.0 / self.depth_pixels as f64,
        }
    }

    /// Phantom-frame position of voxel (0, 0, 0).
    pub fn origin(&self) -> Vec3 {
        Vec3::new(
            self.center_um[0] - 500.0 * self.extent_mm[0],
            self.center_um[1] - 500.0 * self.extent_mm[1],
            0.0,
        )
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n_bscans: self.n_bscans,
            n_ascans: self.n_ascans_per_bscan,
            depth: self.depth_pixels,
        }
    }
}

/// Voxel pitch per axis (µm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpacing {
    pub lateral: f64,
    pub bscan: f64,
    pub axial: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_bscans: usize,
    pub n_ascans: usize,
    pub depth: usize,
}

impl Dims {
    pub fn columns(&self) -> usize {
        self.n_bscans * self.n_ascans
    }

    pub fn voxels(&self) -> usize {
        self.columns() * self.depth
    }

    pub fn contains(&self, b: usize, a: usize, d: usize) -> bool {
        b < self.n_bscans && a < self.n_ascans && d < self.depth
    }
}

/// Scan-local metric position of a voxel: `(a·lateral, b·bscan, d·axial)`.
pub fn voxel_to_metric(
    idx: (usize, usize, usize),
    spacing: VoxelSpacing,
    dims: Dims,
) -> Result<Vec3, OctError> {
    let (b, a, d) = idx;
    if !dims.contains(b, a, d) {
        return Err(OctError::IndexOutOfBounds(b, a, d));
    }
    Ok(Vec3::new(
        a as f64 * spacing.lateral,
        b as f64 * spacing.bscan,
        d as f64 * spacing.axial,
    ))
}

/// Nearest voxel to a scan-local metric position, if inside the raster.
pub fn metric_to_voxel(p: Vec3, spacing: VoxelSpacing, dims: Dims) -> Option<(usize, usize, usize)> {
    let b = (p.y / spacing.bscan).round();
    let a = (p.x / spacing.lateral).round();
    let d = (p.z / spacing.axial).round();
    if b < 0.0 || a < 0.0 || d < 0.0 {
        return None;
    }
    let idx = (b as usize, a as usize, d as usize);
    dims.contains(idx.0, idx.1, idx.2).then_some(idx)
}

/// Label raster of one B⁵-scan acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct B5Scan {
    dims: Dims,
    spacing: VoxelSpacing,
    origin: Vec3,
    timestamp: f64,
    labels: Vec<u8>,
}

impl B5Scan {
    pub fn empty(dims: Dims, spacing: VoxelSpacing, origin: Vec3, timestamp: f64) -> Self {
        Self { dims, spacing, origin, timestamp, labels: vec![0; dims.voxels()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn raw(&self) -> &[u8] {
        &self.labels
    }

    fn offset(&self, b: usize, a: usize) -> usize {
        (b * self.dims.n_ascans + a) * self.dims.depth
    }

    pub fn column(&self, b: usize, a: usize) -> &[u8] {
        let o = self.offset(b, a);
        &self.labels[o..o + self.dims.depth]
    }

    pub fn column_mut(&mut self, b: usize, a: usize) -> &mut [u8] {
        let o = self.offset(b, a);
        let depth = self.dims.depth;
        &mut self.labels[o..o + depth]
    }

    pub fn get(&self, b: usize, a: usize, d: usize) -> Label {
        Label::from_code(self.column(b, a)[d]).unwrap_or(Label::Background)
    }

    pub fn set(&mut self, b: usize, a: usize, d: usize, label: Label) {
        self.column_mut(b, a)[d] = label as u8;
    }

    /// Phantom-frame lateral position of column (b, a).
    pub fn column_position(&self, b: usize, a: usize) -> (f64, f64) {
        (
            self.origin.x + a as f64 * self.spacing.lateral,
            self.origin.y + b as f64 * self.spacing.bscan,
        )
    }

    /// Phantom-frame position of a voxel.
    pub fn voxel_position(&self, b: usize, a: usize, d: usize) -> Result<Vec3, OctError> {
        Ok(self.origin + voxel_to_metric((b, a, d), self.spacing, self.dims)?)
    }

    /// Depth index nearest to a phantom-frame depth, unclamped.
    pub fn quantize_depth(&self, z: f64) -> i64 {
        ((z - self.origin.z) / self.spacing.axial).round() as i64
    }

    pub fn count(&self, label: Label) -> usize {
        let code = label as u8;
        self.labels.iter().filter(|&&v| v == code).count()
    }

    /// Labelled voxels as (b, a, d, code), in raster order.
    pub fn sparse(&self) -> Vec<(u16, u16, u16, u8)> {
        let mut out = Vec::new();
        for b in 0..self.dims.n_bscans {
            for a in 0..self.dims.n_ascans {
                for (d, &v) in self.column(b, a).iter().enumerate() {
                    if v != 0 {
                        out.push((b as u16, a as u16, d as u16, v));
                    }
                }
            }
        }
        out
    }

    pub fn from_sparse(
        dims: Dims,
        spacing: VoxelSpacing,
        origin: Vec3,
        timestamp: f64,
        voxels: &[(u16, u16, u16, u8)],
    ) -> Result<Self, OctError> {
        let mut scan = Self::empty(dims, spacing, origin, timestamp);
        for &(b, a, d, v) in voxels {
            let (b, a, d) = (b as usize, a as usize, d as usize);
            if !dims.contains(b, a, d) {
                return Err(OctError::IndexOutOfBounds(b, a, d));
            }
            if Label::from_code(v).is_none() {
                return Err(OctError::Corpus(format!("unknown class code {v}")));
            }
            scan.column_mut(b, a)[d] = v;
        }
        Ok(scan)
    }
}

/// Raycasts the phantom and needle into a label raster.
///
/// A needle that misses the scan volume simply leaves no needle labels.
pub fn acquire(
    state: &RetinaState,
    needle: &NeedlePose,
    cfg: &ScanConfig,
    timestamp: f64,
) -> Result<B5Scan, OctError> {
    cfg.validate()?;
    let mut scan = B5Scan::empty(cfg.dims(), cfg.spacing(), cfg.origin(), timestamp);
    let depth = scan.dims.depth as i64;
    for b in 0..scan.dims.n_bscans {
        for a in 0..scan.dims.n_ascans {
            let (x, y) = scan.column_position(b, a);
            let (ilm, rpe) = state
                .layer_depths(x, y)
                .map_err(|_| OctError::OutsidePhantom { x, y })?;
            let needle_top = needle.top_surface_depth(x, y);
            let occluded = |z: f64| needle_top.is_some_and(|n| n <= z);
            let mut mark = |z: f64, label: Label| {
                let d = scan.quantize_depth(z);
                if (0..depth).contains(&d) {
                    scan.set(b, a, d as usize, label);
                }
            };
            if !occluded(ilm) {
                mark(ilm, Label::Ilm);
            }
            if !occluded(rpe) {
                mark(rpe, Label::Rpe);
            }
            if let Some(z) = needle_top {
                mark(z, Label::Needle);
            }
        }
    }
    Ok(scan)
}

fn meta_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.meta"))
}

/// File name of B-scan `b` of a raster set.
pub fn bscan_file_name(stem: &str, b: usize) -> String {
    format!("{stem}_b{b}.png")
}

/// Writes one 8-bit PNG per B-scan (width = A-scans, height = depth, pixel =
/// class code) plus a `key = value` metadata sidecar.
pub fn write_raster_set(scan: &B5Scan, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, OctError> {
    fs::create_dir_all(dir)?;
    let dims = scan.dims;
    let mut written = Vec::with_capacity(dims.n_bscans + 1);
    for b in 0..dims.n_bscans {
        let mut img = GrayImage::new(dims.n_ascans as u32, dims.depth as u32);
        for a in 0..dims.n_ascans {
            for (d, &v) in scan.column(b, a).iter().enumerate() {
                img.put_pixel(a as u32, d as u32, image::Luma([v]));
            }
        }
        let path = dir.join(bscan_file_name(stem, b));
        img.save(&path)?;
        written.push(path);
    }
    let mut meta = String::new();
    let s = scan.spacing;
    let o = scan.origin;
    let _ = writeln!(meta, "n_bscans = {}", dims.n_bscans);
    let _ = writeln!(meta, "n_ascans = {}", dims.n_ascans);
    let _ = writeln!(meta, "depth_pixels = {}", dims.depth);
    let _ = writeln!(meta, "spacing_lateral_um = {}", s.lateral);
    let _ = writeln!(meta, "spacing_bscan_um = {}", s.bscan);
    let _ = writeln!(meta, "spacing_axial_um = {}", s.axial);
    let _ = writeln!(meta, "origin_x_um = {}", o.x);
    let _ = writeln!(meta, "origin_y_um = {}", o.y);
    let _ = writeln!(meta, "origin_z_um = {}", o.z);
    let _ = writeln!(meta, "timestamp_s = {}", scan.timestamp);
    let path = meta_path(dir, stem);
    fs::write(&path, meta)?;
    written.push(path);
    Ok(written)
}

/// Reads a raster set written by [`write_raster_set`] (or exported from a
/// real segmentation with the same layout).
pub fn read_raster_set(dir: &Path, stem: &str) -> Result<B5Scan, OctError> {
    let text = fs::read_to_string(meta_path(dir, stem))?;
    let mut kv = std::collections::HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| OctError::Corpus(format!("malformed metadata line {line:?}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<f64, OctError> {
        kv.get(k)
            .ok_or_else(|| OctError::Corpus(format!("missing metadata key {k}")))?
            .parse::<f64>()
            .map_err(|e| OctError::Corpus(format!("{k}: {e}")))
    };
    let count = |k: &str| -> Result<usize, OctError> {
        let v = get(k)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(OctError::Corpus(format!("{k} must be a positive integer")));
        }
        Ok(v as usize)
    };
    let dims = Dims {
        n_bscans: count("n_bscans")?,
        n_ascans: count("n_ascans")?,
        depth: count("depth_pixels")?,
    };
    let spacing = VoxelSpacing {
        lateral: get("spacing_lateral_um")?,
        bscan: get("spacing_bscan_um")?,
        axial: get("spacing_axial_um")?,
    };
    let origin = Vec3::new(get("origin_x_um")?, get("origin_y_um")?, get("origin_z_um")?);
    let mut scan = B5Scan::empty(dims, spacing, origin, get("timestamp_s")?);
    for b in 0..dims.n_bscans {
        let img = image::open(dir.join(bscan_file_name(stem, b)))?.into_luma8();
        if img.width() as usize != dims.n_ascans || img.height() as usize != dims.depth {
            return Err(OctError::Corpus(format!(
                "B-scan {b} is {}x{}, expected {}x{}",
                img.width(),
                img.height(),
                dims.n_ascans,
                dims.depth
            )));
        }
        for a in 0..dims.n_ascans {
            let col = scan.column_mut(b, a);
            for (d, v) in col.iter_mut().enumerate() {
                let code = img.get_pixel(a as u32, d as u32).0[0];
                if Label::from_code(code).is_none() {
                    return Err(OctError::Corpus(format!("unknown class code {code} in B-scan {b}")));
                }
                *v = code;
            }
        }
    }
    Ok(scan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::PhantomConfig;

    fn phantom() -> RetinaState {
        PhantomConfig::default().build().unwrap()
    }

    fn far_needle() -> NeedlePose {
        // tip well outside the scanned area
        NeedlePose::new(Vec3::new(-1.0e6, 0.0, 0.0), 0.0, 50.0)
    }

    fn first(scan: &B5Scan, b: usize, a: usize, label: Label) -> Option<usize> {
        scan.column(b, a).iter().position(|&v| v == label as u8)
    }

    #[test]
    fn flat_layers_without_needle() {
        let cfg = ScanConfig::default();
        let scan = acquire(&phantom(), &far_needle(), &cfg, 0.0).unwrap();
        let d = cfg.spacing().axial;
        for b in 0..cfg.n_bscans {
            for a in 0..cfg.n_ascans_per_bscan {
                let col = scan.column(b, a);
                assert_eq!(col.iter().filter(|&&v| v == Label::Ilm as u8).count(), 1);
                assert_eq!(col.iter().filter(|&&v| v == Label::Rpe as u8).count(), 1);
                assert_eq!(col.iter().filter(|&&v| v == Label::Needle as u8).count(), 0);
                assert_eq!(first(&scan, b, a, Label::Ilm), Some((1000.0 / d).round() as usize));
                assert_eq!(first(&scan, b, a, Label::Rpe), Some((1400.0 / d).round() as usize));
            }
        }
    }

    #[test]
    fn ilm_index_for_default_spacing() {
        let cfg = ScanConfig::default();
        let spacing = cfg.spacing();
        assert!((spacing.axial - 3.90625).abs() < 1e-12);
        let scan = acquire(&phantom(), &far_needle(), &cfg, 0.0).unwrap();
        let oracle = (1000.0 / spacing.axial).round() as i64;
        let idx = first(&scan, 2, 250, Label::Ilm).unwrap() as i64;
        assert!((idx - 256).abs() <= 1);
        assert_eq!(idx, oracle);
    }

    #[test]
    fn needle_shadows_its_column() {
        let cfg = ScanConfig::default();
        let scan0 = B5Scan::empty(cfg.dims(), cfg.spacing(), cfg.origin(), 0.0);
        let (x, y) = scan0.column_position(2, 250);
        let needle = NeedlePose::new(Vec3::new(x, y, 700.0), 0.0, 50.0);
        let scan = acquire(&phantom(), &needle, &cfg, 0.0).unwrap();
        assert!(first(&scan, 2, 250, Label::Needle).is_some());
        assert_eq!(first(&scan, 2, 250, Label::Ilm), None);
        assert_eq!(first(&scan, 2, 250, Label::Rpe), None);
        // a column past the tip is untouched
        assert_eq!(first(&scan, 2, 260, Label::Needle), None);
        assert!(first(&scan, 2, 260, Label::Ilm).is_some());
    }

    #[test]
    fn needle_inside_retina_hides_only_deeper_layer() {
        let cfg = ScanConfig::default();
        let scan0 = B5Scan::empty(cfg.dims(), cfg.spacing(), cfg.origin(), 0.0);
        let (x, y) = scan0.column_position(2, 250);
        let mut state = phantom();
        let needle = NeedlePose::new(Vec3::new(x, y, 1200.0), 0.0, 50.0);
        state = state.with_puncture();
        let scan = acquire(&state, &needle, &cfg, 0.0).unwrap();
        let n = first(&scan, 2, 250, Label::Needle).unwrap();
        let i = first(&scan, 2, 250, Label::Ilm).unwrap();
        assert!(i < n);
        assert_eq!(first(&scan, 2, 250, Label::Rpe), None);
    }

    #[test]
    fn shadow_matches_geometry() {
        let cfg = ScanConfig::default();
        let needle = NeedlePose::new(Vec3::new(100.0, 7.0, 1100.0), 0.0, 50.0);
        let state = phantom().with_puncture();
        let scan = acquire(&state, &needle, &cfg, 0.0).unwrap();
        for b in 0..cfg.n_bscans {
            for a in 0..cfg.n_ascans_per_bscan {
                let (x, y) = scan.column_position(b, a);
                let (ilm, rpe) = state.layer_depths(x, y).unwrap();
                let top = needle.top_surface_depth(x, y);
                let has_needle = first(&scan, b, a, Label::Needle).is_some();
                let needle_visible = top.is_some_and(|z| scan.quantize_depth(z) >= 0);
                assert_eq!(has_needle, needle_visible);
                for (z, label) in [(ilm, Label::Ilm), (rpe, Label::Rpe)] {
                    let occluded = top.is_some_and(|n| n <= z);
                    assert_eq!(first(&scan, b, a, label).is_none(), occluded, "({b},{a}) {label:?}");
                }
            }
        }
    }

    #[test]
    fn quantization_within_half_voxel() {
        let cfg = ScanConfig::default();
        let mut pc = PhantomConfig::default();
        pc.tilt_deg = 2.3;
        let state = pc.build().unwrap();
        let scan = acquire(&state, &far_needle(), &cfg, 0.0).unwrap();
        let half = 0.5 * cfg.spacing().axial;
        for b in 0..cfg.n_bscans {
            for a in (0..cfg.n_ascans_per_bscan).step_by(7) {
                let (x, y) = scan.column_position(b, a);
                let (ilm, _) = state.layer_depths(x, y).unwrap();
                let d = first(&scan, b, a, Label::Ilm).unwrap();
                let z = scan.voxel_position(b, a, d).unwrap().z;
                assert!((z - ilm).abs() <= half + 1e-9);
            }
        }
    }

    #[test]
    fn acquisition_is_deterministic() {
        let cfg = ScanConfig::default();
        let needle = NeedlePose::new(Vec3::new(0.0, 3.0, 900.0), 0.0, 50.0);
        let a = acquire(&phantom(), &needle, &cfg, 0.1).unwrap();
        let b = acquire(&phantom(), &needle, &cfg, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn voxel_metric_basics() {
        let spacing = VoxelSpacing { lateral: 8.0, bscan: 25.0, axial: 3.9 };
        let dims = Dims { n_bscans: 5, n_ascans: 500, depth: 1024 };
        assert_eq!(voxel_to_metric((0, 0, 0), spacing, dims).unwrap(), Vec3::zeros());
        assert!((voxel_to_metric((0, 0, 100), spacing, dims).unwrap().z - 390.0).abs() < 1e-9);
        assert!(matches!(
            voxel_to_metric((5, 0, 0), spacing, dims),
            Err(OctError::IndexOutOfBounds(5, 0, 0))
        ));
    }

    #[test]
    fn metric_voxel_round_trip_exhaustive() {
        let spacing = VoxelSpacing { lateral: 8.016, bscan: 25.0, axial: 3.90625 };
        let dims = Dims { n_bscans: 12, n_ascans: 12, depth: 12 };
        // 10³ metric sample points spread over the raster, including
        // positions just shy of a half-voxel boundary
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    let frac = |n: usize| n as f64 * 1.0999;
                    let p = Vec3::new(
                        frac(i) * spacing.lateral,
                        frac(j) * spacing.bscan,
                        frac(k) * spacing.axial,
                    );
                    let idx = metric_to_voxel(p, spacing, dims).unwrap();
                    let q = voxel_to_metric(idx, spacing, dims).unwrap();
                    assert!((q.x - p.x).abs() <= 0.5 * spacing.lateral + 1e-9);
                    assert!((q.y - p.y).abs() <= 0.5 * spacing.bscan + 1e-9);
                    assert!((q.z - p.z).abs() <= 0.5 * spacing.axial + 1e-9);
                }
            }
        }
    }

    #[test]
    fn raster_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScanConfig { n_ascans_per_bscan: 60, depth_pixels: 400, ..Default::default() };
        let needle = NeedlePose::new(Vec3::new(0.0, 10.0, 900.0), 0.0, 50.0);
        let scan = acquire(&phantom(), &needle, &cfg, 1.25).unwrap();
        let files = write_raster_set(&scan, dir.path(), "frame0000").unwrap();
        assert_eq!(files.len(), cfg.n_bscans + 1);
        let back = read_raster_set(dir.path(), "frame0000").unwrap();
        assert_eq!(back, scan);
    }

    #[test]
    fn corpus_rejects_bad_codes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ScanConfig { n_ascans_per_bscan: 8, depth_pixels: 16, ..Default::default() };
        let scan = B5Scan::empty(cfg.dims(), cfg.spacing(), cfg.origin(), 0.0);
        write_raster_set(&scan, dir.path(), "x").unwrap();
        let mut img = GrayImage::new(8, 16);
        img.put_pixel(0, 0, image::Luma([9]));
        img.save(dir.path().join(bscan_file_name("x", 0))).unwrap();
        assert!(matches!(read_raster_set(dir.path(), "x"), Err(OctError::Corpus(_))));
    }

    #[test]
    fn sparse_round_trip() {
        let cfg = ScanConfig::default();
        let needle = NeedlePose::new(Vec3::new(-100.0, 0.0, 800.0), 0.0, 50.0);
        let scan = acquire(&phantom(), &needle, &cfg, 0.0).unwrap();
        let back =
            B5Scan::from_sparse(scan.dims(), scan.spacing(), scan.origin(), 0.0, &scan.sparse()).unwrap();
        assert_eq!(back, scan);
    }
}
