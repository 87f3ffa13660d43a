//! Per-frame perception: segmentation, surface extraction, needle line fit,
//! shadow inpainting and tip detection.

mod corruption;
mod inpaint;
mod ransac;
mod surfaces;
mod tip;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corruption::{segment, CorruptionModel};
pub use inpaint::{inpaint_layers, inpainted_count};
pub use ransac::{fit_line_lsq, fit_needle_line, NeedleLine};
pub use surfaces::{
    extract_surfaces, ColumnSurfaces, Layer, LayerSample, Provenance, SurfaceCloud,
};
pub use tip::{detect_tip, TipEstimate};

use crate::oct::B5Scan;
use crate::phantom::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("no usable needle: {found} needle sample(s)")]
    NoNeedle { found: usize },
    #[error("needle samples are degenerate (all coincident)")]
    DegenerateNeedle,
    #[error("{layer} is absent from the whole scan; cannot inpaint")]
    InpaintingImpossible { layer: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    pub ransac_threshold_um: f64,
    pub ransac_iterations: usize,
    pub ransac_seed: u64,
    /// Distal fraction of the needle extent searched for the tip.
    pub tip_window_fraction: f64,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self {
            ransac_threshold_um: 30.0,
            ransac_iterations: 256,
            ransac_seed: 0,
            tip_window_fraction: 0.1,
        }
    }
}

/// Drops needle samples farther than `threshold` from `line`.
pub fn remove_needle_outliers(cloud: &SurfaceCloud, line: &NeedleLine, threshold: f64) -> SurfaceCloud {
    let mut out = cloud.clone();
    for b in 0..cloud.n_bscans() {
        for a in 0..cloud.n_ascans() {
            if let Some(z) = cloud.get(b, a).needle {
                let (x, y) = cloud.lateral_position(b, a);
                if line.distance(&Vec3::new(x, y, z)) > threshold {
                    out.get_mut(b, a).needle = None;
                }
            }
        }
    }
    out
}

/// Everything the controller needs from one frame.
#[derive(Debug, Clone)]
pub struct Perception {
    pub cloud: SurfaceCloud,
    pub line: NeedleLine,
    pub tip: TipEstimate,
}

/// Runs the post-segmentation pipeline on a label raster.
pub fn perceive(scan: &B5Scan, params: &PerceptionParams) -> Result<Perception, PerceptionError> {
    let cloud = extract_surfaces(scan);
    let points: Vec<Vec3> = cloud.needle_points().into_iter().map(|(_, _, p)| p).collect();
    let line = fit_needle_line(
        &points,
        params.ransac_threshold_um,
        params.ransac_iterations,
        params.ransac_seed,
    )?;
    let cloud = remove_needle_outliers(&cloud, &line, params.ransac_threshold_um);
    let cloud = inpaint_layers(&cloud)?;
    let tip = detect_tip(&cloud, &line, params.tip_window_fraction)?;
    Ok(Perception { cloud, line, tip })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oct::{acquire, Label, ScanConfig};
    use crate::phantom::{NeedlePose, PhantomConfig};

    fn needle_scan() -> (B5Scan, NeedlePose) {
        let cfg = ScanConfig::default();
        let state = PhantomConfig::default().build().unwrap();
        let needle = NeedlePose::new(Vec3::new(-150.0, 4.0, 800.0), 0.0, 50.0);
        (acquire(&state, &needle, &cfg, 0.0).unwrap(), needle)
    }

    #[test]
    fn outlier_removal_drops_far_points() {
        let (mut scan, _) = needle_scan();
        // spurious needle hits deep in the tissue, far from the shaft
        for a in [400, 420, 440] {
            scan.set(2, a, 300, Label::Needle);
        }
        let cloud = extract_surfaces(&scan);
        let pts: Vec<Vec3> = cloud.needle_points().into_iter().map(|p| p.2).collect();
        let line = fit_needle_line(&pts, 30.0, 256, 0).unwrap();
        let cleaned = remove_needle_outliers(&cloud, &line, 30.0);
        let kept = cleaned.needle_points();
        assert!(kept.len() > pts.len() / 2);
        assert!(kept.iter().all(|(_, _, p)| line.distance(p) <= 30.0));
        for a in [400, 420, 440] {
            assert!(cleaned.get(2, a).needle.is_none());
        }
    }

    #[test]
    fn outlier_removal_noops() {
        let (scan, _) = needle_scan();
        let cloud = extract_surfaces(&scan);
        let pts: Vec<Vec3> = cloud.needle_points().into_iter().map(|p| p.2).collect();
        let line = fit_needle_line(&pts, 30.0, 256, 0).unwrap();
        // flank samples of the outer B-scans sit farther than 30 µm from the
        // top line; once they are gone a second pass changes nothing
        let cleaned = remove_needle_outliers(&cloud, &line, 30.0);
        assert_eq!(remove_needle_outliers(&cleaned, &line, 30.0), cleaned);

        let cfg = ScanConfig { n_ascans_per_bscan: 30, depth_pixels: 64, ..Default::default() };
        let state = PhantomConfig::default().build().unwrap();
        let far = NeedlePose::new(Vec3::new(-1e6, 0.0, 0.0), 0.0, 50.0);
        let empty = extract_surfaces(&acquire(&state, &far, &cfg, 0.0).unwrap());
        assert_eq!(remove_needle_outliers(&empty, &line, 30.0), empty);
    }

    #[test]
    fn clean_pipeline_tracks_tip() {
        let (scan, needle) = needle_scan();
        let p = perceive(&scan, &PerceptionParams::default()).unwrap();
        assert!(p.cloud.layers_complete());
        let err = p.tip.position.z - needle.tip().z;
        assert!(err.abs() <= needle.radius() + 0.5 * scan.spacing().axial, "{err}");
        assert!(p.line.direction.dot(&needle.axis()) > (1.0f64).to_radians().cos());
    }

    #[test]
    fn pipeline_without_needle_fails() {
        let cfg = ScanConfig::default();
        let state = PhantomConfig::default().build().unwrap();
        let far = NeedlePose::new(Vec3::new(-1e6, 0.0, 0.0), 0.0, 50.0);
        let scan = acquire(&state, &far, &cfg, 0.0).unwrap();
        assert!(matches!(
            perceive(&scan, &PerceptionParams::default()),
            Err(PerceptionError::NoNeedle { found: 0 })
        ));
    }

    #[test]
    fn more_dropout_never_fewer_inpainted() {
        let (scan, _) = needle_scan();
        let mut last = 0;
        for rate in [0.0, 0.05, 0.1, 0.2, 0.4, 0.6] {
            let cm = CorruptionModel { dropout_rate: rate, jitter_sigma_um: 3.0, seed: 77, ..CorruptionModel::none() };
            let cloud = inpaint_layers(&extract_surfaces(&segment(&scan, &cm))).unwrap();
            let n = inpainted_count(&cloud);
            assert!(n >= last, "rate {rate}: {n} < {last}");
            last = n;
        }
    }
}
