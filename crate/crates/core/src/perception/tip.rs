use super::ransac::NeedleLine;
use super::surfaces::SurfaceCloud;
use super::PerceptionError;
use crate::phantom::Vec3;

/// Detected needle tip and the A-scan it was found on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipEstimate {
    pub position: Vec3,
    pub bscan: usize,
    pub ascan: usize,
}

/// Picks the needle tip from the (outlier-free) needle samples.
///
/// Each B-scan contributes its distal-most needle sample along the line.
/// Contributions that lie within `window_fraction` of the needle's extent
/// from the overall distal end are candidates. Candidates are compared by
/// their depth carried along the line to the distal end, so a B-scan whose
/// trace stops short of the tip does not win merely by sitting higher up the
/// sloped shaft; the shallowest is the tip. For a round needle the B-scan
/// closest to the needle centre sees the highest point of the tip
/// cross-section.
pub fn detect_tip(
    cloud: &SurfaceCloud,
    line: &NeedleLine,
    window_fraction: f64,
) -> Result<TipEstimate, PerceptionError> {
    let points = cloud.needle_points();
    if points.is_empty() {
        return Err(PerceptionError::NoNeedle { found: 0 });
    }
    let mut distal: Vec<Option<(f64, usize, usize, Vec3)>> = vec![None; cloud.n_bscans()];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(b, a, p) in &points {
        let s = line.project(&p);
        lo = lo.min(s);
        hi = hi.max(s);
        if distal[b].is_none_or(|(best, ..)| s > best) {
            distal[b] = Some((s, b, a, p));
        }
    }
    let cutoff = hi - window_fraction * (hi - lo);
    distal
        .into_iter()
        .flatten()
        .filter(|(s, ..)| *s >= cutoff)
        .map(|c| (c.3.z + (hi - c.0) * line.direction.z, c))
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1 .1.cmp(&y.1 .1)))
        .map(|(_, c)| c)
        .map(|(_, b, a, p)| TipEstimate { position: p, bscan: b, ascan: a })
        .ok_or(PerceptionError::NoNeedle { found: points.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oct::{acquire, ScanConfig};
    use crate::perception::{extract_surfaces, fit_needle_line};
    use crate::phantom::{NeedlePose, PhantomConfig};

    fn estimate(cfg: &ScanConfig, needle: &NeedlePose) -> TipEstimate {
        let state = PhantomConfig::default().build().unwrap();
        let scan = acquire(&state, needle, cfg, 0.0).unwrap();
        let cloud = extract_surfaces(&scan);
        let pts: Vec<Vec3> = cloud.needle_points().into_iter().map(|p| p.2).collect();
        let line = fit_needle_line(&pts, 30.0, 256, 0).unwrap();
        detect_tip(&cloud, &line, 0.1).unwrap()
    }

    fn column_x(cfg: &ScanConfig, a: usize) -> f64 {
        cfg.origin().x + a as f64 * cfg.spacing().lateral
    }

    #[test]
    fn centred_on_scan_line() {
        let cfg = ScanConfig::default();
        let tip = Vec3::new(column_x(&cfg, 230), 0.0, 700.0);
        let est = estimate(&cfg, &NeedlePose::new(tip, 0.0, 50.0));
        assert!((est.position.z - tip.z).abs() <= cfg.spacing().axial);
        assert_eq!((est.bscan, est.ascan), (2, 230));
    }

    #[test]
    fn centred_between_scan_lines() {
        // scan lines 100 µm apart straddle a 50 µm radius needle: both see
        // only its flank, half a thickness below the top
        let cfg = ScanConfig { extent_mm: [4.0, 0.4], ..Default::default() };
        let r = 50.0;
        let tip = Vec3::new(column_x(&cfg, 230), 50.0, 700.0);
        let est = estimate(&cfg, &NeedlePose::new(tip, 0.0, r));
        let err = est.position.z - tip.z;
        assert!(err <= r + 0.5 * cfg.spacing().axial);
        assert!((err - r).abs() <= 0.1 * r, "error {err}");
    }

    #[test]
    fn flank_trace_cut_short() {
        // the centre B-scan only grazes the flank; outlier removal trims its
        // distal samples, leaving a trace that ends well behind the tip
        let cfg = ScanConfig::default();
        let tip = Vec3::new(-350.4, -45.2, 774.6);
        let est = estimate(&cfg, &NeedlePose::new(tip, 0.0, 50.0));
        assert!((est.position.z - tip.z).abs() <= 50.0 + 0.5 * cfg.spacing().axial, "{est:?}");
        assert_eq!(est.bscan, 0);
    }

    #[test]
    fn no_needle_samples() {
        let cfg = ScanConfig { n_ascans_per_bscan: 20, depth_pixels: 64, ..Default::default() };
        let state = PhantomConfig::default().build().unwrap();
        let far = NeedlePose::new(Vec3::new(-1e6, 0.0, 0.0), 0.0, 50.0);
        let cloud = extract_surfaces(&acquire(&state, &far, &cfg, 0.0).unwrap());
        let line = NeedleLine {
            point: Vec3::zeros(),
            direction: Vec3::x(),
            inlier_count: 0,
            inlier_threshold: 30.0,
        };
        assert!(matches!(detect_tip(&cloud, &line, 0.1), Err(PerceptionError::NoNeedle { .. })));
    }
}
