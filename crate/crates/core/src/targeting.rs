//! Relative depth between ILM and RPE and the virtual target layer.

use thiserror::Error;

use crate::perception::SurfaceCloud;
use crate::phantom::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetingError {
    #[error("degenerate layers at sample ({b}, {a}): ilm {ilm} µm, rpe {rpe} µm")]
    DegenerateLayer { b: usize, a: usize, ilm: f64, rpe: f64 },
    #[error("layer sample ({b}, {a}) missing; inpaint before targeting")]
    MissingLayer { b: usize, a: usize },
    #[error("tip at ({x:.1}, {y:.1}) µm is outside the scanned area")]
    TrackingLost { x: f64, y: f64 },
}

/// Fractional depth between ILM (0) and RPE (1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RelativeDepth(pub f64);

impl RelativeDepth {
    pub fn value(self) -> f64 {
        self.0
    }

    /// True when the depth lies between the layers.
    pub fn within_retina(self) -> bool {
        (0.0..=1.0).contains(&self.0)
    }
}

pub fn relative_depth(z: f64, ilm: f64, rpe: f64) -> Result<RelativeDepth, TargetingError> {
    if !(rpe > ilm) {
        return Err(TargetingError::DegenerateLayer { b: 0, a: 0, ilm, rpe });
    }
    Ok(RelativeDepth((z - ilm) / (rpe - ilm)))
}

/// `ilm + p·(rpe − ilm)`, written so that p = 0 and p = 1 return the layers
/// bit-exactly.
pub fn layer_at(p: f64, ilm: f64, rpe: f64) -> f64 {
    if p == 0.0 {
        ilm
    } else if p == 1.0 {
        rpe
    } else {
        ilm + p * (rpe - ilm)
    }
}

/// Target surface at a fixed fraction between the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualLayer {
    p: f64,
    n_bscans: usize,
    n_ascans: usize,
    depths: Vec<f64>,
}

impl VirtualLayer {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn target_depth(&self, b: usize, a: usize) -> f64 {
        self.depths[b * self.n_ascans + a]
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn n_bscans(&self) -> usize {
        self.n_bscans
    }
}

/// Builds the virtual layer over every lateral sample of an inpainted cloud.
pub fn virtual_layer(cloud: &SurfaceCloud, p: f64) -> Result<VirtualLayer, TargetingError> {
    let mut depths = Vec::with_capacity(cloud.samples().len());
    for b in 0..cloud.n_bscans() {
        for (a, s) in cloud.bscan(b).iter().enumerate() {
            let (Some(ilm), Some(rpe)) = (s.ilm, s.rpe) else {
                return Err(TargetingError::MissingLayer { b, a });
            };
            let (ilm, rpe) = (ilm.depth, rpe.depth);
            if !(rpe > ilm) {
                return Err(TargetingError::DegenerateLayer { b, a, ilm, rpe });
            }
            depths.push(layer_at(p, ilm, rpe));
        }
    }
    Ok(VirtualLayer { p, n_bscans: cloud.n_bscans(), n_ascans: cloud.n_ascans(), depths })
}

/// Tip-to-layer relation on the tip's A-scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipGap {
    /// target − tip; positive means the tip is above the target.
    pub dist: f64,
    pub thickness: f64,
    pub ilm: f64,
    pub rpe: f64,
    pub target: f64,
    pub sample: (usize, usize),
}

pub fn tip_gap(tip: &Vec3, layer: &VirtualLayer, cloud: &SurfaceCloud) -> Result<TipGap, TargetingError> {
    let (b, a) = cloud
        .nearest_sample(tip.x, tip.y)
        .ok_or(TargetingError::TrackingLost { x: tip.x, y: tip.y })?;
    let s = cloud.get(b, a);
    let (Some(ilm), Some(rpe)) = (s.ilm, s.rpe) else {
        return Err(TargetingError::MissingLayer { b, a });
    };
    let target = layer.target_depth(b, a);
    Ok(TipGap {
        dist: target - tip.z,
        thickness: rpe.depth - ilm.depth,
        ilm: ilm.depth,
        rpe: rpe.depth,
        target,
        sample: (b, a),
    })
}
