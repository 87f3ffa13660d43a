use serde::{Deserialize, Serialize};

use super::{FrameLog, TrajectoryPoint};
use crate::oct::B5Scan;
use crate::phantom::{NeedlePose, RetinaState};
use crate::targeting::layer_at;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    ControllerStop,
    RpeContact,
    Timeout,
    LeftPhantom,
}

/// Ground-truth result of one insertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub final_tip_depth: f64,
    pub final_ilm: f64,
    pub final_rpe: f64,
    pub final_p: f64,
    pub target_p: f64,
    /// |tip − target| at the tip's lateral position (µm).
    pub final_axial_error: f64,
    /// tip − target (µm); positive means past the target.
    pub overshoot: f64,
    pub punctured: bool,
    pub rpe_contact: bool,
    pub bleb_success_proxy: bool,
    pub stopped: bool,
    pub end_reason: EndReason,
    pub duration_s: f64,
    pub frames_processed: usize,
    pub tracking_lost_frames: usize,
    #[serde(skip)]
    pub trajectory: Vec<TrajectoryPoint>,
    #[serde(skip)]
    pub frame_log: Vec<FrameLog>,
    #[serde(skip)]
    pub frames: Vec<B5Scan>,
}

/// Scores the final pose against the deformed phantom.
///
/// Success requires a punctured ILM, a tip strictly below the ILM and at
/// least `margin` above the RPE, and no RPE contact during the trial.
pub fn evaluate_outcome(
    state: &RetinaState,
    needle: &NeedlePose,
    target_p: f64,
    margin: f64,
    rpe_contact: bool,
) -> TrialOutcome {
    let tip = needle.tip();
    let (ilm, rpe) = state.layer_depths(tip.x, tip.y).unwrap_or((f64::NAN, f64::NAN));
    let target = layer_at(target_p, ilm, rpe);
    let rpe_contact = rpe_contact || tip.z >= rpe;
    let inside = tip.z > ilm && tip.z < rpe - margin;
    TrialOutcome {
        final_tip_depth: tip.z,
        final_ilm: ilm,
        final_rpe: rpe,
        final_p: (tip.z - ilm) / (rpe - ilm),
        target_p,
        final_axial_error: (tip.z - target).abs(),
        overshoot: tip.z - target,
        punctured: state.punctured(),
        rpe_contact,
        bleb_success_proxy: state.punctured() && inside && !rpe_contact,
        stopped: false,
        end_reason: EndReason::Timeout,
        duration_s: state.time_s(),
        frames_processed: 0,
        tracking_lost_frames: 0,
        trajectory: Vec::new(),
        frame_log: Vec::new(),
        frames: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{PhantomConfig, Vec3};

    fn pose(z: f64) -> NeedlePose {
        NeedlePose::new(Vec3::new(0.0, 0.0, z), 0.0, 50.0)
    }

    #[test]
    fn success_at_target() {
        let state = PhantomConfig::default().build().unwrap().with_puncture();
        let out = evaluate_outcome(&state, &pose(1160.0), 0.4, 20.0, false);
        assert!(out.bleb_success_proxy);
        assert!(out.final_axial_error < 1e-12);
        assert!((out.final_p - 0.4).abs() < 1e-12);
    }

    #[test]
    fn rpe_contact_fails() {
        let state = PhantomConfig::default().build().unwrap().with_puncture();
        let out = evaluate_outcome(&state, &pose(1400.0), 0.4, 20.0, false);
        assert!(out.rpe_contact && !out.bleb_success_proxy);
        let earlier = evaluate_outcome(&state, &pose(1160.0), 0.4, 20.0, true);
        assert!(earlier.rpe_contact && !earlier.bleb_success_proxy);
        let margin = evaluate_outcome(&state, &pose(1385.0), 0.4, 20.0, false);
        assert!(!margin.rpe_contact && !margin.bleb_success_proxy);
    }

    #[test]
    fn unpunctured_fails() {
        let state = PhantomConfig::default().build().unwrap();
        let out = evaluate_outcome(&state, &pose(1160.0), 0.4, 20.0, false);
        assert!(!out.bleb_success_proxy);
        assert!((out.overshoot).abs() < 1e-12);
        let above = evaluate_outcome(&state.with_puncture(), &pose(900.0), 0.4, 20.0, false);
        assert!(!above.bleb_success_proxy);
        assert!((above.overshoot + 260.0).abs() < 1e-12);
    }
}
