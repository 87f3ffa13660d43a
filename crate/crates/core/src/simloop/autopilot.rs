use std::borrow::Cow;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control::{velocity_command, ControlCommand, ControlMode, ControlParams};
use crate::oct::B5Scan;
use crate::perception::{perceive, segment, CorruptionModel, PerceptionParams, SurfaceCloud};
use crate::phantom::Vec3;
use crate::targeting::{layer_at, tip_gap, virtual_layer, TipGap};

/// Fixed-point target planned once from the first usable frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPlan {
    /// Perceived tip at planning time.
    pub tip: Vec3,
    pub target: Vec3,
    /// Robot odometer reading when the planning frame was acquired.
    pub odometer: f64,
}

impl FixedPlan {
    /// Tip position implied by the robot odometer.
    pub fn tip_at(&self, odometer: f64, axis: &Vec3) -> Vec3 {
        self.tip + axis * (odometer - self.odometer)
    }
}

/// What the controller made of one frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub index: u64,
    /// Virtual-layer command, or `None` for the fixed-point arm.
    pub command: Option<ControlCommand>,
    pub plan: Option<FixedPlan>,
    pub tip_estimate: Option<Vec3>,
    pub gap: Option<TipGap>,
    pub error: Option<String>,
    /// Segmented raster, kept only when frame recording is on.
    pub segmented: Option<B5Scan>,
}

/// Derives an independent 64-bit seed for stream `stream` of frame `index`.
pub fn frame_seed(seed: u64, index: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.set_word_pos(2 * stream as u128);
    rng.next_u64()
}

/// Perception and control for one trial. Sees only label rasters and the
/// robot's own odometry.
#[derive(Debug, Clone)]
pub struct Autopilot {
    pub control: ControlParams,
    pub perception: PerceptionParams,
    pub corruption: CorruptionModel,
    pub target_p: f64,
    pub seed: u64,
    pub axis: Vec3,
    pub record_frames: bool,
    plan: Option<FixedPlan>,
}

impl Autopilot {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        control: ControlParams,
        perception: PerceptionParams,
        corruption: CorruptionModel,
        target_p: f64,
        seed: u64,
        axis: Vec3,
        record_frames: bool,
    ) -> Self {
        Self { control, perception, corruption, target_p, seed, axis, record_frames, plan: None }
    }

    pub fn plan(&self) -> Option<FixedPlan> {
        self.plan
    }

    pub fn process(&mut self, index: u64, scan: &B5Scan, odometer: f64) -> FrameResult {
        let cm = self.corruption.with_seed(frame_seed(self.seed, index, 0));
        let segmented = if cm.is_identity() { Cow::Borrowed(scan) } else { Cow::Owned(segment(scan, &cm)) };
        let params = PerceptionParams { ransac_seed: frame_seed(self.seed, index, 1), ..self.perception };
        let mut out = FrameResult {
            index,
            command: None,
            plan: None,
            tip_estimate: None,
            gap: None,
            error: None,
            segmented: None,
        };
        match perceive(&segmented, &params) {
            Ok(p) => {
                let tip = p.tip.position;
                out.tip_estimate = Some(tip);
                match self.control.mode {
                    ControlMode::VirtualLayer => {
                        let gap = virtual_layer(&p.cloud, self.target_p)
                            .and_then(|layer| tip_gap(&tip, &layer, &p.cloud));
                        out.gap = gap.as_ref().ok().copied();
                        let cmd = gap.map(|g| velocity_command(tip.z, g.ilm, g.rpe, g.target, &self.control));
                        out.command = Some(cmd.unwrap_or_else(|e| {
                            out.error = Some(e.to_string());
                            ControlCommand::hold()
                        }));
                    }
                    ControlMode::FixedPoint if self.plan.is_none() => {
                        match plan_fixed_target(&p.cloud, tip, &self.axis, self.target_p) {
                            Some(target) => {
                                self.plan = Some(FixedPlan { tip, target, odometer });
                                out.plan = self.plan;
                            }
                            None => out.error = Some("fixed target lies outside the scan".into()),
                        }
                    }
                    ControlMode::FixedPoint => {}
                }
            }
            Err(e) => {
                out.error = Some(e.to_string());
                if self.control.mode == ControlMode::VirtualLayer {
                    out.command = Some(ControlCommand::hold());
                }
            }
        }
        if self.record_frames {
            out.segmented = Some(segmented.into_owned());
        }
        out
    }
}

/// Marches from `tip` along `axis` until the depth reaches the layer at
/// fraction `p` of the column below. Returns `None` if the path leaves the
/// scanned area first.
pub fn plan_fixed_target(cloud: &SurfaceCloud, tip: Vec3, axis: &Vec3, p: f64) -> Option<Vec3> {
    const STEP_UM: f64 = 0.25;
    let mut s = 0.0;
    loop {
        let q = tip + axis * s;
        let (b, a) = cloud.nearest_sample(q.x, q.y)?;
        let c = cloud.get(b, a);
        let target = layer_at(p, c.ilm?.depth, c.rpe?.depth);
        if q.z >= target {
            return Some(q);
        }
        s += STEP_UM;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oct::{acquire, ScanConfig};
    use crate::perception::{extract_surfaces, inpaint_layers};
    use crate::phantom::{NeedlePose, PhantomConfig};

    #[test]
    fn frame_seeds_differ_and_repeat() {
        let a = frame_seed(7, 3, 0);
        assert_eq!(a, frame_seed(7, 3, 0));
        assert_ne!(a, frame_seed(7, 3, 1));
        assert_ne!(a, frame_seed(7, 4, 0));
        assert_ne!(a, frame_seed(8, 3, 0));
    }

    #[test]
    fn fixed_target_on_flat_retina() {
        let state = PhantomConfig::default().build().unwrap();
        let needle = NeedlePose::new(Vec3::new(-300.0, 0.0, 700.0), 0.0, 50.0);
        let scan = acquire(&state, &needle, &ScanConfig::default(), 0.0).unwrap();
        let cloud = inpaint_layers(&extract_surfaces(&scan)).unwrap();
        let q = plan_fixed_target(&cloud, needle.tip(), &needle.axis(), 0.4).unwrap();
        // layers quantise to 1000 and 1398.4375
        let want = 1000.0 + 0.4 * 398.4375;
        assert!(q.z >= want && q.z < want + 0.25, "{}", q.z);
        assert!((q.x - (-300.0 + (q.z - 700.0))).abs() < 1e-9);
    }

    #[test]
    fn fixed_target_outside_scan() {
        let state = PhantomConfig::default().build().unwrap();
        let needle = NeedlePose::new(Vec3::new(1900.0, 0.0, 700.0), 0.0, 50.0);
        let scan = acquire(&state, &needle, &ScanConfig::default(), 0.0).unwrap();
        let cloud = inpaint_layers(&extract_surfaces(&scan)).unwrap();
        assert!(plan_fixed_target(&cloud, needle.tip(), &needle.axis(), 0.4).is_none());
    }
}
