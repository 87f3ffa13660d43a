//! Insertion velocity laws: proportional slow-down towards the virtual layer
//! with an α stopping band, and the constant-velocity fixed-point baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phantom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    VirtualLayer,
    FixedPoint,
}

impl ControlMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::VirtualLayer => "virtual_layer",
            Self::FixedPoint => "fixed_point",
        }
    }
}

impl std::str::FromStr for ControlMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual_layer" => Ok(Self::VirtualLayer),
            "fixed_point" => Ok(Self::FixedPoint),
            other => Err(format!("unknown mode {other:?} (virtual_layer | fixed_point)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid control parameters: {0}")]
pub struct ControlParamsError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// Maximum insertion speed along the needle axis (mm/s).
    pub v_max: f64,
    /// Stopping band as a fraction of retinal thickness.
    pub alpha: f64,
    pub mode: ControlMode,
}

impl ControlParams {
    pub fn new(v_max: f64, alpha: f64, mode: ControlMode) -> Result<Self, ControlParamsError> {
        let p = Self { v_max, alpha, mode };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ControlParamsError> {
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(ControlParamsError(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ControlParamsError(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandReason {
    Advancing,
    AboveIlmFullSpeed,
    NearTargetStop,
    TrackingLostHold,
}

impl CommandReason {
    pub fn name(self) -> &'static str {
        match self {
            Self::Advancing => "advancing",
            Self::AboveIlmFullSpeed => "above_ilm_full_speed",
            Self::NearTargetStop => "near_target_stop",
            Self::TrackingLostHold => "tracking_lost_hold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    /// Speed along the needle axis (mm/s).
    pub velocity: f64,
    pub stopped: bool,
    pub reason: CommandReason,
}

impl ControlCommand {
    pub fn hold() -> Self {
        Self { velocity: 0.0, stopped: false, reason: CommandReason::TrackingLostHold }
    }

    pub fn stop() -> Self {
        Self { velocity: 0.0, stopped: true, reason: CommandReason::NearTargetStop }
    }

    fn advance(velocity: f64, reason: CommandReason) -> Self {
        Self { velocity, stopped: false, reason }
    }
}

/// Virtual-layer velocity law.
///
/// Full speed while the tip is above the ILM; otherwise speed proportional
/// to the normalised gap `g = |target − tip| / (rpe − ilm)` while `g > α`
/// (capped at `v_max` for `g > 1`), and a stop once `g ≤ α`. Degenerate
/// layers or non-finite inputs hold position.
pub fn velocity_command(
    tip_depth: f64,
    ilm: f64,
    rpe: f64,
    target_depth: f64,
    params: &ControlParams,
) -> ControlCommand {
    let finite = [tip_depth, ilm, rpe, target_depth].iter().all(|v| v.is_finite());
    if !finite || !(rpe > ilm) {
        return ControlCommand::hold();
    }
    if tip_depth < ilm {
        return ControlCommand::advance(params.v_max, CommandReason::AboveIlmFullSpeed);
    }
    let g = (target_depth - tip_depth).abs() / (rpe - ilm);
    if g > params.alpha {
        ControlCommand::advance(g.min(1.0) * params.v_max, CommandReason::Advancing)
    } else {
        ControlCommand::stop()
    }
}

const REACHED_UM: f64 = 1e-6;

/// Fixed-point baseline: `v_max` until the tip's projection on the
/// insertion axis reaches the planned target's projection, then stop.
/// Gaps below a picometre count as reached.
pub fn fixed_point_command(tip: &Vec3, target: &Vec3, axis: &Vec3, params: &ControlParams) -> ControlCommand {
    if (target - tip).dot(axis) > REACHED_UM {
        ControlCommand::advance(params.v_max, CommandReason::Advancing)
    } else {
        ControlCommand::stop()
    }
}
