use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::control::{ControlMode, ControlParams};
use crate::oct::ScanConfig;
use crate::perception::{CorruptionModel, PerceptionParams};
use crate::phantom::PhantomConfig;
use crate::simloop::{Execution, LatencyModel, NeedleStart, TrialConfig};

/// Per-trial sampling bands, each `[low, high]`. A band with equal ends
/// pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variation {
    pub thickness_um: [f64; 2],
    pub tilt_deg: [f64; 2],
    pub puncture_threshold_um: [f64; 2],
    /// Lateral offset of the needle across the B-scans.
    pub needle_y_um: [f64; 2],
}

impl Default for Variation {
    fn default() -> Self {
        Self {
            thickness_um: [350.0, 500.0],
            tilt_deg: [-3.0, 3.0],
            puncture_threshold_um: [150.0, 300.0],
            needle_y_um: [-12.5, 12.5],
        }
    }
}

impl Variation {
    pub fn none(phantom: &PhantomConfig) -> Self {
        let t = phantom.thickness_um;
        let tilt = phantom.tilt_deg;
        let tau = phantom.tissue.puncture_threshold_um;
        Self {
            thickness_um: [t, t],
            tilt_deg: [tilt, tilt],
            puncture_threshold_um: [tau, tau],
            needle_y_um: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSettings {
    pub substep_ms: f64,
    pub timeout_s: f64,
    pub safety_margin_um: f64,
    pub execution: Execution,
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self { substep_ms: 1.0, timeout_s: 10.0, safety_margin_um: 20.0, execution: Execution::Inline }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    /// Write segmented rasters of every frame under `frames/<trial>/`.
    pub dump_frames: bool,
    /// Write per-substep trajectories under `trajectories/<trial>.csv`.
    pub dump_trajectories: bool,
}

/// Batch experiment description, normally read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials_per_cell: usize,
    pub alpha: f64,
    pub modes: Vec<ControlMode>,
    pub target_p: Vec<f64>,
    pub v_max: Vec<f64>,
    /// Worker threads for independent trials; 0 uses all cores.
    pub parallel: usize,
    pub variation: Variation,
    pub trial: TrialSettings,
    pub output: OutputSettings,
    pub phantom: PhantomConfig,
    pub scan: ScanConfig,
    pub latency: LatencyModel,
    pub corruption: CorruptionModel,
    pub perception: PerceptionParams,
    pub needle: NeedleStart,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials_per_cell: 5,
            alpha: 0.1,
            modes: vec![ControlMode::VirtualLayer, ControlMode::FixedPoint],
            target_p: vec![0.4, 0.6],
            v_max: vec![0.3, 0.4],
            parallel: 1,
            variation: Variation::default(),
            trial: TrialSettings::default(),
            output: OutputSettings::default(),
            phantom: PhantomConfig::default(),
            scan: ScanConfig::default(),
            latency: LatencyModel::default(),
            corruption: CorruptionModel {
                dropout_rate: 0.02,
                needle_outlier_rate: 0.005,
                jitter_sigma_um: 2.0,
                seed: 0,
            },
            perception: PerceptionParams::default(),
            needle: NeedleStart::default(),
        }
    }
}

fn check_band(name: &str, band: [f64; 2]) -> Result<(), HarnessError> {
    if !(band[0].is_finite() && band[1].is_finite() && band[0] <= band[1]) {
        return Err(HarnessError::Config(format!("{name} band {band:?} must be finite and ordered")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serialises")
    }

    pub fn n_cells(&self) -> usize {
        self.modes.len() * self.target_p.len() * self.v_max.len()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.trials_per_cell < 1 {
            return bad("trials_per_cell must be at least 1".into());
        }
        if self.modes.is_empty() || self.target_p.is_empty() || self.v_max.is_empty() {
            return bad("modes, target_p and v_max must each list at least one value".into());
        }
        check_band("thickness_um", self.variation.thickness_um)?;
        check_band("tilt_deg", self.variation.tilt_deg)?;
        check_band("puncture_threshold_um", self.variation.puncture_threshold_um)?;
        check_band("needle_y_um", self.variation.needle_y_um)?;
        let [lo, hi] = self.phantom.thickness_band_um;
        let [tlo, thi] = self.variation.thickness_um;
        if tlo < lo || thi > hi {
            return bad(format!(
                "thickness variation {:?} leaves the phantom band {:?}",
                self.variation.thickness_um, self.phantom.thickness_band_um
            ));
        }
        // every corner of the variation must give a valid trial
        for &mode in &self.modes {
            for &p in &self.target_p {
                for &v in &self.v_max {
                    let mut cfg = self.trial_config(mode, p, v, 0);
                    for thickness in self.variation.thickness_um {
                        for tau in self.variation.puncture_threshold_um {
                            cfg.phantom.thickness_um = thickness;
                            cfg.phantom.tissue.puncture_threshold_um = tau;
                            cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                            cfg.phantom
                                .build_rest()
                                .and_then(|r| {
                                    crate::phantom::RetinaState::new(std::sync::Arc::new(r), cfg.phantom.tissue)
                                })
                                .map_err(|e| HarnessError::Config(e.to_string()))?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Trial configuration for one grid point before per-trial variation.
    pub fn trial_config(&self, mode: ControlMode, p: f64, v_max: f64, seed: u64) -> TrialConfig {
        TrialConfig {
            phantom: self.phantom,
            scan: self.scan,
            corruption: self.corruption,
            perception: self.perception,
            control: ControlParams { v_max, alpha: self.alpha, mode },
            latency: self.latency,
            needle: self.needle,
            target_p: p,
            seed,
            substep_ms: self.trial.substep_ms,
            timeout_s: self.trial.timeout_s,
            safety_margin_um: self.trial.safety_margin_um,
            record_frames: self.output.dump_frames,
            record_trajectory: self.output.dump_trajectories,
            execution: self.trial.execution,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_forty_trials() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_cells() * cfg.trials_per_cell, 40);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "trials_per_cell = 2\nmodes = [\"fixed_point\"]\n[latency]\npipelined = false\n[phantom.tissue]\nbounce_back = false\n",
        )
        .unwrap();
        assert_eq!(cfg.trials_per_cell, 2);
        assert_eq!(cfg.modes, vec![ControlMode::FixedPoint]);
        assert!(!cfg.latency.pipelined);
        assert!(!cfg.phantom.tissue.bounce_back);
        assert_eq!(cfg.scan, ScanConfig::default());
    }

    #[test]
    fn rejects_invalid() {
        for text in [
            "trials_per_cell = 0",
            "target_p = []",
            "unknown_key = 1",
            "[variation]\nthickness_um = [500.0, 350.0]",
            "[variation]\nthickness_um = [200.0, 300.0]",
            "[variation]\npuncture_threshold_um = [150.0, 600.0]",
            "[latency]\nprocessing_ms = 200.0",
            "alpha = 2.0",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
