use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::oct::{B5Scan, Label};

/// Error model standing in for a learned segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionModel {
    /// Probability that a labelled surface voxel is deleted.
    pub dropout_rate: f64,
    /// Probability that a spurious needle voxel is injected into a column.
    pub needle_outlier_rate: f64,
    /// Standard deviation of axial label noise (µm).
    pub jitter_sigma_um: f64,
    pub seed: u64,
}

impl Default for CorruptionModel {
    fn default() -> Self {
        Self::none()
    }
}

impl CorruptionModel {
    pub fn none() -> Self {
        Self { dropout_rate: 0.0, needle_outlier_rate: 0.0, jitter_sigma_um: 0.0, seed: 0 }
    }

    pub fn is_identity(&self) -> bool {
        self.dropout_rate == 0.0 && self.needle_outlier_rate == 0.0 && self.jitter_sigma_um == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err("dropout_rate must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.needle_outlier_rate) {
            return Err("needle_outlier_rate must lie in [0, 1]".into());
        }
        if !(self.jitter_sigma_um >= 0.0) {
            return Err("jitter_sigma_um must be non-negative".into());
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Applies the corruption model to an oracle segmentation.
///
/// Random draws are consumed in the same order whatever the rates, so two
/// models that differ only in `dropout_rate` drop nested sets of voxels.
pub fn segment(scan: &B5Scan, cm: &CorruptionModel) -> B5Scan {
    if cm.is_identity() {
        return scan.clone();
    }
    let mut out = scan.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cm.seed);
    let dims = scan.dims();
    let axial = scan.spacing().axial;
    let depth = dims.depth as i64;
    let mut labelled: Vec<(usize, u8)> = Vec::with_capacity(8);
    for b in 0..dims.n_bscans {
        for a in 0..dims.n_ascans {
            labelled.clear();
            labelled.extend(
                scan.column(b, a)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != Label::Background as u8)
                    .map(|(d, &v)| (d, v)),
            );
            let col = out.column_mut(b, a);
            for &(d, _) in &labelled {
                col[d] = Label::Background as u8;
            }
            for &(d, v) in &labelled {
                let u: f64 = rng.random();
                let z: f64 = rng.sample(StandardNormal);
                if u < cm.dropout_rate {
                    continue;
                }
                let shift = (z * cm.jitter_sigma_um / axial).round() as i64;
                let nd = (d as i64 + shift).clamp(0, depth - 1) as usize;
                col[nd] = v;
            }
            let u: f64 = rng.random();
            let d = rng.random_range(0..dims.depth);
            if u < cm.needle_outlier_rate {
                col[d] = Label::Needle as u8;
            }
        }
    }
    out
}
