use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::oct::{B5Scan, Label, VoxelSpacing};
use crate::phantom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Measured,
    Inpainted,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Self::Measured => "measured",
            Self::Inpainted => "inpainted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSample {
    pub depth: f64,
    pub provenance: Provenance,
}

impl LayerSample {
    pub fn measured(depth: f64) -> Self {
        Self { depth, provenance: Provenance::Measured }
    }

    pub fn inpainted(depth: f64) -> Self {
        Self { depth, provenance: Provenance::Inpainted }
    }
}

/// First-occurrence depths of one A-scan.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ColumnSurfaces {
    pub ilm: Option<LayerSample>,
    pub rpe: Option<LayerSample>,
    pub needle: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Ilm,
    Rpe,
}

impl Layer {
    pub const BOTH: [Layer; 2] = [Layer::Ilm, Layer::Rpe];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ilm => "ilm",
            Self::Rpe => "rpe",
        }
    }
}

impl ColumnSurfaces {
    pub fn layer(&self, layer: Layer) -> Option<LayerSample> {
        match layer {
            Layer::Ilm => self.ilm,
            Layer::Rpe => self.rpe,
        }
    }

    pub fn layer_mut(&mut self, layer: Layer) -> &mut Option<LayerSample> {
        match layer {
            Layer::Ilm => &mut self.ilm,
            Layer::Rpe => &mut self.rpe,
        }
    }
}

/// Per-A-scan surface depths of a B⁵-scan, in phantom-frame micrometres.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceCloud {
    n_bscans: usize,
    n_ascans: usize,
    spacing: VoxelSpacing,
    origin: Vec3,
    samples: Vec<ColumnSurfaces>,
}

impl SurfaceCloud {
    pub fn new(
        n_bscans: usize,
        n_ascans: usize,
        spacing: VoxelSpacing,
        origin: Vec3,
        samples: Vec<ColumnSurfaces>,
    ) -> Self {
        assert_eq!(samples.len(), n_bscans * n_ascans, "sample count must match the grid");
        Self { n_bscans, n_ascans, spacing, origin, samples }
    }

    pub fn n_bscans(&self) -> usize {
        self.n_bscans
    }

    pub fn n_ascans(&self) -> usize {
        self.n_ascans
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn get(&self, b: usize, a: usize) -> &ColumnSurfaces {
        &self.samples[b * self.n_ascans + a]
    }

    pub fn get_mut(&mut self, b: usize, a: usize) -> &mut ColumnSurfaces {
        &mut self.samples[b * self.n_ascans + a]
    }

    pub fn samples(&self) -> &[ColumnSurfaces] {
        &self.samples
    }

    pub fn bscan(&self, b: usize) -> &[ColumnSurfaces] {
        &self.samples[b * self.n_ascans..(b + 1) * self.n_ascans]
    }

    pub fn bscan_mut(&mut self, b: usize) -> &mut [ColumnSurfaces] {
        let n = self.n_ascans;
        &mut self.samples[b * n..(b + 1) * n]
    }

    pub fn lateral_position(&self, b: usize, a: usize) -> (f64, f64) {
        (
            self.origin.x + a as f64 * self.spacing.lateral,
            self.origin.y + b as f64 * self.spacing.bscan,
        )
    }

    /// Lateral sample nearest to (x, y), or `None` if the point lies more
    /// than half a pitch outside the sampled area.
    pub fn nearest_sample(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let a = ((x - self.origin.x) / self.spacing.lateral).round();
        let b = ((y - self.origin.y) / self.spacing.bscan).round();
        if !(a >= 0.0 && b >= 0.0) || a as usize >= self.n_ascans || b as usize >= self.n_bscans {
            return None;
        }
        Some((b as usize, a as usize))
    }

    /// Needle samples as (b, a, position).
    pub fn needle_points(&self) -> Vec<(usize, usize, Vec3)> {
        let mut out = Vec::new();
        for b in 0..self.n_bscans {
            for a in 0..self.n_ascans {
                if let Some(z) = self.get(b, a).needle {
                    let (x, y) = self.lateral_position(b, a);
                    out.push((b, a, Vec3::new(x, y, z)));
                }
            }
        }
        out
    }

    pub fn count_provenance(&self, layer: Layer, provenance: Provenance) -> usize {
        self.samples
            .iter()
            .filter(|s| s.layer(layer).is_some_and(|l| l.provenance == provenance))
            .count()
    }

    pub fn count_missing(&self, layer: Layer) -> usize {
        self.samples.iter().filter(|s| s.layer(layer).is_none()).count()
    }

    /// Both layers present at every sample.
    pub fn layers_complete(&self) -> bool {
        self.samples.iter().all(|s| s.ilm.is_some() && s.rpe.is_some())
    }

    /// Writes one CSV row per present sample: `b,a,class,depth_um,provenance`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "b,a,class,depth_um,provenance")?;
        for b in 0..self.n_bscans {
            for a in 0..self.n_ascans {
                let s = self.get(b, a);
                if let Some(z) = s.needle {
                    writeln!(w, "{b},{a},needle,{z},measured")?;
                }
                for layer in Layer::BOTH {
                    if let Some(l) = s.layer(layer) {
                        writeln!(w, "{b},{a},{},{},{}", layer.name(), l.depth, l.provenance.name())?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Index of the first non-zero byte, skipping empty runs a word at a time.
fn first_nonzero(col: &[u8], from: usize) -> Option<usize> {
    let mut i = from;
    while i + 16 <= col.len() {
        let word = u128::from_ne_bytes(col[i..i + 16].try_into().unwrap());
        if word != 0 {
            break;
        }
        i += 16;
    }
    col[i..].iter().position(|&v| v != 0).map(|p| p + i)
}

fn scan_column(col: &[u8], origin_z: f64, axial: f64) -> ColumnSurfaces {
    let mut out = ColumnSurfaces::default();
    let mut i = 0;
    while let Some(d) = first_nonzero(col, i) {
        let z = origin_z + d as f64 * axial;
        match Label::from_code(col[d]) {
            Some(Label::Needle) if out.needle.is_none() => out.needle = Some(z),
            Some(Label::Ilm) if out.ilm.is_none() => out.ilm = Some(LayerSample::measured(z)),
            Some(Label::Rpe) if out.rpe.is_none() => out.rpe = Some(LayerSample::measured(z)),
            _ => {}
        }
        if out.needle.is_some() && out.ilm.is_some() && out.rpe.is_some() {
            break;
        }
        i = d + 1;
    }
    if let (Some(ilm), Some(rpe)) = (out.ilm, out.rpe) {
        if rpe.depth <= ilm.depth {
            out.rpe = None;
        }
    }
    out
}

/// First occurrence of each class along every A-scan.
///
/// An RPE sample that is not strictly deeper than the measured ILM is
/// discarded so that it gets inpainted instead.
pub fn extract_surfaces(scan: &B5Scan) -> SurfaceCloud {
    let dims = scan.dims();
    let origin = scan.origin();
    let axial = scan.spacing().axial;
    let per_bscan: Vec<Vec<ColumnSurfaces>> = (0..dims.n_bscans)
        .into_par_iter()
        .map(|b| {
            (0..dims.n_ascans)
                .map(|a| scan_column(scan.column(b, a), origin.z, axial))
                .collect()
        })
        .collect();
    SurfaceCloud::new(
        dims.n_bscans,
        dims.n_ascans,
        scan.spacing(),
        origin,
        per_bscan.into_iter().flatten().collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oct::{acquire, Dims, ScanConfig};
    use crate::phantom::{NeedlePose, PhantomConfig};

    fn tiny() -> B5Scan {
        let dims = Dims { n_bscans: 1, n_ascans: 3, depth: 600 };
        let spacing = VoxelSpacing { lateral: 8.0, bscan: 25.0, axial: 3.90625 };
        B5Scan::empty(dims, spacing, Vec3::zeros(), 0.0)
    }

    #[test]
    fn picks_first_occurrence() {
        let mut s = tiny();
        s.set(0, 0, 256, Label::Ilm);
        s.set(0, 0, 257, Label::Ilm);
        s.set(0, 0, 358, Label::Rpe);
        let c = extract_surfaces(&s);
        assert_eq!(c.get(0, 0).ilm, Some(LayerSample::measured(256.0 * 3.90625)));
        assert_eq!(c.get(0, 0).rpe.unwrap().depth, 358.0 * 3.90625);
        assert_eq!(c.get(0, 0).needle, None);
        assert_eq!(*c.get(0, 1), ColumnSurfaces::default());
    }

    #[test]
    fn handles_labels_at_every_alignment() {
        for d in [0, 1, 15, 16, 17, 31, 32, 599] {
            let mut s = tiny();
            s.set(0, 2, d, Label::Needle);
            let c = extract_surfaces(&s);
            assert_eq!(c.get(0, 2).needle, Some(d as f64 * 3.90625));
        }
    }

    #[test]
    fn inverted_rpe_is_dropped() {
        let mut s = tiny();
        s.set(0, 1, 100, Label::Rpe);
        s.set(0, 1, 200, Label::Ilm);
        let c = extract_surfaces(&s);
        assert!(c.get(0, 1).ilm.is_some());
        assert!(c.get(0, 1).rpe.is_none());
    }

    #[test]
    fn shadowed_column_has_only_needle() {
        let cfg = ScanConfig::default();
        let state = PhantomConfig::default().build().unwrap();
        let probe = B5Scan::empty(cfg.dims(), cfg.spacing(), cfg.origin(), 0.0);
        let (x, y) = probe.column_position(2, 240);
        let needle = NeedlePose::new(Vec3::new(x, y, 800.0), 0.0, 50.0);
        let c = extract_surfaces(&acquire(&state, &needle, &cfg, 0.0).unwrap());
        let s = c.get(2, 240);
        assert!(s.needle.is_some());
        assert!(s.ilm.is_none() && s.rpe.is_none());
    }

    #[test]
    fn clean_flat_scan_matches_phantom() {
        let cfg = ScanConfig::default();
        let mut pc = PhantomConfig::default();
        pc.tilt_deg = -1.7;
        let state = pc.build().unwrap();
        let far = NeedlePose::new(Vec3::new(-1.0e6, 0.0, 0.0), 0.0, 50.0);
        let c = extract_surfaces(&acquire(&state, &far, &cfg, 0.0).unwrap());
        let half = 0.5 * cfg.spacing().axial;
        for b in 0..c.n_bscans() {
            for a in 0..c.n_ascans() {
                let (x, y) = c.lateral_position(b, a);
                let (ilm, rpe) = state.layer_depths(x, y).unwrap();
                let s = c.get(b, a);
                assert!((s.ilm.unwrap().depth - ilm).abs() <= half + 1e-9);
                assert!((s.rpe.unwrap().depth - rpe).abs() <= half + 1e-9);
            }
        }
    }

    #[test]
    fn nearest_sample_bounds() {
        let c = extract_surfaces(&tiny());
        assert_eq!(c.nearest_sample(0.0, 0.0), Some((0, 0)));
        assert_eq!(c.nearest_sample(11.0, 3.0), Some((0, 1)));
        assert_eq!(c.nearest_sample(-5.0, 0.0), None);
        assert_eq!(c.nearest_sample(40.0, 0.0), None);
    }

    #[test]
    fn csv_rows() {
        let mut s = tiny();
        s.set(0, 0, 10, Label::Needle);
        s.set(0, 1, 20, Label::Ilm);
        let mut buf = Vec::new();
        extract_surfaces(&s).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "b,a,class,depth_um,provenance");
        assert_eq!(lines[1], "0,0,needle,39.0625,measured");
        assert_eq!(lines[2], "0,1,ilm,78.125,measured");
        assert_eq!(lines.len(), 3);
    }
}
