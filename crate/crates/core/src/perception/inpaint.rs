//! Fills shadowed or dropped ILM/RPE samples.
//!
//! Within each B-scan: linear interpolation across interior gaps, flat
//! extension at the scan edges, then a 3-sample median over the filled
//! spans. A B-scan with no samples of a layer borrows the column values of
//! the nearest B-scan that has some.

use super::surfaces::{Layer, LayerSample, Provenance, SurfaceCloud};
use super::PerceptionError;

fn fill_row(row: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> =
        row.iter().enumerate().filter_map(|(i, v)| v.map(|z| (i, z))).collect();
    let (&(_, z_first), &(last, z_last)) = (known.first()?, known.last()?);
    let mut out = vec![z_first; row.len()];
    for w in known.windows(2) {
        let ((l, zl), (r, zr)) = (w[0], w[1]);
        out[l] = zl;
        for (i, v) in out.iter_mut().enumerate().take(r).skip(l + 1) {
            let t = (i - l) as f64 / (r - l) as f64;
            *v = zl + (zr - zl) * t;
        }
    }
    for v in &mut out[last..] {
        *v = z_last;
    }
    Some(out)
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    a.max(b).min(a.min(b).max(c))
}

/// Inpaints both layers. Fails only when a layer is absent from the entire
/// scan.
pub fn inpaint_layers(cloud: &SurfaceCloud) -> Result<SurfaceCloud, PerceptionError> {
    let mut out = cloud.clone();
    let nb = cloud.n_bscans();
    let na = cloud.n_ascans();
    for layer in Layer::BOTH {
        let rows: Vec<Option<Vec<f64>>> = (0..nb)
            .map(|b| {
                let raw: Vec<Option<f64>> =
                    cloud.bscan(b).iter().map(|s| s.layer(layer).map(|l| l.depth)).collect();
                let filled = fill_row(&raw)?;
                let mut smoothed = filled.clone();
                for a in 0..na {
                    if raw[a].is_none() {
                        let lo = filled[a.saturating_sub(1)];
                        let hi = filled[(a + 1).min(na - 1)];
                        smoothed[a] = median3(lo, filled[a], hi);
                    }
                }
                Some(smoothed)
            })
            .collect();
        if rows.iter().all(Option::is_none) {
            return Err(PerceptionError::InpaintingImpossible { layer: layer.name() });
        }
        for b in 0..nb {
            let donor = match &rows[b] {
                Some(r) => r,
                None => {
                    let nearest = (0..nb)
                        .filter(|&k| rows[k].is_some())
                        .min_by_key(|&k| (k.abs_diff(b), k))
                        .expect("at least one row is filled");
                    rows[nearest].as_ref().unwrap()
                }
            };
            for (a, s) in out.bscan_mut(b).iter_mut().enumerate() {
                let slot = s.layer_mut(layer);
                if slot.is_none() {
                    *slot = Some(LayerSample::inpainted(donor[a]));
                }
            }
        }
    }
    debug_assert!(out.layers_complete());
    Ok(out)
}

/// Number of ILM + RPE samples that inpainting had to fill.
pub fn inpainted_count(cloud: &SurfaceCloud) -> usize {
    Layer::BOTH
        .iter()
        .map(|&l| cloud.count_provenance(l, Provenance::Inpainted))
        .sum()
}
