//! Frame dumps and raster export.
//!
//! A dump file stores one segmented B⁵-scan sparsely, little-endian:
//! magic `B5S1`, three `u16` dims (B-scans, A-scans, depth), three `f64`
//! spacings, three `f64` origin coordinates, an `f64` timestamp, a `u32`
//! voxel count, then `(b: u16, a: u16, d: u16, code: u8)` per voxel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{io_err, HarnessError};
use crate::oct::{bscan_file_name, write_raster_set, B5Scan, Dims, VoxelSpacing};
use crate::phantom::Vec3;

const MAGIC: &[u8; 4] = b"B5S1";
const HEADER_LEN: usize = 4 + 3 * 2 + 7 * 8 + 4;
const VOXEL_LEN: usize = 7;

pub(crate) fn dump_file_name(frame: usize) -> String {
    format!("frame_{frame:05}.b5s")
}

pub fn write_frame_dump(scan: &B5Scan, path: &Path) -> Result<(), HarnessError> {
    let dims = scan.dims();
    let voxels = scan.sparse();
    let mut buf = Vec::with_capacity(HEADER_LEN + voxels.len() * VOXEL_LEN);
    buf.extend_from_slice(MAGIC);
    for n in [dims.n_bscans, dims.n_ascans, dims.depth] {
        buf.extend_from_slice(&(n as u16).to_le_bytes());
    }
    let s = scan.spacing();
    let o = scan.origin();
    for v in [s.lateral, s.bscan, s.axial, o.x, o.y, o.z, scan.timestamp()] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(voxels.len() as u32).to_le_bytes());
    for (b, a, d, c) in voxels {
        buf.extend_from_slice(&b.to_le_bytes());
        buf.extend_from_slice(&a.to_le_bytes());
        buf.extend_from_slice(&d.to_le_bytes());
        buf.push(c);
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_frame_dump(path: &Path) -> Result<B5Scan, HarnessError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |m: &str| HarnessError::FrameFormat { path: path.to_path_buf(), message: m.into() };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a B5S1 frame dump"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let dims = Dims { n_bscans: u16_at(4) as usize, n_ascans: u16_at(6) as usize, depth: u16_at(8) as usize };
    let f: Vec<f64> = (0..7).map(|k| f64_at(10 + 8 * k)).collect();
    let count = u32::from_le_bytes(bytes[66..70].try_into().unwrap()) as usize;
    if bytes.len() != HEADER_LEN + count * VOXEL_LEN {
        return Err(bad("voxel count does not match file length"));
    }
    let voxels: Vec<(u16, u16, u16, u8)> = bytes[HEADER_LEN..]
        .chunks_exact(VOXEL_LEN)
        .map(|c| {
            (
                u16::from_le_bytes([c[0], c[1]]),
                u16::from_le_bytes([c[2], c[3]]),
                u16::from_le_bytes([c[4], c[5]]),
                c[6],
            )
        })
        .collect();
    let spacing = VoxelSpacing { lateral: f[0], bscan: f[1], axial: f[2] };
    B5Scan::from_sparse(dims, spacing, Vec3::new(f[3], f[4], f[5]), f[6], &voxels)
        .map_err(|e| bad(&e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub frames: usize,
    pub rasters: usize,
    pub index: PathBuf,
}

/// Converts the frame dumps of `trial_id` under `run_dir/frames/` into PNG
/// rasters (one per B-scan per frame) plus `index.csv` in `dest`.
/// Re-exporting overwrites with identical files.
pub fn export_frames(run_dir: &Path, trial_id: &str, dest: &Path) -> Result<ExportSummary, HarnessError> {
    let src = run_dir.join("frames").join(trial_id);
    if !src.is_dir() {
        return Err(HarnessError::MissingFrames(trial_id.to_string()));
    }
    let mut dumps: Vec<PathBuf> = fs::read_dir(&src)
        .map_err(io_err(&src))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "b5s"))
        .collect();
    dumps.sort();
    fs::create_dir_all(dest).map_err(io_err(dest))?;
    let mut index = String::from("frame,timestamp_s,bscan,file\n");
    let mut rasters = 0;
    for (k, path) in dumps.iter().enumerate() {
        let scan = read_frame_dump(path)?;
        let stem = format!("frame_{k:05}");
        write_raster_set(&scan, dest, &stem).map_err(|e| HarnessError::Export(e.to_string()))?;
        for b in 0..scan.dims().n_bscans {
            index.push_str(&format!("{k},{:.6},{b},{}\n", scan.timestamp(), bscan_file_name(&stem, b)));
            rasters += 1;
        }
    }
    let index_path = dest.join("index.csv");
    let mut f = fs::File::create(&index_path).map_err(io_err(&index_path))?;
    f.write_all(index.as_bytes()).map_err(io_err(&index_path))?;
    Ok(ExportSummary { frames: dumps.len(), rasters, index: index_path })
}
