//! Batch runner for the virtual-layer vs fixed-point comparison grid.
//!
//! A run directory holds `raw.jsonl` (one record per trial, or one failure
//! record per aborted cell), `summary.csv`, `table.txt`, the effective
//! `config.toml`, and optionally `frames/` and `trajectories/`.

mod config;
mod frames;
mod summary;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExperimentConfig, OutputSettings, TrialSettings, Variation};
pub use frames::{export_frames, read_frame_dump, write_frame_dump, ExportSummary};
pub use summary::{format_table, summarize, write_summary_csv, CellSummary, SUMMARY_HEADER};

use crate::control::ControlMode;
use crate::simloop::{run_trial, write_trajectory_csv, TrialOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad record on line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("no frame dumps for trial {0}; rerun with frame dumping enabled")]
    MissingFrames(String),
    #[error("frame dump {path}: {message}")]
    FrameFormat { path: PathBuf, message: String },
    #[error("raster export failed: {0}")]
    Export(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Phantom parameters actually used in a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledVariation {
    pub thickness_um: f64,
    pub tilt_deg: f64,
    pub puncture_threshold_um: f64,
    pub needle_y_um: f64,
}

/// One line of `raw.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub mode: ControlMode,
    pub target_p: f64,
    pub v_max_mm_s: f64,
    pub trial: usize,
    pub seed: u64,
    pub variation: Option<SampledVariation>,
    pub outcome: Option<TrialOutcome>,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn is_failure(&self) -> bool {
        self.error.is_some()
    }
}

pub fn trial_id(mode: ControlMode, p: f64, v_max: f64, trial: usize) -> String {
    format!("{}_p{:.2}_v{:.2}_t{:02}", mode.name(), p, v_max, trial)
}

/// Seed of trial `trial` at grid point (p index, v index). The mode is not
/// part of the key so both arms see the same phantoms and noise.
pub fn trial_seed(master: u64, p_index: usize, v_index: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((p_index as u64) << 48) | ((v_index as u64) << 32) | trial as u64);
    rng.next_u64()
}

fn uniform(rng: &mut ChaCha8Rng, band: [f64; 2]) -> f64 {
    if band[0] == band[1] {
        // keep the draw so pinned bands do not shift later ones
        let _ = rng.random::<f64>();
        band[0]
    } else {
        rng.random_range(band[0]..band[1])
    }
}

pub fn sample_variation(v: &Variation, seed: u64) -> SampledVariation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SampledVariation {
        thickness_um: uniform(&mut rng, v.thickness_um),
        tilt_deg: uniform(&mut rng, v.tilt_deg),
        puncture_threshold_um: uniform(&mut rng, v.puncture_threshold_um),
        needle_y_um: uniform(&mut rng, v.needle_y_um),
    }
}

/// One planned trial in grid order.
#[derive(Debug, Clone)]
struct Job {
    mode: ControlMode,
    p: f64,
    v_max: f64,
    seed_key: (usize, usize),
}

#[derive(Debug)]
pub struct GridResult {
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<CellSummary>,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "trial panicked".into())
}

fn run_cell(
    cfg: &ExperimentConfig,
    job: &Job,
    mut keep: impl FnMut(&TrialRecord, &TrialOutcome) -> Result<(), HarnessError>,
) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut rows = Vec::new();
    for trial in 0..cfg.trials_per_cell {
        let seed = trial_seed(cfg.seed, job.seed_key.0, job.seed_key.1, trial);
        let sample = sample_variation(&cfg.variation, seed);
        let mut tc = cfg.trial_config(job.mode, job.p, job.v_max, seed);
        tc.phantom.thickness_um = sample.thickness_um;
        tc.phantom.tilt_deg = sample.tilt_deg;
        tc.phantom.tissue.puncture_threshold_um = sample.puncture_threshold_um;
        tc.needle.y_um += sample.needle_y_um;
        let result = catch_unwind(AssertUnwindSafe(|| run_trial(&tc)))
            .unwrap_or_else(|p| Err(crate::simloop::SimError::Config(panic_message(p))));
        let mut record = TrialRecord {
            trial_id: trial_id(job.mode, job.p, job.v_max, trial),
            mode: job.mode,
            target_p: job.p,
            v_max_mm_s: job.v_max,
            trial,
            seed,
            variation: Some(sample),
            outcome: None,
            error: None,
        };
        match result {
            Ok(outcome) => {
                keep(&record, &outcome)?;
                record.outcome = Some(outcome);
                rows.push(record);
            }
            Err(e) => {
                // the rest of the cell is abandoned; the failure is recorded
                record.error = Some(e.to_string());
                rows.push(record);
                break;
            }
        }
    }
    Ok(rows)
}

fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut out = Vec::new();
    for &mode in &cfg.modes {
        for (pi, &p) in cfg.target_p.iter().enumerate() {
            for (vi, &v_max) in cfg.v_max.iter().enumerate() {
                out.push(Job { mode, p, v_max, seed_key: (pi, vi) });
            }
        }
    }
    out
}

/// Runs the whole grid. When `out_dir` is given, frame and trajectory dumps
/// requested by the config are written there as trials finish.
pub fn run_grid(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<GridResult, HarnessError> {
    cfg.validate()?;
    let jobs = jobs(cfg);
    let work = |job: &Job| {
        run_cell(cfg, job, |record, outcome| match out_dir {
            Some(dir) => dump_artifacts(cfg, dir, record, outcome),
            None => Ok(()),
        })
    };
    let cells: Vec<Result<Vec<TrialRecord>, HarnessError>> = if cfg.parallel == 1 {
        jobs.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(work).collect())
    };
    let mut records = Vec::new();
    for cell in cells {
        records.extend(cell?);
    }
    let summaries = summarize(&records);
    Ok(GridResult { records, summaries })
}

fn dump_artifacts(
    cfg: &ExperimentConfig,
    dir: &Path,
    record: &TrialRecord,
    outcome: &TrialOutcome,
) -> Result<(), HarnessError> {
    if cfg.output.dump_frames {
        let fdir = dir.join("frames").join(&record.trial_id);
        if fdir.exists() {
            fs::remove_dir_all(&fdir).map_err(io_err(&fdir))?;
        }
        fs::create_dir_all(&fdir).map_err(io_err(&fdir))?;
        for (k, frame) in outcome.frames.iter().enumerate() {
            write_frame_dump(frame, &fdir.join(frames::dump_file_name(k)))?;
        }
    }
    if cfg.output.dump_trajectories {
        let tdir = dir.join("trajectories");
        fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
        let path = tdir.join(format!("{}.csv", record.trial_id));
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        write_trajectory_csv(&outcome.trajectory, BufWriter::new(f)).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn write_records<W: Write>(records: &[TrialRecord], mut w: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Record { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// Paths written by [`write_run`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub raw: PathBuf,
    pub summary: PathBuf,
    pub table: PathBuf,
    pub config: PathBuf,
}

/// Runs the grid and writes the run directory.
pub fn write_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(GridResult, RunFiles), HarnessError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let result = run_grid(cfg, Some(out_dir))?;
    let files = RunFiles {
        raw: out_dir.join("raw.jsonl"),
        summary: out_dir.join("summary.csv"),
        table: out_dir.join("table.txt"),
        config: out_dir.join("config.toml"),
    };
    let write = |path: &Path, body: &dyn Fn(&mut BufWriter<fs::File>) -> std::io::Result<()>| {
        let f = fs::File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(f);
        body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
    };
    write(&files.raw, &|w| write_records(&result.records, w))?;
    write(&files.summary, &|w| write_summary_csv(&result.summaries, w))?;
    write(&files.table, &|w| w.write_all(format_table(&result.summaries).as_bytes()))?;
    write(&files.config, &|w| w.write_all(cfg.to_toml_string().as_bytes()))?;
    Ok((result, files))
}

/// Recomputes `summary.csv` and the table from a raw record file. The
/// summary is written next to the records.
pub fn summarize_file(raw: &Path) -> Result<(Vec<CellSummary>, PathBuf), HarnessError> {
    let records = read_records(raw)?;
    let summaries = summarize(&records);
    let path = raw.with_file_name("summary.csv");
    let f = fs::File::create(&path).map_err(io_err(&path))?;
    write_summary_csv(&summaries, BufWriter::new(f)).map_err(io_err(&path))?;
    Ok((summaries, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            trials_per_cell: 1,
            modes: vec![ControlMode::VirtualLayer],
            target_p: vec![0.4],
            v_max: vec![0.4],
            ..Default::default()
        }
    }

    #[test]
    fn seeds_pair_modes_and_separate_trials() {
        assert_eq!(trial_seed(1, 0, 1, 2), trial_seed(1, 0, 1, 2));
        assert_ne!(trial_seed(1, 0, 1, 2), trial_seed(1, 0, 1, 3));
        assert_ne!(trial_seed(1, 0, 1, 2), trial_seed(1, 1, 0, 2));
        assert_ne!(trial_seed(1, 0, 1, 2), trial_seed(2, 0, 1, 2));
    }

    #[test]
    fn variation_stays_in_bands() {
        let v = Variation::default();
        for seed in 0..200 {
            let s = sample_variation(&v, seed);
            assert!((350.0..500.0).contains(&s.thickness_um));
            assert!((-3.0..3.0).contains(&s.tilt_deg));
            assert!((150.0..300.0).contains(&s.puncture_threshold_um));
            assert!((-12.5..12.5).contains(&s.needle_y_um));
        }
        let pinned = Variation::none(&Default::default());
        assert_eq!(sample_variation(&pinned, 3).thickness_um, 400.0);
    }

    #[test]
    fn single_cell_single_row() {
        let res = run_grid(&small(), None).unwrap();
        assert_eq!(res.records.len(), 1);
        assert_eq!(res.summaries.len(), 1);
        assert_eq!(res.records[0].trial_id, "virtual_layer_p0.40_v0.40_t00");
        assert!(res.records[0].outcome.is_some());
    }

    #[test]
    fn failing_trial_recorded() {
        let mut cfg = small();
        cfg.trials_per_cell = 3;
        // the needle starts outside the phantom
        cfg.needle.x_um = 5000.0;
        let res = run_grid(&cfg, None).unwrap();
        assert_eq!(res.records.len(), 1);
        assert!(res.records[0].is_failure());
        assert_eq!(res.summaries[0].failures, 1);
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (res, files) = write_run(&small(), dir.path()).unwrap();
        // in-memory logs are not part of the record file
        let mut expected = res.records.clone();
        for r in &mut expected {
            if let Some(o) = r.outcome.as_mut() {
                o.trajectory.clear();
                o.frame_log.clear();
                o.frames.clear();
            }
        }
        assert_eq!(read_records(&files.raw).unwrap(), expected);
        let csv = fs::read_to_string(&files.summary).unwrap();
        assert!(csv.starts_with(SUMMARY_HEADER));
        let loaded = ExperimentConfig::load(&files.config).unwrap();
        assert_eq!(loaded, small());
    }

    #[test]
    fn parallel_matches_serial() {
        let mut cfg = small();
        cfg.modes = vec![ControlMode::VirtualLayer, ControlMode::FixedPoint];
        cfg.trials_per_cell = 2;
        let serial = run_grid(&cfg, None).unwrap();
        cfg.parallel = 3;
        let par = run_grid(&cfg, None).unwrap();
        assert_eq!(serial.records, par.records);
    }
}
