use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TrialRecord;
use crate::control::ControlMode;

pub const SUMMARY_HEADER: &str = "mode,target_p,v_max_mm_s,trials,failures,mean_final_axial_error_um,std_final_axial_error_um,mean_final_p,std_final_p,bleb_success,mean_duration_s";

/// Aggregates of one (mode, p, v_max) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mode: ControlMode,
    pub target_p: f64,
    pub v_max_mm_s: f64,
    /// Records in the cell, failures included.
    pub trials: usize,
    pub failures: usize,
    pub mean_final_axial_error_um: f64,
    pub std_final_axial_error_um: f64,
    pub mean_final_p: f64,
    pub std_final_p: f64,
    pub bleb_success: usize,
    pub mean_duration_s: f64,
}

impl CellSummary {
    pub fn bleb_ratio(&self) -> String {
        format!("{}/{}", self.bleb_success, self.trials)
    }
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Groups records by cell in first-appearance order.
pub fn summarize(records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<(ControlMode, f64, f64)> = Vec::new();
    for r in records {
        let k = (r.mode, r.target_p, r.v_max_mm_s);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(mode, p, v)| {
            let cell: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| (r.mode, r.target_p, r.v_max_mm_s) == (mode, p, v))
                .collect();
            let done: Vec<_> = cell.iter().filter_map(|r| r.outcome.as_ref()).collect();
            let err: Vec<f64> = done.iter().map(|o| o.final_axial_error).collect();
            let fp: Vec<f64> = done.iter().map(|o| o.final_p).collect();
            let dur: Vec<f64> = done.iter().map(|o| o.duration_s).collect();
            let (me, se) = mean_std(&err);
            let (mp, sp) = mean_std(&fp);
            CellSummary {
                mode,
                target_p: p,
                v_max_mm_s: v,
                trials: cell.len(),
                failures: cell.iter().filter(|r| r.is_failure()).count(),
                mean_final_axial_error_um: me,
                std_final_axial_error_um: se,
                mean_final_p: mp,
                std_final_p: sp,
                bleb_success: done.iter().filter(|o| o.bleb_success_proxy).count(),
                mean_duration_s: mean_std(&dur).0,
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summaries: &[CellSummary], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for s in summaries {
        writeln!(
            w,
            "{},{:.2},{:.2},{},{},{:.3},{:.3},{:.4},{:.4},{},{:.3}",
            s.mode.name(),
            s.target_p,
            s.v_max_mm_s,
            s.trials,
            s.failures,
            s.mean_final_axial_error_um,
            s.std_final_axial_error_um,
            s.mean_final_p,
            s.std_final_p,
            s.bleb_ratio(),
            s.mean_duration_s
        )?;
    }
    w.flush()
}

/// Text table with one block per controller, one row per cell.
pub fn format_table(summaries: &[CellSummary]) -> String {
    let mut out = String::new();
    let mut modes: Vec<ControlMode> = Vec::new();
    for s in summaries {
        if !modes.contains(&s.mode) {
            modes.push(s.mode);
        }
    }
    for mode in modes {
        let rows: Vec<&CellSummary> = summaries.iter().filter(|s| s.mode == mode).collect();
        out.push_str(&format!("{}\n", mode.name()));
        out.push_str(&format!(
            "{:<8} {:>8} {:>22} {:>16} {:>7}\n",
            "v (mm/s)", "target", "final error (um)", "final p", "bleb"
        ));
        for s in &rows {
            out.push_str(&format!(
                "{:<8.2} {:>7.0}% {:>13.1} ± {:>6.1} {:>7.3} ± {:>5.3} {:>7}\n",
                s.v_max_mm_s,
                s.target_p * 100.0,
                s.mean_final_axial_error_um,
                s.std_final_axial_error_um,
                s.mean_final_p,
                s.std_final_p,
                s.bleb_ratio()
            ));
        }
        let k: usize = rows.iter().map(|s| s.bleb_success).sum();
        let n: usize = rows.iter().map(|s| s.trials).sum();
        out.push_str(&format!("total bleb {k}/{n}\n\n"));
    }
    out
}
