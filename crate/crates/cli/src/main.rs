use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ioct_core::control::ControlMode;
use ioct_core::harness::{export_frames, format_table, summarize_file, write_run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ioct-sim", version, about = "Simulated iOCT-guided subretinal needle insertion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid and write raw.jsonl, summary.csv, table.txt and config.toml.
    Run {
        /// TOML experiment config; defaults reproduce the standard 40-trial grid.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to one controller (virtual_layer or fixed_point).
        #[arg(long)]
        mode: Option<ControlMode>,
        /// Target layer fractions, comma separated.
        #[arg(long, value_delimiter = ',')]
        target_p: Option<Vec<f64>>,
        /// Maximum velocities in mm/s, comma separated.
        #[arg(long, value_delimiter = ',')]
        v_max: Option<Vec<f64>>,
        /// Trials per cell.
        #[arg(long)]
        trials: Option<usize>,
        /// Worker threads; 0 uses all cores.
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        dump_frames: bool,
    },
    /// Recompute summary.csv from a raw record file.
    Summarize {
        #[arg(long)]
        raw: PathBuf,
    },
    /// Convert the frame dumps of one trial into PNG label rasters.
    ExportFrames {
        #[arg(long)]
        trial: String,
        /// Run directory the trial was written to.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Destination; defaults to <out>/export/<trial>.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, seed, mode, target_p, v_max, trials, parallel, dump_frames } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.modes = vec![m];
            }
            if let Some(p) = target_p {
                cfg.target_p = p;
            }
            if let Some(v) = v_max {
                cfg.v_max = v;
            }
            if let Some(n) = trials {
                cfg.trials_per_cell = n;
            }
            if let Some(n) = parallel {
                cfg.parallel = n;
            }
            cfg.output.dump_frames |= dump_frames;
            cfg.validate()?;
            let (result, files) = write_run(&cfg, &out).with_context(|| format!("run into {}", out.display()))?;
            print!("{}", format_table(&result.summaries));
            let failed = result.records.iter().filter(|r| r.is_failure()).count();
            if failed > 0 {
                eprintln!("{failed} trial(s) failed; see {}", files.raw.display());
            }
            eprintln!("wrote {}", out.display());
        }
        Command::Summarize { raw } => {
            let (summaries, path) = summarize_file(&raw)?;
            print!("{}", format_table(&summaries));
            eprintln!("wrote {}", path.display());
        }
        Command::ExportFrames { trial, out, dest } => {
            let dest = dest.unwrap_or_else(|| out.join("export").join(&trial));
            let s = export_frames(&out, &trial, &dest)?;
            println!("{} frames, {} rasters, index {}", s.frames, s.rasters, s.index.display());
        }
    }
    Ok(())
}
