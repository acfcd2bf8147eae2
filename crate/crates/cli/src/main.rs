mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use arpbox::config::{Config, Profile};
use arpbox::eval::ApMetric;
use arpbox::io::TileSpec;
use arpbox::loss::BoxLossKind;
use clap::{Parser, Subcommand};

use commands::{BoxKind, ReportFormat};
use error::{CliError, Result};

#[derive(Parser)]
#[command(name = "arpbox", version)]
#[command(about = "Area-ratio oriented boxes: conversion, losses, NMS, evaluation")]
#[command(allow_negative_numbers = true)]
struct Cli {
    /// JSON configuration; missing fields take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dataset preset for the obliquity threshold
    #[arg(long, global = true)]
    profile: Option<Profile>,

    /// Overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (stdout when absent); a directory for `tile`
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a box between the doc, quad and arp forms
    Convert {
        #[arg(long, value_enum)]
        from: BoxKind,
        #[arg(long, value_enum)]
        to: BoxKind,
        #[arg(required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Box loss of one pair, or the multi-task loss of a sample file
    Loss {
        /// Predicted arp box, comma separated
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            requires = "target"
        )]
        pred: Vec<f64>,
        /// Target arp box, comma separated
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            requires = "pred"
        )]
        target: Vec<f64>,
        /// JSON-lines file of samples for the weighted multi-task loss
        #[arg(long, conflicts_with_all = ["pred", "target"])]
        samples: Option<PathBuf>,
        /// smooth or reiou; defaults to the configured loss
        #[arg(long)]
        kind: Option<BoxLossKind>,
    },
    /// Gradient-descent fitting demo; writes a per-step CSV trace
    Fit {
        /// JSON-lines file of {"target": box, "init": box} objects
        #[arg(long, required_unless_present = "random")]
        targets: Option<PathBuf>,
        /// Number of random pairs to add
        #[arg(long)]
        random: Option<usize>,
        #[arg(long)]
        kind: Option<BoxLossKind>,
    },
    /// mAP as a function of the obliquity threshold
    Sweep {
        /// DOTA annotation file or directory of files
        #[arg(long)]
        gt: PathBuf,
        /// JSON-lines detections
        #[arg(long)]
        dets: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
    },
    /// Rotated NMS and final box selection
    Nms {
        #[arg(long)]
        dets: PathBuf,
    },
    /// Evaluate detections against DOTA annotations
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long, default_value = "voc12")]
        metric: ApMetric,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
    /// Split an annotation file into overlapping tiles
    Tile {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long, default_value_t = 1024)]
        tile_size: u32,
        #[arg(long, default_value_t = 200)]
        overlap: u32,
        /// Minimum fraction of a clipped box's area kept inside a tile
        #[arg(long, default_value_t = 0.5)]
        min_retained: f64,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = commands::read(path)?;
            Config::from_json(&text).map_err(|source| CliError::File {
                path: path.clone(),
                source,
            })?
        }
        None => Config::default(),
    };
    if let Some(p) = cli.profile {
        cfg = cfg.with_profile(p);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let text = match &cli.command {
        Command::Convert { from, to, values } => commands::convert(*from, *to, values)?,
        Command::Loss {
            pred,
            target,
            samples,
            kind,
        } => {
            let kind = kind.unwrap_or(cfg.box_loss);
            match samples {
                Some(path) => commands::loss_samples(path, kind, &cfg)?,
                None => commands::loss_pair(pred, target, kind, &cfg)?,
            }
        }
        Command::Fit {
            targets,
            random,
            kind,
        } => {
            let kind = kind.unwrap_or(cfg.box_loss);
            let s = commands::fit(targets.as_deref(), *random, kind, &cfg)?;
            eprintln!(
                "{} of {} runs reached IoU >= {}",
                s.successes,
                s.runs,
                commands::FIT_SUCCESS_IOU
            );
            s.csv
        }
        Command::Sweep {
            gt,
            dets,
            thresholds,
        } => commands::sweep(gt, dets, thresholds, &cfg)?,
        Command::Nms { dets } => commands::nms(dets, &cfg)?,
        Command::Eval {
            gt,
            dets,
            metric,
            format,
        } => commands::eval(gt, dets, *metric, *format, &cfg)?,
        Command::Tile {
            ann,
            width,
            height,
            tile_size,
            overlap,
            min_retained,
        } => {
            let spec = TileSpec {
                tile_size: *tile_size,
                overlap: *overlap,
                min_retained: *min_retained,
            };
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let written = commands::tile(ann, *width, *height, &spec, &dir)?;
            for p in written {
                println!("{}", p.display());
            }
            return Ok(());
        }
    };
    emit(&cli.out, &text)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
