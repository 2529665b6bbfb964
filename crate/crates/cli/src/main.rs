//! `mstrack`: simulate scenes, localize and track speakers, score the results.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mstrack::io::DumpFormat;

#[derive(Debug, Parser)]
#[command(
    name = "mstrack",
    version,
    about = "Online multi-speaker localization and tracking for microphone arrays",
    after_help = "Any configuration value can be overridden with a flag named by its dotted path, \
                  e.g. `--localizer.step 0.05` or `--tracker.max_speakers=3`."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene spec to a multichannel WAV, ground truth, and geometry file.
    Simulate {
        /// Scene spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame localization: heatmap CSV and PGM plus selected peaks.
    Localize {
        #[command(flatten)]
        input: RunInput,
        /// Also dump the DP-RTF features of every frame.
        #[arg(long, value_enum)]
        dump_features: Option<FeatureFormat>,
    },
    /// Localization followed by tracking: one JSON line per track and tracker step.
    Track {
        #[command(flatten)]
        input: RunInput,
    },
    /// Score peaks or tracks against ground truth.
    Evaluate {
        /// Ground truth JSON written by `simulate`.
        #[arg(long)]
        truth: PathBuf,
        /// Track JSONL written by `track`.
        #[arg(long, conflicts_with = "peaks", required_unless_present_any = ["peaks", "heatmap"])]
        tracks: Option<PathBuf>,
        /// Peak JSONL written by `localize`.
        #[arg(long)]
        peaks: Option<PathBuf>,
        /// Heatmap CSV written by `localize`; enables the ROC sweep.
        #[arg(long)]
        heatmap: Option<PathBuf>,
        /// Config file; the configuration embedded in the input header is used otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Metrics JSON output.
        #[arg(long)]
        out: PathBuf,
        /// ROC CSV output, written when `--heatmap` is given.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Convert a heatmap CSV into an 8-bit PGM image.
    Heatmap {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunInput {
    /// Multichannel WAV (16-bit int or 32-bit float).
    #[arg(long)]
    wav: PathBuf,
    /// Array geometry JSON: `{"mic_positions": [[x, y, z], ...]}`.
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FeatureFormat {
    Csv,
    Jsonl,
}

impl From<FeatureFormat> for DumpFormat {
    fn from(f: FeatureFormat) -> Self {
        match f {
            FeatureFormat::Csv => DumpFormat::Csv,
            FeatureFormat::Jsonl => DumpFormat::Jsonl,
        }
    }
}

/// Removes `--dotted.path value` and `--dotted.path=value` pairs from the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("override --{name} needs a value"))?,
        };
        overrides.push((name.to_string(), value));
    }
    Ok((rest, overrides))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate { spec, out } => commands::simulate(&spec, &out),
        Command::Localize { input, dump_features } => commands::localize(
            &commands::RunPaths { wav: &input.wav, geometry: &input.geometry, config: input.config.as_deref(), out: &input.out },
            &overrides,
            dump_features.map(Into::into),
        ),
        Command::Track { input } => commands::track(
            &commands::RunPaths { wav: &input.wav, geometry: &input.geometry, config: input.config.as_deref(), out: &input.out },
            &overrides,
        ),
        Command::Evaluate { truth, tracks, peaks, heatmap, config, out, roc } => commands::evaluate(&commands::EvalArgs {
            truth: &truth,
            tracks: tracks.as_deref(),
            peaks: peaks.as_deref(),
            heatmap: heatmap.as_deref(),
            config: config.as_deref(),
            overrides: &overrides,
            out: &out,
            roc: roc.as_deref(),
        }),
        Command::Heatmap { csv, out } => commands::heatmap(&csv, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
