use std::path::Path;

use log::info;

use mstrack::config::Config;
use mstrack::io::{self, DumpFormat};
use mstrack::runner::{self, EvalInput};
use mstrack::simulator::{GroundTruth, SceneSpec};
use mstrack::steering::ArrayGeometry;
use mstrack::{Error, Result};

pub struct RunPaths<'a> {
    pub wav: &'a Path,
    pub geometry: &'a Path,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
}

pub struct EvalArgs<'a> {
    pub truth: &'a Path,
    pub tracks: Option<&'a Path>,
    pub peaks: Option<&'a Path>,
    pub heatmap: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub overrides: &'a [(String, String)],
    pub out: &'a Path,
    pub roc: Option<&'a Path>,
}

/// 1 for usage and configuration mistakes, 3 for numerical failures, 2 for bad input files.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

pub fn simulate(spec: &Path, out: &Path) -> Result<()> {
    let spec = SceneSpec::load(spec)?;
    let truth = runner::simulate_to_dir(&spec, out)?;
    println!(
        "wrote {} ({} frames, {} active) to {}",
        runner::MIXTURE_WAV,
        truth.frame_count(),
        truth.active_frames(),
        out.display()
    );
    Ok(())
}

fn load_run(paths: &RunPaths<'_>, overrides: &[(String, String)]) -> Result<(ArrayGeometry, Config)> {
    let geometry = ArrayGeometry::load(paths.geometry)?;
    let config = Config::resolve(paths.config, overrides)?;
    Ok((geometry, config))
}

pub fn localize(paths: &RunPaths<'_>, overrides: &[(String, String)], dump: Option<DumpFormat>) -> Result<()> {
    let (geometry, config) = load_run(paths, overrides)?;
    let run = runner::localize_to_dir(paths.wav, &geometry, &config, paths.out, dump)?;
    info!("localized {} frames in {:.3} s", run.frames, run.wall_time_s);
    println!("{} frames, real-time factor {:.3}", run.frames, run.realtime_factor);
    Ok(())
}

pub fn track(paths: &RunPaths<'_>, overrides: &[(String, String)]) -> Result<()> {
    let (geometry, config) = load_run(paths, overrides)?;
    let run = runner::track_to_dir(paths.wav, &geometry, &config, paths.out)?;
    println!("{} frames, real-time factor {:.3}", run.frames, run.realtime_factor);
    Ok(())
}

pub fn evaluate(args: &EvalArgs<'_>) -> Result<()> {
    let truth = GroundTruth::load(args.truth)?;
    let config = if args.config.is_some() || !args.overrides.is_empty() {
        Some(Config::resolve(args.config, args.overrides)?)
    } else {
        None
    };
    let input = match (args.tracks, args.peaks) {
        (Some(p), _) => Some(EvalInput::Tracks(p)),
        (None, Some(p)) => Some(EvalInput::Peaks(p)),
        (None, None) => None,
    };
    if let Some(input) = input {
        let report = runner::evaluate_file(input, &truth, config.as_ref())?;
        io::write_json_file(args.out, &report)?;
        print!("{report}");
    }
    if let Some(csv) = args.heatmap {
        let heatmap = io::read_heatmap_csv(csv)?;
        let config = match (&config, &heatmap.header) {
            (Some(c), _) => c.clone(),
            (None, Some(h)) => h.config.clone(),
            (None, None) => Config::default(),
        };
        let points = runner::roc_from_heatmap(&heatmap, &truth, &config, &runner::default_roc_thresholds());
        let roc = args.roc.map(Path::to_path_buf).unwrap_or_else(|| args.out.with_extension("roc.csv"));
        runner::write_roc_csv(&roc, &points)?;
        if args.tracks.is_none() && args.peaks.is_none() {
            io::write_json_file(args.out, &points)?;
        }
        println!("wrote {} ROC points to {}", points.len(), roc.display());
    }
    Ok(())
}

pub fn heatmap(csv: &Path, out: &Path) -> Result<()> {
    let heatmap = io::read_heatmap_csv(csv)?;
    io::write_heatmap_pgm(out, &heatmap)
}
