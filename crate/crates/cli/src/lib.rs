//! `facetrack` command line: synthesize scenarios, run trackers with
//! optional recognition gating, simulate pipeline allocations, and inspect
//! reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use facetrack_core::config::RunConfig;
use facetrack_core::io::{
    group_by_frame, parse_detections, parse_embeddings_str, parse_gallery_str, parse_truth_str,
    read_frames, read_text, write_scenario, write_text,
};
use facetrack_core::pipesim::{
    self, fit, full_pipeline, rank_allocations, solve_gating_fraction, placement_runs, Anchors, Calibration,
};
use facetrack_core::report::{canonical_json, round9, write_report};
use facetrack_core::run::{run, RunInputs};
use facetrack_core::synth::{synth_scenario, ScenarioSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "facetrack", version, about = "Multi-face tracking with recognition gating")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a tracker over a detection file and write a report.
    Track(TrackArgs),
    /// Like `track`, with identity lookups gated on new track IDs.
    Gate(GateArgs),
    /// Evaluate stage-to-engine allocations with the pipeline model.
    Simulate(SimulateArgs),
    /// Generate a synthetic scenario.
    Synth(SynthArgs),
    /// Print a report, or compare two.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Directory of frame_NNNNNN.pgm files (needed by the dcf tracker).
    #[arg(long)]
    frames: Option<PathBuf>,
    /// frame,det_index,target annotation for switch counting.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Overrides pipesim.calibration from the config.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GateArgs {
    #[command(flatten)]
    track: TrackArgs,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RunSet {
    /// The four detect/recognize placements.
    Table1,
    /// Run 2 with tracking on the video compositor.
    Full,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, required_unless_present = "fit")]
    calibration: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table1")]
    runs: RunSet,
    /// Fraction of frames that run recognition.
    #[arg(long, default_value_t = 1.0)]
    gating: f64,
    /// Also report the gating fraction reaching this throughput.
    #[arg(long)]
    target_fps: Option<f64>,
    /// Write the calibration fitted from the built-in anchors and exit.
    #[arg(long, value_name = "PATH")]
    fit: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioKind {
    Crossing,
    Single,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "crossing")]
    scenario: ScenarioKind,
    #[arg(long)]
    seed: Option<u64>,
    /// Sequence length (single scenario only).
    #[arg(long, default_value_t = 30)]
    frames: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    report: PathBuf,
    #[arg(long)]
    compare: Option<PathBuf>,
}

/// Error worth exit code 2, already formatted.
struct DataError(String);

impl<E: std::fmt::Display> From<E> for DataError {
    fn from(e: E) -> Self {
        DataError(e.to_string())
    }
}

type Outcome = Result<(), DataError>;

pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();

    let result = match cli.command {
        Command::Track(a) => cmd_track(&a, None),
        Command::Gate(a) => cmd_track(&a.track, Some((&a.embeddings, &a.gallery))),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(DataError(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DATA
        }
    }
}

fn with_path<T, E: std::fmt::Display>(path: &Path, r: Result<T, E>) -> Result<T, DataError> {
    r.map_err(|e| DataError(format!("{}: {e}", path.display())))
}

fn load_calibration(path: &Path) -> Result<Calibration, DataError> {
    with_path(path, Calibration::parse(&read_text(path)?))
}

fn cmd_track(a: &TrackArgs, gating: Option<(&PathBuf, &PathBuf)>) -> Outcome {
    let config = with_path(&a.config, RunConfig::parse(&read_text(&a.config)?))?;
    let rows = with_path(&a.detections, parse_detections(&a.detections))?;
    let frames = a.frames.as_deref().map(read_frames).transpose()?;
    let last_det = rows.last().map_or(0, |r| r.detection.frame);
    let n = frames.as_ref().map_or(last_det, |f| (f.len() as u32).max(last_det));
    let detections = group_by_frame(&rows, n);

    let truth = match &a.truth {
        Some(p) => Some(with_path(p, parse_truth_str(&read_text(p)?))?),
        None => None,
    };
    let (embeddings, gallery) = match gating {
        Some((e, g)) => (
            Some(with_path(e, parse_embeddings_str(&read_text(e)?))?),
            Some(with_path(g, parse_gallery_str(&read_text(g)?))?),
        ),
        None => (None, None),
    };
    let cal_path = a.calibration.clone().or_else(|| {
        config.calibration.as_ref().map(|c| {
            let p = PathBuf::from(c);
            match a.config.parent() {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            }
        })
    });
    let calibration = cal_path.as_deref().map(load_calibration).transpose()?;

    let report = run(
        &config,
        RunInputs {
            detections: &detections,
            frames: frames.as_deref(),
            embeddings: embeddings.as_ref(),
            gallery: gallery.as_ref(),
            truth: truth.as_ref(),
            calibration: calibration.as_ref(),
        },
    )?;
    write_report(&report, &a.out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Outcome {
    if let Some(path) = &a.fit {
        let header = "# Engine and stage costs fitted to measured allocation timings and power.\n# Regenerate with `facetrack simulate --fit <path>`.\n";
        write_text(path, &format!("{header}{}", fit(&Anchors::default()).to_text()))?;
        return Ok(());
    }
    let path = a.calibration.as_ref().expect("required by clap");
    let cal = load_calibration(path)?;
    let candidates = match a.runs {
        RunSet::Table1 => placement_runs(),
        RunSet::Full => vec![full_pipeline()],
    };
    let ranked = rank_allocations(&cal, &candidates, a.gating)?;
    let r9 = |x: f64| json!(round9(x));
    let runs: Vec<Value> = ranked
        .iter()
        .map(|r| {
            json!({
                "allocation": r.allocation,
                "throughput_fps": r9(r.throughput_fps),
                "max_load_ms": r9(r.max_load_ms),
                "end_to_end_ms": r9(r.end_to_end_ms),
                "total_power_mw": r9(r.total_power_mw),
                "power_mw": r.power_mw.iter().map(|(k, v)| (k.clone(), r9(*v))).collect::<serde_json::Map<_, _>>(),
                "utilization": r.utilization.iter().map(|(k, v)| (k.clone(), r9(*v))).collect::<serde_json::Map<_, _>>(),
            })
        })
        .collect();
    let mut out = json!({ "gating_fraction": r9(a.gating), "ranking": runs });
    if let Some(target) = a.target_fps {
        let alloc = &candidates[0];
        let g = solve_gating_fraction(&cal, alloc, target)?;
        let at = pipesim::pipeline_throughput(&cal, alloc, g)?;
        out["target"] = json!({
            "allocation": alloc.name,
            "fps": r9(target),
            "gating_fraction": r9(g),
            "throughput_fps": r9(at.throughput_fps),
            "total_power_mw": r9(at.total_power_mw),
        });
    }
    let text = format!("{}\n", serde_json::to_string_pretty(&out)?);
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Outcome {
    let mut spec = match a.scenario {
        ScenarioKind::Crossing => ScenarioSpec::crossing(),
        ScenarioKind::Single => ScenarioSpec::single(a.frames),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let s = synth_scenario(&spec)?;
    write_scenario(&a.out, &s)?;
    log::info!("wrote {} frames to {}", s.frames.len(), a.out.display());
    Ok(())
}

fn summary(v: &Value) -> Vec<(String, String)> {
    let keys = [
        "frames",
        "tracks_created",
        "id_switches",
        "recognition_calls",
        "gating_reduction",
        "fps_simulated",
    ];
    let mut out: Vec<(String, String)> = keys
        .iter()
        .map(|k| (k.to_string(), v.get(*k).map_or("-".into(), |x| x.to_string())))
        .collect();
    out.push((
        "power_mw.total".into(),
        v.pointer("/power_mw/total").map_or("null".into(), |x| x.to_string()),
    ));
    out.push((
        "events".into(),
        v.get("events")
            .and_then(Value::as_array)
            .map_or("-".into(), |e| e.len().to_string()),
    ));
    out
}

fn load_report(path: &Path) -> Result<(String, Value), DataError> {
    let text = with_path(path, canonical_json(&read_text(path)?))?;
    let v: Value = serde_json::from_str(&text)?;
    if !v.is_object() {
        return Err(DataError(format!("{}: not a report object", path.display())));
    }
    Ok((text, v))
}

fn cmd_report(a: &ReportArgs) -> Outcome {
    let (text, v) = load_report(&a.report)?;
    match &a.compare {
        None => {
            for (k, val) in summary(&v) {
                println!("{k:<18} {val}");
            }
        }
        Some(other) => {
            let (other_text, w) = load_report(other)?;
            if text == other_text {
                println!("identical");
                return Ok(());
            }
            for ((k, x), (_, y)) in summary(&v).into_iter().zip(summary(&w)) {
                let mark = if x == y { " " } else { "*" };
                println!("{mark} {k:<18} {x:<14} {y}");
            }
            if v.get("events") != w.get("events") {
                println!("* events differ");
            }
        }
    }
    Ok(())
}
