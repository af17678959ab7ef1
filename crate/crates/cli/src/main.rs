//! `btloc`: run, replay and evaluate behavior-tree localisation scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use btloc::behaviors::TransitionEvent;
use btloc::bt::TreeDef;
use btloc::mapdb::{FeatureLayer, LocationLogEntry, MapDb};
use btloc::metrics::{compute_report, TickRecord};
use btloc::pipeline::UpdateStats;
use btloc::runner::{
    build_location_model, read_jsonl, survey_map, write_json, RunOptions, RunOutput, RunSettings, Runner,
};
use btloc::simulator::{generate_ground_truth, generate_map, read_log, simulate, write_log, LogHeader, Scenario};
use btloc::types::Timestamp;

#[derive(Parser)]
#[command(name = "btloc", version, about = "Behavior-tree supervised multi-sensor localisation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and localise through it.
    Run(RunArgs),
    /// Re-run the localiser over a recorded measurement log.
    Replay(ReplayArgs),
    /// Location-model maps.
    Map {
        #[command(subcommand)]
        cmd: MapCommand,
    },
    /// Recompute a run report from its logs.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Map file; when absent one is surveyed from the scenario.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Behavior tree definition (JSON); defaults to the built-in experiment tree.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Run settings (JSON); missing fields take their defaults.
    #[arg(long)]
    settings: Option<PathBuf>,
    /// Output directory for the run's artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Record every node status per tick to trace.jsonl.
    #[arg(long)]
    trace: bool,
    /// Control file polled each tick for `reset <x> <y> <heading_deg>` or `reinit` lines.
    #[arg(long)]
    control: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's measurement seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the measurement stream to measurements.jsonl for replay.
    #[arg(long)]
    record: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReplayArgs {
    /// Measurement log written by `run --record`.
    log: PathBuf,
    /// Defaults to map.json beside the log.
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum MapCommand {
    /// Build a map from location logs and a feature source.
    Build(MapBuildArgs),
}

#[derive(Args)]
struct MapBuildArgs {
    /// location_log.jsonl files of past runs.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Take features from this scenario's generated map.
    #[arg(long, conflicts_with = "features")]
    scenario: Option<PathBuf>,
    /// Take features from an existing map file.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    settings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory containing trajectory.jsonl, events.jsonl and stats.jsonl.
    run: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_settings(path: Option<&Path>) -> Result<RunSettings> {
    match path {
        None => Ok(RunSettings::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load_tree(path: Option<&Path>) -> Result<Option<TreeDef>> {
    path.map(|p| {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        TreeDef::from_json(&text).with_context(|| format!("parsing {}", p.display()))
    })
    .transpose()
}

/// Lines of the control file not yet delivered.
struct ControlFeed {
    path: PathBuf,
    seen: usize,
}

impl ControlFeed {
    fn poll(&mut self) -> Vec<String> {
        let Ok(text) = fs::read_to_string(&self.path) else {
            return Vec::new();
        };
        let lines: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let new = lines.get(self.seen..).unwrap_or(&[]).to_vec();
        self.seen = lines.len().max(self.seen);
        new
    }
}

fn drive(mut runner: Runner, control: Option<&Path>) -> RunOutput {
    let mut feed = control.map(|p| ControlFeed {
        path: p.to_path_buf(),
        seen: 0,
    });
    while !runner.is_done() {
        if let Some(f) = feed.as_mut() {
            let at = runner.next_tick_time();
            for line in f.poll() {
                runner.push_control(at, line);
            }
        }
        runner.step();
    }
    runner.finish()
}

fn finish_run(out: &RunOutput, dir: &Path) -> Result<ExitCode> {
    let report = out.write_artifacts(dir)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if out.main_ended_lost() {
        log::warn!("main filter ended LOST");
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let mut scenario = Scenario::load(&a.scenario).with_context(|| format!("loading {}", a.scenario.display()))?;
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    let c = &a.common;
    let settings = load_settings(c.settings.as_deref())?;
    let tree = load_tree(c.tree.as_deref())?;
    let map = match &c.map {
        Some(p) => MapDb::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => survey_map(&scenario, &settings)?,
    };
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    map.save(&c.out.join("map.json"))?;
    write_json(
        &c.out.join("config.json"),
        &json!({
            "scenario": scenario,
            "seed": scenario.seed,
            "settings": settings,
            "map": c.map.as_ref().map(|p| p.display().to_string()),
            "tree": tree.clone().unwrap_or_else(|| settings.tree_def()),
        }),
    )?;
    let sim = simulate(&scenario)?;
    if a.record {
        let header = LogHeader {
            scenario: scenario.clone(),
            seed: scenario.seed,
        };
        write_log(&c.out.join("measurements.jsonl"), &header, &sim.measurements)?;
    }
    let end = Timestamp::from_micros((scenario.duration() * 1e6).round() as u64);
    let runner = Runner::new(
        scenario.start,
        Arc::new(map),
        sim.measurements,
        end,
        Some(sim.truth),
        &settings,
        RunOptions {
            trace: c.trace,
            tree,
            ..RunOptions::default()
        },
    )?;
    let out = drive(runner, c.control.as_deref());
    finish_run(&out, &c.out)
}

fn cmd_replay(a: ReplayArgs) -> Result<ExitCode> {
    let (header, measurements) = read_log(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let c = &a.common;
    let settings = load_settings(c.settings.as_deref())?;
    let tree = load_tree(c.tree.as_deref())?;
    let map_path = c
        .map
        .clone()
        .unwrap_or_else(|| a.log.parent().unwrap_or(Path::new(".")).join("map.json"));
    let map = MapDb::load(&map_path).with_context(|| format!("loading {}", map_path.display()))?;
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let scenario = header.scenario;
    let truth = generate_ground_truth(&scenario)?;
    let end = Timestamp::from_micros((scenario.duration() * 1e6).round() as u64);
    let runner = Runner::new(
        scenario.start,
        Arc::new(map),
        measurements,
        end,
        Some(truth),
        &settings,
        RunOptions {
            trace: c.trace,
            tree,
            ..RunOptions::default()
        },
    )?;
    let out = drive(runner, c.control.as_deref());
    finish_run(&out, &c.out)
}

fn cmd_map_build(a: MapBuildArgs) -> Result<ExitCode> {
    let settings = load_settings(a.settings.as_deref())?;
    let features = match (&a.scenario, &a.features) {
        (Some(s), None) => FeatureLayer::from_features(generate_map(&Scenario::load(s)?)?)?,
        (None, Some(f)) => MapDb::load(f)?.features,
        _ => bail!("give exactly one of --scenario or --features"),
    };
    let mut entries: Vec<LocationLogEntry> = Vec::new();
    for p in &a.logs {
        entries.extend(read_jsonl::<LocationLogEntry>(p).with_context(|| format!("reading {}", p.display()))?);
    }
    if entries.is_empty() {
        bail!("the given logs hold no entries");
    }
    let map = MapDb::new(features, build_location_model(&entries, &settings.thresholds));
    map.save(&a.out)?;
    eprintln!("{} cells written to {}", map.location.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    let ticks: Vec<TickRecord> = read_jsonl(&a.run.join("trajectory.jsonl"))?;
    let events: Vec<TransitionEvent> = read_jsonl(&a.run.join("events.jsonl"))?;
    let stats: Vec<UpdateStats> = read_jsonl(&a.run.join("stats.jsonl"))?;
    let report = compute_report(&ticks, &events, &stats, None)?;
    match a.out {
        Some(p) => write_json(&p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Run(a) => cmd_run(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Map {
            cmd: MapCommand::Build(a),
        } => cmd_map_build(a),
        Command::Report(a) => cmd_report(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
