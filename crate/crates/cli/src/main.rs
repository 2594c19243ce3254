use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use switchboard_core::embeddings::{SceneState, SyntheticEncoder, SyntheticProvider};
use switchboard_core::evalkit::{
    build_datasets, evaluate_ds, growth_csv, label_growth, report, tag_observability, write_report, EvalConfig,
    FrameSource, LabelGrowthConfig, SplitMode,
};
use switchboard_core::executor::{read_rollout, run_episode, write_rollout, AnomalyGate, CommandQueue, Waypoint};
use switchboard_core::graph::{DsId, PartId};
use switchboard_core::library::{load_library, save_library};
use switchboard_core::switcher::Method;
use switchboard_core::task::{Task, TaskConfig};
use switchboard_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "switchboard", version, about = "Teach, replay and evaluate conditional task graphs")]
struct Cli {
    /// Keep everything on the command line: `serve` refuses to start.
    #[arg(long, global = true)]
    no_serve: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Modality {
    Scripted,
    Console,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a task library from a first demonstration.
    Demo {
        /// Task id stored in the library.
        #[arg(long)]
        task: String,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "scripted")]
        modality: Modality,
        /// Waypoints, one JSON object per line.
        #[arg(long)]
        demo: Option<PathBuf>,
        /// Task configuration (JSON); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Library directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a task on a scene and record the rollout.
    Run {
        /// Task library directory.
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        rollout: PathBuf,
        #[arg(long)]
        gate: Option<AnomalyGate>,
        /// Scripted command stream, one JSON entry per line.
        #[arg(long)]
        commands: Option<PathBuf>,
        /// Simulator seed mixed into the scene's render noise.
        #[arg(long)]
        seed: Option<u64>,
        /// Expected part sequence, comma separated, recorded with the rollout.
        #[arg(long, value_delimiter = ',')]
        expected: Option<Vec<u32>>,
        /// Leave the library untouched even if the episode taught something.
        #[arg(long)]
        no_save: bool,
    },
    /// Teach a new successor at an existing decision state.
    Branch {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        ds: u32,
        #[arg(long)]
        demo: PathBuf,
        /// Scene the demonstration was recorded in.
        #[arg(long)]
        scene: PathBuf,
    },
    /// Per-DS switcher accuracy over recorded rollouts.
    Eval {
        /// Directory of rollout `.jsonl` files.
        #[arg(long)]
        rollouts: PathBuf,
        /// Library the rollouts were recorded with.
        #[arg(long)]
        task: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "prototype-concat")]
        method: Vec<Method>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "default")]
        split: SplitMode,
    },
    /// Accuracy against the number of competing classes.
    Labelgrowth {
        /// Inclusive range such as `2..8`.
        #[arg(long, default_value = "2..8")]
        classes: String,
        #[arg(long, value_delimiter = ',')]
        method: Option<Vec<Method>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// HTTP and WebSocket service.
    Serve {
        /// Bind address; `SWITCHBOARD_ADDR` or 127.0.0.1:7878 otherwise.
        #[arg(long)]
        addr: Option<std::net::SocketAddr>,
        /// Directory tasks are persisted in.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pace ticks at the control rate instead of running flat out.
        #[arg(long)]
        realtime: bool,
    },
}

fn read_scene(path: &Path) -> Result<SceneState> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scene: SceneState = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    scene.completed().with_context(|| format!("scene {}", path.display()))
}

fn read_waypoints(path: &Path) -> Result<Vec<Waypoint>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    if out.is_empty() {
        bail!("{} holds no waypoints", path.display());
    }
    Ok(out)
}

fn read_commands(path: &Path) -> Result<CommandQueue> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    CommandQueue::parse_jsonl(&text).map_err(|(line, e)| anyhow::anyhow!("{}:{line}: {e}", path.display()))
}

fn provider(task: &Task) -> SyntheticProvider {
    SyntheticProvider::new(SyntheticEncoder::new(task.config.encoder))
}

fn parse_range(raw: &str) -> Result<(usize, usize)> {
    let (lo, hi) = raw.split_once("..").with_context(|| format!("expected a range like 2..8, got {raw:?}"))?;
    let hi = hi.strip_prefix('=').unwrap_or(hi);
    Ok((lo.trim().parse()?, hi.trim().parse()?))
}

fn rollout_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Demo { task, scene, modality, demo, config, out } => {
            if let Modality::Console = modality {
                bail!("console demonstrations are recorded through the service: run `switchboard serve` and teach from the console");
            }
            let demo = demo.context("--demo is required with the scripted modality")?;
            let scene = read_scene(&scene)?;
            let config: TaskConfig = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => TaskConfig::default(),
            };
            let provider = SyntheticProvider::new(SyntheticEncoder::new(config.encoder));
            let mut t = Task::from_waypoints(&task, &read_waypoints(&demo)?, &scene, &provider, config)?;
            t.train()?;
            save_library(&t, &out)?;
            let steps = t.graph.parts.values().map(|p| p.trials[0].steps.len()).sum::<usize>();
            println!("task {task}: 1 part, {steps} steps, written to {}", out.display());
        }
        Cmd::Run { task, scene, rollout, gate, commands, seed, expected, no_save } => {
            let mut t = load_library(&task)?;
            if let Some(g) = gate {
                t.config.exec.gate = g;
            }
            let saved_seed = t.config.exec.sim.seed;
            if let Some(s) = seed {
                t.config.exec.sim.seed = s;
            }
            let scene = read_scene(&scene)?;
            let queue = match commands {
                Some(p) => read_commands(&p)?,
                None => CommandQueue::new(),
            };
            let expected = expected.map(|v| v.into_iter().map(PartId).collect());
            let before = t.graph.clone();
            let p = provider(&t);
            let r = run_episode(&mut t, &p, &scene, queue, expected)?;
            t.config.exec.sim.seed = saved_seed;
            write_rollout(&r, &rollout)?;
            let o = &r.outcome;
            let variant: Vec<String> = o.executed_variant.iter().map(|p| p.0.to_string()).collect();
            println!(
                "{:?} after {} ticks, parts {}, {} events",
                o.status,
                o.ticks,
                variant.join(" -> "),
                r.events.len()
            );
            if t.graph != before && !no_save {
                save_library(&t, &task)?;
                println!(
                    "library updated: {} parts, {} decision states",
                    t.graph.parts.len(),
                    t.graph.decision_states.len()
                );
            }
        }
        Cmd::Branch { task, ds, demo, scene } => {
            let mut t = load_library(&task)?;
            let scene = read_scene(&scene)?;
            let p = provider(&t);
            let id = t.add_branch_from_waypoints(DsId(ds), &read_waypoints(&demo)?, &scene, &p)?;
            t.train()?;
            save_library(&t, &task)?;
            println!("part {} added at decision state {ds}", id.0);
        }
        Cmd::Eval { rollouts, task, method, out, split } => {
            let t = load_library(&task)?;
            let files = rollout_files(&rollouts)?;
            if files.is_empty() {
                bail!("no rollouts in {}", rollouts.display());
            }
            let recorded = files.iter().map(|f| read_rollout(f)).collect::<Result<Vec<_>, _>>()?;
            let mut data = build_datasets(&recorded, &t.graph, split)?;
            let encoder = SyntheticEncoder::new(t.config.encoder);
            let mut results = Vec::new();
            for ds in &mut data.classification {
                tag_observability(ds, &encoder);
                for &m in &method {
                    let mut cfg = EvalConfig { switcher: t.config.switcher.clone(), ..EvalConfig::default() };
                    cfg.switcher.method = m;
                    cfg.latch_frames = t.config.exec.latch_frames;
                    results.push(evaluate_ds(ds, FrameSource::Rollouts(&recorded), &cfg)?);
                }
            }
            let rep = report(results);
            write_report(&rep, &out)?;
            print!("{}", rep.summary_text());
        }
        Cmd::Labelgrowth { classes, method, out } => {
            let (min_classes, max_classes) = parse_range(&classes)?;
            let mut cfg = LabelGrowthConfig { min_classes, max_classes, ..LabelGrowthConfig::default() };
            if let Some(m) = method {
                cfg.methods = m;
            }
            let points = label_growth(&cfg)?;
            std::fs::write(&out, growth_csv(&points)).with_context(|| format!("writing {}", out.display()))?;
            for p in &points {
                println!("{} classes, {}: {:.3}", p.classes, p.method, p.decision_accuracy);
            }
        }
        Cmd::Serve { addr, data, realtime } => {
            if cli.no_serve {
                bail!("--no-serve is set: the service is disabled");
            }
            let addr = match addr {
                Some(a) => a,
                None => switchboard_service::bind_addr().map_err(anyhow::Error::msg)?,
            };
            let sim = switchboard_core::executor::SimConfig::default();
            let tick_interval = if realtime { Duration::from_secs_f64(1.0 / sim.control_hz) } else { Duration::ZERO };
            let state = AppState::load(ServiceConfig { data_dir: data, tick_interval }).map_err(anyhow::Error::msg)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(switchboard_service::serve(addr, state))?;
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
