use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use recallgraph::{commands, server};
use recallgraph_core::config::EngineConfig;
use recallgraph_core::harness::{generate_scenario, perturb_stream};
use recallgraph_core::memory::MemoryStore;
use recallgraph_core::perception::write_event_stream;
use recallgraph_core::session::SessionManager;

#[derive(Parser)]
#[command(
    name = "recallgraph",
    version,
    about = "Record routines as scene graphs and get guided through them later"
)]
struct Cli {
    /// Episode store directory.
    #[arg(long, global = true, env = "RECALLGRAPH_DATA", default_value = "recallgraph-data")]
    data_dir: PathBuf,
    /// Engine configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Store an event stream file as an episode ("-" reads stdin).
    Record {
        file: PathBuf,
        #[arg(long)]
        title: String,
        #[arg(long, default_value = "")]
        location: String,
    },
    /// List stored episodes.
    Episodes,
    /// Print the task plan inferred from an episode.
    Plan { episode_id: String },
    /// Run a recall session against an episode.
    Recall(RecallArgs),
    /// Replay a scenario suite and print the metrics table.
    Eval {
        /// Bundled suite name or path to a suite file.
        #[arg(long)]
        suite: String,
        /// Use this seed for every row.
        #[arg(long)]
        seed: Option<u64>,
        /// Extra noise profiles (TOML).
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Also write the machine-readable table here.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Generate a scenario recording.
    Generate {
        template: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Apply a noise profile to the stream.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Stream destination; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write ground truth JSON here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct RecallSource {
    /// Event stream to replay.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Read events from stdin as they arrive.
    #[arg(long)]
    interactive: bool,
}

#[derive(Args)]
struct RecallArgs {
    episode_id: String,
    #[command(flatten)]
    source: RecallSource,
    /// One JSON object per frame instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        Ok(buf)
    } else {
        std::fs::read(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn open_manager(cli: &Cli, cfg: EngineConfig) -> Result<SessionManager> {
    let store =
        MemoryStore::open(&cli.data_dir).with_context(|| format!("opening store {}", cli.data_dir.display()))?;
    Ok(SessionManager::new(store, cfg))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Record { file, title, location } => {
            let bytes = read_input(file)?;
            let meta = open_manager(&cli, cfg)?.ingest_recording(&bytes, title, location)?;
            writeln!(out, "{}\t{}\t{} frames", meta.id, meta.title, meta.duration)?;
        }
        Command::Episodes => {
            for m in open_manager(&cli, cfg)?.list_episodes() {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    m.id,
                    m.title,
                    m.location,
                    m.recorded_at.to_rfc3339(),
                    m.duration
                )?;
            }
        }
        Command::Plan { episode_id } => {
            let plan = open_manager(&cli, cfg)?.plan(episode_id)?;
            write!(out, "{}", plan.to_text())?;
        }
        Command::Recall(args) => {
            let manager = open_manager(&cli, cfg)?;
            let snap = match &args.source.events {
                Some(path) => {
                    commands::recall_file(&manager, &args.episode_id, &read_input(path)?, &mut out, args.json)?
                }
                None => {
                    commands::recall_interactive(&manager, &args.episode_id, io::stdin().lock(), &mut out, args.json)?
                }
            };
            let m = &snap.metrics;
            writeln!(
                out,
                "steps {}/{} frames {} off_task_frames {} commands {}",
                m.steps_completed, m.steps_total, m.frames_elapsed, m.off_task_frames, m.commands_issued
            )?;
        }
        Command::Eval {
            suite,
            seed,
            profiles,
            json,
            format,
        } => {
            let profiles = commands::load_profiles(profiles.as_deref())?;
            let table = commands::eval(suite, *seed, &profiles, &cfg)?;
            if let Some(path) = json {
                std::fs::write(path, table.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
            }
            match format {
                Format::Text => write!(out, "{}", table.to_text(cfg.frames_per_second))?,
                Format::Json => writeln!(out, "{}", table.to_json())?,
            }
        }
        Command::Generate {
            template,
            seed,
            profile,
            profiles,
            out: dest,
            truth,
        } => {
            let g = generate_scenario(template, *seed)?;
            let frames = match profile {
                Some(name) => {
                    let all = commands::load_profiles(profiles.as_deref())?;
                    let p = all
                        .get(name)
                        .with_context(|| format!("unknown noise profile {name:?}"))?;
                    perturb_stream(&g.frames, p, *seed)
                }
                None => g.frames.clone(),
            };
            let text = write_event_stream(&frames);
            match dest {
                Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
                None => write!(out, "{text}")?,
            }
            if let Some(path) = truth {
                let json = serde_json::to_string_pretty(&g.ground_truth)?;
                std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Serve { port, host } => {
            let manager = Arc::new(open_manager(&cli, cfg)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), *port)).await?;
                log::info!("listening on {}", listener.local_addr()?);
                axum::serve(listener, server::router(manager)).await?;
                Ok::<_, anyhow::Error>(())
            })?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
