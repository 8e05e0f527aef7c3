//! `drivelab`: run, batch, replay and inspect closed-loop driving episodes.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use drivelab_core::expert::{serve_blocking, ReviewState};
use drivelab_core::harness::{
    assess_card, load_cards, parse_seeds, replay, run_batch, run_episode, EpisodeStore,
    HarnessError, PolicyKind, RunConfig, RunContext,
};
use drivelab_core::llm::{ChatBackend, RemoteBackend, ScriptedBackend};
use drivelab_core::memory::{LocalEmbedder, MemoryBank};
use drivelab_core::perception::ToolCatalog;

#[derive(Parser)]
#[command(
    name = "drivelab",
    version,
    about = "Closed-loop harness for a language-model highway driving agent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        policy: Option<PolicyKind>,
        /// Append the episode to this file as it runs.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Run many seeds and report metrics.
    Batch {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `1..100` (inclusive), `1..=100` or `1,2,5`; overrides the config's seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        policy: Option<PolicyKind>,
        /// Metrics file (JSON lines).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record every episode into this directory.
        #[arg(long)]
        episodes: Option<PathBuf>,
    },
    /// Assess scenario cards for hazards.
    Assess {
        #[arg(long)]
        cards: PathBuf,
        /// Memory bank to retrieve past experience from.
        #[arg(long)]
        memory: Option<PathBuf>,
        /// Scripted answers; defaults to `script.toml` in the cards directory,
        /// else the remote provider.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        min_similarity: f64,
        /// Print each built prompt.
        #[arg(long)]
        show_prompt: bool,
    },
    /// Re-simulate a recorded episode and verify every snapshot.
    Replay { episode: PathBuf },
    /// Serve recorded episodes and accept expert feedback over HTTP.
    Serve {
        #[arg(long, default_value_t = 8710)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        memory: PathBuf,
        /// Scripted reflection answers instead of the remote provider.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Print the perception tool catalog.
    Tools,
    /// Inspect or seed a memory bank.
    Memory {
        #[command(subcommand)]
        action: MemoryCommand,
    },
}

#[derive(Subcommand)]
enum MemoryCommand {
    List {
        #[arg(long)]
        bank: PathBuf,
    },
    Add {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        summary: String,
        #[arg(long)]
        decision: String,
        #[arg(long, default_value = "")]
        reflection: String,
    },
}

fn load_config(path: Option<&Path>, policy: Option<PolicyKind>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(p) = policy {
        cfg.policy = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scripted(path: &Path) -> Result<ScriptedBackend> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ScriptedBackend::from_toml(&text)?)
}

fn open_bank(path: &Path) -> Result<MemoryBank> {
    MemoryBank::open(path, Arc::new(LocalEmbedder)).with_context(|| format!("opening {}", path.display()))
}

fn cmd_run(
    config: Option<PathBuf>,
    seed: u64,
    policy: Option<PolicyKind>,
    record: Option<PathBuf>,
) -> Result<ExitCode> {
    let cfg = load_config(config.as_deref(), policy)?;
    let ctx = RunContext::from_config(&cfg)?;
    let rec = run_episode(&cfg, seed, &ctx, record.as_deref())?;
    let o = rec
        .outcome
        .as_ref()
        .expect("finished episode has an outcome");
    println!(
        "{}: {}, {} steps, mean speed {:.2} m/s, {} lane changes",
        rec.id(),
        o.outcome.name(),
        o.steps,
        o.mean_speed,
        o.lane_changes
    );
    if let Some(e) = &o.error {
        println!("error: {e}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_batch(
    config: Option<PathBuf>,
    seeds: Option<String>,
    jobs: usize,
    policy: Option<PolicyKind>,
    out: Option<PathBuf>,
    episodes: Option<PathBuf>,
) -> Result<ExitCode> {
    let cfg = load_config(config.as_deref(), policy)?;
    let seeds = match seeds {
        Some(s) => parse_seeds(&s).map_err(HarnessError::Usage)?,
        None => cfg.seeds.clone(),
    };
    let ctx = RunContext::from_config(&cfg)?;
    let metrics = run_batch(&cfg, &seeds, jobs, &ctx, episodes.as_deref())?;
    println!("{}", metrics.table());
    if let Some(out) = out {
        metrics.write_jsonl(&out)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_assess(
    cards: PathBuf,
    memory: Option<PathBuf>,
    script: Option<PathBuf>,
    min_similarity: f64,
    show_prompt: bool,
) -> Result<ExitCode> {
    let list = load_cards(&cards)?;
    if list.is_empty() {
        bail!("no cards found in {}", cards.display());
    }
    let default_script = cards.join("script.toml");
    let backend: Box<dyn ChatBackend> = match script {
        Some(p) => Box::new(scripted(&p)?),
        None if default_script.is_file() => Box::new(scripted(&default_script)?),
        None => Box::new(RemoteBackend::from_env()?),
    };
    let bank = memory.as_deref().map(open_bank).transpose()?;
    let mut ok = true;
    for card in &list {
        match assess_card(card, backend.as_ref(), bank.as_ref(), min_similarity) {
            Ok(r) => {
                if show_prompt {
                    println!("--- prompt for {} ---\n{}\n---", r.card_id, r.prompt);
                }
                let verdict = match r.matched {
                    Some(true) => "match",
                    Some(false) => {
                        ok = false;
                        "MISMATCH"
                    }
                    None => "unlabeled",
                };
                println!(
                    "{}: hazardous={} {verdict} memories={:?}\n  advice: {}",
                    r.card_id,
                    if r.assessment.hazardous { "yes" } else { "no" },
                    r.retrieved,
                    r.assessment.advice
                );
            }
            Err(e) => {
                ok = false;
                println!("{}: ERROR {e}", card.id);
            }
        }
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_replay(path: PathBuf) -> Result<ExitCode> {
    let report = replay(&path)?;
    match &report.divergence {
        None => {
            println!(
                "{}: {} snapshots match",
                report.episode_id, report.snapshots_checked
            );
            Ok(ExitCode::SUCCESS)
        }
        Some(d) => {
            println!(
                "{}: divergence at step {}: {}",
                report.episode_id, d.step, d.detail
            );
            Ok(ExitCode::FAILURE)
        }
    }
}

fn cmd_serve(
    port: u16,
    host: String,
    episodes: PathBuf,
    memory: PathBuf,
    script: Option<PathBuf>,
) -> Result<ExitCode> {
    let backend: Arc<dyn ChatBackend> = match script {
        Some(p) => Arc::new(scripted(&p)?),
        None => match RemoteBackend::from_env() {
            Ok(b) => Arc::new(b),
            Err(e) => {
                eprintln!(
                    "warning: {e}; feedback ingestion will fail until a backend is configured"
                );
                Arc::new(ScriptedBackend::default())
            }
        },
    };
    let state = Arc::new(ReviewState {
        store: EpisodeStore::new(episodes),
        bank: Arc::new(open_bank(&memory)?),
        backend,
    });
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .context("bad --host/--port")?;
    serve_blocking(addr, state)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_memory(action: MemoryCommand) -> Result<ExitCode> {
    match action {
        MemoryCommand::List { bank } => {
            for e in open_bank(&bank)?.snapshot().iter() {
                println!("{}: {} -> {}", e.id, e.scenario_summary, e.proper_decision);
            }
        }
        MemoryCommand::Add {
            bank,
            summary,
            decision,
            reflection,
        } => {
            let e = open_bank(&bank)?.insert_manual(&summary, &decision, &reflection)?;
            println!("added {}", e.id);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            policy,
            record,
        } => cmd_run(config, seed, policy, record),
        Command::Batch {
            config,
            seeds,
            jobs,
            policy,
            out,
            episodes,
        } => cmd_batch(config, seeds, jobs, policy, out, episodes),
        Command::Assess {
            cards,
            memory,
            script,
            min_similarity,
            show_prompt,
        } => cmd_assess(cards, memory, script, min_similarity, show_prompt),
        Command::Replay { episode } => cmd_replay(episode),
        Command::Serve {
            port,
            host,
            episodes,
            memory,
            script,
        } => cmd_serve(port, host, episodes, memory, script),
        Command::Tools => {
            println!("{}", ToolCatalog::standard().render());
            Ok(ExitCode::SUCCESS)
        }
        Command::Memory { action } => cmd_memory(action),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<HarnessError>()
                .is_some_and(|h| matches!(h, HarnessError::Usage(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
