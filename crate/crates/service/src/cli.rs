//! Command-line entry points.

use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use twinner_core::ingest::load_buildings;
use twinner_core::interlocutor::{model_from_env, ChatBackend, HttpBackend, StubBackend};
use twinner_core::population::{
    allocate_households, build_households, sample_adults, write_population_csv, Allocation, MarginalSpec,
};
use twinner_core::scenario::{run_experiment, write_events_csv, ScenarioConfig, Twin};

use crate::api::{router, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "twinner",
    version,
    about = "Social digital twin of a municipality: simulate, inspect and converse"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario headless and write results JSON plus an event CSV
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's day count
        #[arg(long)]
        days: Option<u32>,
        /// Overrides the scenario's seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Event CSV path; defaults to the results path with an `.events.csv` suffix
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Serve the REST API
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Scenario to load at startup
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = LlmChoice::Stub)]
        llm: LlmChoice,
        /// Require `Authorization: Bearer <token>` on every request
        #[arg(long, env = "TWINNER_API_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
    /// Sample a synthetic population and write it as CSV
    Synth {
        #[arg(long)]
        marginals: PathBuf,
        /// Number of adults
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Allocate households to these buildings
        #[arg(long)]
        buildings: Option<PathBuf>,
        /// Also write the generated children
        #[arg(long)]
        include_children: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LlmChoice {
    Stub,
    Http,
}

pub fn backend(choice: LlmChoice) -> Result<Arc<dyn ChatBackend>> {
    Ok(match choice {
        LlmChoice::Stub => Arc::new(StubBackend),
        LlmChoice::Http => Arc::new(HttpBackend::from_env()?),
    })
}

pub fn default_events_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    out.with_file_name(format!("{stem}.events.csv"))
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            days,
            seed,
            out,
            events,
        } => run(&scenario, days, seed, &out, events.as_deref()),
        Command::Serve {
            host,
            port,
            scenario,
            llm,
            token,
        } => serve(&host, port, scenario.as_deref(), llm, token),
        Command::Synth {
            marginals,
            size,
            seed,
            out,
            buildings,
            include_children,
        } => synth(&marginals, size, seed, &out, buildings.as_deref(), include_children),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn run(scenario: &Path, days: Option<u32>, seed: Option<u64>, out: &Path, events: Option<&Path>) -> Result<()> {
    let mut config = ScenarioConfig::from_file(scenario)?;
    if let Some(d) = days {
        config.days = d;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    let result = run_experiment(&config)?;
    let mut json = serde_json::to_string_pretty(&result)?;
    json.push('\n');
    std::fs::write(out, json).with_context(|| format!("cannot write {}", out.display()))?;
    let events_path = events
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_events_path(out));
    write_events_csv(create(&events_path)?, &result.events)?;
    println!(
        "day {}: {} students, {} dropouts ({} rural of {}); wrote {} and {}",
        result.days,
        result.metrics.students,
        result.metrics.dropouts,
        result.metrics.rural.dropouts,
        result.metrics.rural.students,
        out.display(),
        events_path.display()
    );
    Ok(())
}

fn serve(host: &str, port: u16, scenario: Option<&Path>, llm: LlmChoice, token: Option<String>) -> Result<()> {
    let state = AppState::new(backend(llm)?, model_from_env(), token);
    if let Some(path) = scenario {
        let config = ScenarioConfig::from_file(path)?;
        state.install(Twin::build(&config)?);
    }
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .with_context(|| format!("bad address {host}:{port}"))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot bind {addr}"))?;
        tracing::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn synth(
    marginals: &Path,
    size: usize,
    seed: u64,
    out: &Path,
    buildings: Option<&Path>,
    include_children: bool,
) -> Result<()> {
    let spec = MarginalSpec::from_file(marginals)?;
    let adults = sample_adults(&spec, size, seed)?;
    let synthesis = build_households(&adults, &spec, seed)?;
    let allocation = match buildings {
        Some(path) => allocate_households(&synthesis.households, &load_buildings(path)?, seed)?,
        None => Allocation::new(),
    };
    let mut persons = adults;
    if include_children {
        persons.extend(synthesis.children.iter().cloned());
    }
    write_population_csv(create(out)?, &persons, &synthesis.households, &allocation)?;
    println!(
        "wrote {} persons in {} households to {}",
        persons.len(),
        synthesis.households.len(),
        out.display()
    );
    Ok(())
}
