use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use selfevo_cli::{
    load_catalogue, load_scenario, router, spawn_ticker, write_artifacts, AppState, OutputPaths,
};
use selfevo_core::events::verify;
use selfevo_core::warehouse::CatalogueEntry;
use selfevo_core::Runner;

#[derive(Parser)]
#[command(
    name = "selfevo",
    version,
    about = "ODD-based self-adaptation and self-evolution runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Hold enactments until an operator approves them.
    #[arg(long)]
    approval_gate: bool,
    /// Write the event log (JSONL) here.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write telemetry (CSV) here.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    /// Write the final ODD model (JSON) here.
    #[arg(long)]
    odd_out: Option<PathBuf>,
}

impl ScenarioArgs {
    fn outputs(&self) -> OutputPaths {
        OutputPaths {
            log: self.log.clone(),
            telemetry: self.telemetry.clone(),
            odd: self.odd_out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion.
    Run(ScenarioArgs),
    /// Check an event log against an expectation document.
    Verify {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        expect: PathBuf,
    },
    /// Run a scenario behind the HTTP guidance service.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Wall-clock milliseconds per tick; ticks run back to back when omitted.
        #[arg(long, value_name = "MS_PER_TICK")]
        realtime: Option<u64>,
        /// Start paused.
        #[arg(long)]
        paused: bool,
        /// Enact without operator approval (the gate is on by default here).
        #[arg(long, conflicts_with = "approval_gate")]
        no_approval_gate: bool,
    },
    /// Inspect or extend a catalogue file.
    #[command(subcommand)]
    Warehouse(WarehouseCommand),
}

#[derive(Subcommand)]
enum WarehouseCommand {
    /// Print the catalogue entries as JSON.
    List {
        /// Catalogue file, or `canonical` for the built-in one.
        #[arg(long, default_value = "canonical")]
        catalogue: String,
    },
    /// Add an entry to a catalogue file, creating the file if needed.
    Publish {
        #[arg(long)]
        catalogue: PathBuf,
        /// Entry JSON; its checksum is recomputed from the payload when absent.
        #[arg(long)]
        entry: PathBuf,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => {
            let s = load_scenario(&args.scenario, args.seed, args.approval_gate)?;
            let mut runner = Runner::new(s)?;
            runner.run_to_end();
            write_artifacts(&runner, &args.outputs())?;
            println!(
                "{}: {} ticks, {} events, ODD v{}, final configuration {}{}",
                runner.name(),
                runner.tick(),
                runner.log().len(),
                runner.odd().version(),
                runner.knowledge().current_config(),
                if runner.knowledge().in_safe_state() {
                    " (safe state)"
                } else {
                    ""
                },
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { log, expect } => {
            let log = std::fs::read_to_string(&log)
                .with_context(|| format!("reading {}", log.display()))?;
            let expect = std::fs::read_to_string(&expect)
                .with_context(|| format!("reading {}", expect.display()))?;
            let report = verify(&log, &expect);
            for w in &report.warnings {
                println!("warning: {w}");
            }
            for f in &report.failures {
                let at = match (f.seq, f.line) {
                    (Some(s), _) => format!("seq {s}: "),
                    (None, Some(l)) => format!("line {l}: "),
                    _ => String::new(),
                };
                println!("FAIL {at}{}", f.message);
            }
            if report.passed() {
                println!("ok");
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Serve {
            scenario,
            port,
            realtime,
            paused,
            no_approval_gate,
        } => {
            let s = load_scenario(&scenario.scenario, scenario.seed, !no_approval_gate)?;
            let runner = Runner::new(s)?;
            let state = AppState::of(&runner);
            if paused {
                state.hub.pause();
            }
            let ticker = spawn_ticker(runner, Duration::from_millis(realtime.unwrap_or(0)));
            let outputs = scenario.outputs();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
            if ticker.is_finished() {
                let runner = ticker
                    .join()
                    .map_err(|_| anyhow::anyhow!("runner thread panicked"))?;
                write_artifacts(&runner, &outputs)?;
            } else if outputs.log.is_some() || outputs.telemetry.is_some() || outputs.odd.is_some()
            {
                eprintln!("scenario still running; artifacts not written");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Warehouse(WarehouseCommand::List { catalogue }) => {
            let cat = load_catalogue(&catalogue)?;
            let entries: Vec<&CatalogueEntry> = cat.entries().collect();
            println!("{}", serde_json::to_string_pretty(&entries)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Warehouse(WarehouseCommand::Publish { catalogue, entry }) => {
            let mut cat = if catalogue.exists() {
                load_catalogue(&catalogue.to_string_lossy())?
            } else {
                selfevo_core::Catalogue::new()
            };
            let text = std::fs::read_to_string(&entry)
                .with_context(|| format!("reading {}", entry.display()))?;
            let mut value: serde_json::Value = serde_json::from_str(&text)?;
            if value.get("payload_checksum").is_none() {
                let payload = value["payload"].as_str().unwrap_or_default();
                value["payload_checksum"] = selfevo_core::warehouse::checksum(payload).into();
            }
            let e: CatalogueEntry = serde_json::from_value(value).context("parsing entry")?;
            let id = format!("{} {}", e.element_id, e.version);
            if let Err(err) = cat.publish(e) {
                bail!("cannot publish {id}: {err}");
            }
            std::fs::write(&catalogue, cat.to_json())?;
            println!("published {id}; catalogue revision {}", cat.revision());
            Ok(ExitCode::SUCCESS)
        }
    }
}
