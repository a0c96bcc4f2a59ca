use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;
use vinesim::check::run_checks;
use vinesim::config::{resolve_course, Defaults};
use vinesim::server::{ServeOptions, Server};
use vinesim_core::scenario::{builtin, builtin_names, score_run, RunRecord};
use vinesim_core::session::{read_log, replay, resimulate, ParsedLog, Session, SessionConfig};

const DEFAULT_PORT: u16 = 8765;

#[derive(Debug, Parser)]
#[command(name = "vinesim", version, about = "Vine robot teleoperation simulator")]
struct Cli {
    /// TOML file with defaults for `serve`.
    #[arg(long, env = "VINESIM_CONFIG", global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a live session and accept WebSocket clients.
    Serve {
        /// Course file, or the name of a built-in course.
        #[arg(long)]
        course: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        tick_hz: Option<f64>,
        /// Rate of state messages to clients.
        #[arg(long)]
        snapshot_hz: Option<f64>,
        /// Start site; defaults to the course's first.
        #[arg(long)]
        site: Option<String>,
        /// Address to listen on.
        #[arg(long)]
        bind: Option<String>,
        /// Write the run log here.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Re-run a log on the course embedded in its header.
    Replay {
        log: PathBuf,
        /// Fail at the first tick whose state hash differs from the log.
        #[arg(long)]
        verify: bool,
    },
    /// Score a log against a course and print the report as JSON.
    Score {
        log: PathBuf,
        #[arg(long)]
        course: String,
    },
    /// Validate the built-in courses and play the built-in scripts.
    Check,
    /// List the built-in courses.
    Courses,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let defaults = match &cli.config {
        Some(path) => Defaults::load(path)?,
        None => Defaults::default(),
    };
    match cli.command {
        Command::Serve {
            course,
            port,
            tick_hz,
            snapshot_hz,
            site,
            bind,
            record,
        } => {
            let course = course
                .or(defaults.course.clone())
                .context("no course: pass --course or set `course` in the defaults file")?;
            let mut config = SessionConfig::with_tick_hz(tick_hz.unwrap_or(defaults.tick_hz()));
            config.site = site.or(defaults.site.clone());
            if let Some(n) = defaults.max_backbone_points {
                config.max_backbone_points = n;
            }
            let session = Session::start(Arc::new(resolve_course(&course)?), config)?;
            let log = record.or_else(|| {
                let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
                defaults.log_dir.as_ref().map(|dir| dir.join(format!("vinesim-{stamp}.ndjson")))
            });
            let options = ServeOptions {
                snapshot_hz: snapshot_hz.unwrap_or(defaults.snapshot_hz()),
                log,
            };
            let host = bind.or(defaults.bind.clone()).unwrap_or_else(|| "127.0.0.1".into());
            let port = port.or(defaults.port).unwrap_or(DEFAULT_PORT);
            serve(session, (host, port), options)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { log, verify } => replay_log(&read(&log)?, verify),
        Command::Score { log, course } => {
            let log = read(&log)?;
            let course = resolve_course(&course)?;
            let h = &log.header;
            let record = RunRecord {
                course_hash: h.course_hash.clone(),
                tick_hz: h.tick_hz,
                site: h.site.clone(),
                entries: log.entries,
                wall_duration: 0.0,
            };
            let report = score_run(&record, &course)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Check => {
            let lines = run_checks();
            let failed = lines.iter().filter(|l| !l.ok).count();
            for line in &lines {
                println!("{line}");
            }
            println!("check: {} passed, {failed} failed", lines.len() - failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Courses => {
            for name in builtin_names() {
                let course = builtin(name).expect("built-in courses load");
                let sites: Vec<&str> = course.sites.iter().map(|s| s.name.as_str()).collect();
                println!(
                    "{name}\t{} obstacles, sites: {}, hash {}",
                    course.environment.obstacles.len(),
                    sites.join(", "),
                    &course.hash()[..12]
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read(path: &PathBuf) -> Result<ParsedLog> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let log = read_log(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    if log.truncated {
        eprintln!("warning: last line of {} is incomplete and was skipped", path.display());
    }
    Ok(log)
}

fn replay_log(log: &ParsedLog, verify: bool) -> Result<ExitCode> {
    let course = Arc::new(log.header.course()?);
    let out = if verify {
        replay(course, &log.header, &log.entries)?
    } else {
        resimulate(course, &log.header, &log.entries)?
    };
    let events = out.record.events().count();
    println!(
        "{} ticks ({:.1} s at {} Hz), {events} events, final length {:.3} m, final hash {}",
        out.ticks,
        out.session.time(),
        log.header.tick_hz,
        out.session.body().total_length,
        out.final_hash
    );
    match out.first_divergence {
        None if verify => println!("verified: every state hash matches the log"),
        None => {}
        Some(tick) => {
            println!("state differs from the log from tick {tick} on");
            if verify {
                bail!("state diverged at tick {tick}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(session: Session, addr: (String, u16), options: ServeOptions) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = Server::bind(addr, session, options).await?;
        tracing::info!("listening on ws://{}", server.local_addr()?);
        server
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}
