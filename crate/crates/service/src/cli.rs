//! Command-line front end. `run` returns typed errors; the binary turns them
//! into exit code 2 and the error name.

use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use haptiforge::geometry::compute_finger_metrics;
use haptiforge::geometry::io::{load_landmarks, load_mesh};
use haptiforge::layout::export::{export_cad, CadFormat};
use haptiforge::layout::{design_layout, LayoutDesign, LayoutParams};
use haptiforge::perception::IntensitySurface;
use haptiforge::session::SessionConfig;
use haptiforge::stimulator::{build_schedule, simulate, PulsePattern, SafetyLimits};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::ServiceError;
use crate::runtime::{Mutation, RuntimeConfig, RuntimeHandle};

/// Environment variable that can lower, never raise, the amplitude cap.
pub const MAX_MA_ENV: &str = "HAPTIFORGE_MAX_MA";

#[derive(Debug, Parser)]
#[command(name = "haptiforge", version, about = "Electro-haptic layout design, stimulator simulation and device service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design an electrode layout from hand landmarks.
    Design(DesignArgs),
    /// Schedule and simulate a set of pulse patterns.
    Simulate(SimulateArgs),
    /// Psychophysics rating sessions.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Run the device service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum SessionCommand {
    /// Present trials and read ratings 1-5 from stdin, one per line.
    Run(SessionRunArgs),
}

#[derive(Debug, Args)]
pub struct LimitsArg {
    /// Safety limits JSON (max_amplitude_ma, supply_voltage_v, dead_time_us).
    #[arg(long)]
    pub limits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// 21-point landmark JSON.
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Hand mesh, JSON or OBJ-style text.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Layout parameters JSON; missing fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Patterns JSON: a list of patterns or {"patterns": [...], "dt_us": .., "csv_stride": ..}.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Simulation tick, overriding the config file.
    #[arg(long)]
    pub dt_us: Option<f64>,
    #[command(flatten)]
    pub limits: LimitsArg,
}

#[derive(Debug, Args)]
pub struct SessionRunArgs {
    /// Session config JSON; missing fields keep the study defaults.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for the session log, ratings CSV and fitted surface.
    #[arg(long)]
    pub out: PathBuf,
    /// Trial-order seed, overriding the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Project the fitted surface onto the monotone ordering.
    #[arg(long)]
    pub monotone: bool,
    #[command(flatten)]
    pub limits: LimitsArg,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 7878)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Landmarks for the layout preview; the built-in hand when absent.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Fitted intensity surface JSON; the built-in surface when absent.
    #[arg(long)]
    pub surface: Option<PathBuf>,
    /// Directory for session logs; sessions stay in memory when absent.
    #[arg(long)]
    pub session_dir: Option<PathBuf>,
    #[command(flatten)]
    pub limits: LimitsArg,
}

fn read(path: &Path) -> Result<String, ServiceError> {
    std::fs::read_to_string(path).map_err(|e| ServiceError::io(format!("reading {}", path.display()), e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), ServiceError> {
    std::fs::write(path, bytes).map_err(|e| ServiceError::io(format!("writing {}", path.display()), e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ServiceError> {
    serde_json::from_str(&read(path)?).map_err(|e| ServiceError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<(), ServiceError> {
    std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(format!("creating {}", dir.display()), e))
}

/// Limits from the file (or defaults), then lowered by the environment
/// variable if it asks for less.
pub fn resolve_limits(file: Option<&Path>, env: Option<&str>) -> Result<SafetyLimits, ServiceError> {
    let limits: SafetyLimits = match file {
        Some(p) => read_json(p)?,
        None => SafetyLimits::default(),
    };
    limits.check()?;
    let Some(raw) = env else { return Ok(limits) };
    let ma: f64 = raw.trim().parse().ok().filter(|v: &f64| v.is_finite() && *v > 0.0).ok_or_else(|| ServiceError::Config {
        path: MAX_MA_ENV.into(),
        message: format!("expected a positive number of mA, got {raw:?}"),
    })?;
    if ma > limits.amplitude_cap() {
        tracing::warn!("{MAX_MA_ENV}={ma} is above the current cap and is ignored");
    }
    Ok(limits.lowered_to(ma))
}

fn limits_from(arg: &LimitsArg) -> Result<SafetyLimits, ServiceError> {
    resolve_limits(arg.limits.as_deref(), std::env::var(MAX_MA_ENV).ok().as_deref())
}

pub fn run(cli: Cli) -> Result<(), ServiceError> {
    match cli.command {
        Command::Design(a) => design(&a, &mut std::io::stdout()),
        Command::Simulate(a) => simulate_cmd(&a, &mut std::io::stdout()),
        Command::Session(SessionCommand::Run(a)) => session_run(&a, std::io::stdin().lock(), &mut std::io::stdout()),
        Command::Serve(a) => serve(&a),
    }
}

fn load_layout(landmarks: &Path, mesh: Option<&Path>, params: &LayoutParams) -> Result<(LayoutDesign, haptiforge::geometry::LandmarkSet), ServiceError> {
    let set = load_landmarks(landmarks)?;
    let mesh = mesh.map(load_mesh).transpose()?;
    Ok((design_layout(&set, mesh.as_ref(), params)?, set))
}

pub fn design(args: &DesignArgs, out: &mut impl Write) -> Result<(), ServiceError> {
    let params: LayoutParams = match &args.config {
        Some(p) => read_json(p)?,
        None => LayoutParams::default(),
    };
    let (layout, landmarks) = load_layout(&args.landmarks, args.mesh.as_deref(), &params)?;
    let metrics = compute_finger_metrics(&landmarks);
    create_dir(&args.out)?;
    write(&args.out.join("layout.json"), export_cad(&layout, CadFormat::Json))?;
    write(&args.out.join("layout.svg"), export_cad(&layout, CadFormat::Svg))?;
    write(&args.out.join("metrics.json"), serde_json::to_string_pretty(&metrics).expect("metrics serialize"))?;
    let _ = writeln!(
        out,
        "{} electrodes, {} traces, {} crossings -> {}",
        layout.sites.len(),
        layout.routes.len(),
        layout.route_crossings(),
        args.out.display()
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SimulateFile {
    Patterns(Vec<PulsePattern>),
    Full {
        patterns: Vec<PulsePattern>,
        dt_us: Option<f64>,
        csv_stride: Option<usize>,
    },
}

pub fn simulate_cmd(args: &SimulateArgs, out: &mut impl Write) -> Result<(), ServiceError> {
    let limits = limits_from(&args.limits)?;
    let (patterns, dt_file, stride) = match read_json::<SimulateFile>(&args.config)? {
        SimulateFile::Patterns(p) => (p, None, None),
        SimulateFile::Full { patterns, dt_us, csv_stride } => (patterns, dt_us, csv_stride),
    };
    let dt_us = args.dt_us.or(dt_file).unwrap_or(1.0);
    let stride = stride.unwrap_or(1).max(1);
    let schedule = build_schedule(&patterns, &limits)?;
    let trace = simulate(&schedule.events, &patterns, &limits, dt_us)?;
    create_dir(&args.out)?;
    let mut csv = Vec::new();
    trace
        .write_csv(&mut csv, stride)
        .map_err(|e| ServiceError::io("rendering waveform CSV", std::io::Error::other(e.to_string())))?;
    write(&args.out.join("waveform.csv"), csv)?;
    write(&args.out.join("waveform.svg"), trace.to_svg())?;
    write(&args.out.join("schedule.json"), serde_json::to_string_pretty(&schedule).expect("schedule serializes"))?;
    for p in &patterns {
        let _ = writeln!(
            out,
            "channel {:>2}: {:>7.2} Hz, duty {:.4} requested, {:.4} realized, {} pulses",
            p.channel,
            p.frequency_hz,
            p.duty,
            schedule.realized_duty(p),
            schedule.pulse_count(p.channel)
        );
    }
    Ok(())
}

/// Outcome of `session run`: how far the participant got.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRunOutcome {
    pub cursor: usize,
    pub total: usize,
    pub log: PathBuf,
}

/// Runs trials through a local runtime, one rating per input line. A line
/// `q` or the end of input pauses; running again resumes from the log.
pub fn session_run(args: &SessionRunArgs, input: impl BufRead, out: &mut impl Write) -> Result<(), ServiceError> {
    session_run_outcome(args, input, out).map(|_| ())
}

pub fn session_run_outcome(args: &SessionRunArgs, mut input: impl BufRead, out: &mut impl Write) -> Result<SessionRunOutcome, ServiceError> {
    let mut config: SessionConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let limits = limits_from(&args.limits)?;
    create_dir(&args.out)?;
    let rt = tokio::runtime::Builder::new_current_thread()
        .build()
        .map_err(|e| ServiceError::io("starting runtime", e))?;
    rt.block_on(async {
        let handle = RuntimeHandle::spawn(RuntimeConfig {
            session_dir: Some(args.out.clone()),
            ..RuntimeConfig::new(limits)
        })?;
        let state = handle.apply(Mutation::SessionStart(config)).await?;
        let session = state.session.clone().expect("session just started");
        let log = PathBuf::from(session.log.clone().unwrap_or_default());
        if session.cursor > 0 {
            let _ = writeln!(out, "resuming {} at trial {}/{}", session.participant_id, session.cursor + 1, session.total);
        }
        let mut line = String::new();
        loop {
            let state = handle.snapshot();
            let session = state.session.as_ref().expect("session stays open");
            let Some(prompt) = session.prompt else { break };
            handle.apply(Mutation::SessionAdvance).await?;
            let _ = write!(
                out,
                "trial {}/{}: {} Hz at {}% duty, rating 1-5 (q to pause): ",
                prompt.index + 1,
                prompt.total,
                prompt.frequency_hz,
                (prompt.duty * 100.0 * 1e9).round() / 1e9
            );
            let _ = out.flush();
            let rating = loop {
                line.clear();
                let n = input.read_line(&mut line).map_err(|e| ServiceError::io("reading ratings", e))?;
                let text = line.trim();
                if n == 0 || text == "q" {
                    break None;
                }
                match text.parse::<u8>() {
                    Ok(r) if (1..=5).contains(&r) => break Some(r),
                    _ => {
                        let _ = write!(out, "\n{text:?} is not a rating 1-5, try again: ");
                        let _ = out.flush();
                    }
                }
            };
            let _ = writeln!(out);
            match rating {
                Some(rating) => {
                    handle
                        .apply(Mutation::SessionRate {
                            trial: prompt.index,
                            rating,
                        })
                        .await?;
                }
                None => {
                    handle.apply(Mutation::StopAll).await?;
                    let _ = writeln!(out, "paused at trial {}/{}; run again to resume", prompt.index + 1, prompt.total);
                    return Ok(SessionRunOutcome {
                        cursor: prompt.index,
                        total: prompt.total,
                        log,
                    });
                }
            }
        }
        let export = handle.export_session(args.monotone).await?;
        write(&args.out.join("ratings.csv"), &export.csv)?;
        if let Some(surface) = &export.surface {
            write(&args.out.join("surface.json"), surface.to_json())?;
        }
        let _ = writeln!(out, "session complete: {} ratings -> {}", export.records, args.out.display());
        Ok(SessionRunOutcome {
            cursor: export.records,
            total: export.records,
            log,
        })
    })
}

/// Runtime config for `serve`: the layout comes from the given landmarks or
/// the built-in hand.
pub fn serve_config(args: &ServeArgs) -> Result<RuntimeConfig, ServiceError> {
    let limits = limits_from(&args.limits)?;
    let layout = match &args.landmarks {
        Some(path) => load_layout(path, args.mesh.as_deref(), &LayoutParams::default())?.0,
        None => design_layout(&haptiforge::synthetic::canonical_hand(), None, &LayoutParams::default())?,
    };
    let mut config = RuntimeConfig::new(limits);
    config.layout = Some(layout);
    config.session_dir = args.session_dir.clone();
    if let Some(path) = &args.surface {
        config.surface = IntensitySurface::from_json(&read(path)?)?;
        config.surface_synthetic = false;
    }
    if let Some(dir) = &config.session_dir {
        create_dir(dir)?;
    }
    Ok(config)
}

fn serve(args: &ServeArgs) -> Result<(), ServiceError> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let config = serve_config(args)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| ServiceError::io("starting runtime", e))?;
    rt.block_on(async {
        let handle = RuntimeHandle::spawn(config)?;
        let addr = SocketAddr::new(args.host, args.port);
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| ServiceError::io(format!("binding {addr}"), e))?;
        let local = listener.local_addr().map_err(|e| ServiceError::io("reading bound address", e))?;
        println!("listening on http://{local}");
        tracing::info!("serving on {local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        crate::server::serve(listener, handle, shutdown)
            .await
            .map_err(|e| ServiceError::io("serving", e))
    })
}
