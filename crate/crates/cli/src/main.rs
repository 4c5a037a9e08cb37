//! `interlock`: generate, check, render and serve the soundtrack.
//!
//! Exit status: 0 success, 1 check or generation failure, 2 usage or
//! input error.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use interlock_core::compat::check_library;
use interlock_core::loopgen::{generate_library, GenError, LoopLibrary, DEFAULT_SEED};
use interlock_core::music::{Tempo, TimebaseConfig};
use interlock_core::render::{render_announcement, render_loop, write_wav_file};
use interlock_core::scheduler::{SchedulerConfig, DEFAULT_LIFETIME_MEASURES};
use interlock_core::trace::{
    event_log_path, parse_trace, render_trace, simulate_trace, write_trace, SessionRender, TraceError,
};
use interlock_core::Exec;
use interlock_service::SessionConfig;
use serde_json::json;

const MANIFEST: &str = "library.json";
const REPORT: &str = "compat_report.json";

#[derive(Parser)]
#[command(name = "interlock", version, about = "Modular interlocking soundtrack tools")]
struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// Run on one thread instead of the rayon pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the loop library: 30 WAVs plus library.json.
    Gen {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        timebase: TimebaseArgs,
        #[arg(long, default_value = "library")]
        out: PathBuf,
    },
    /// Check every loop pair at every offset.
    Check {
        /// Library directory or manifest file.
        #[arg(long, default_value = "library")]
        library: PathBuf,
        /// Report path; defaults to compat_report.json beside the manifest.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render a launch trace to WAV plus an event log.
    RenderTrace {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        measures: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        source: LibrarySource,
    },
    /// Generate seeded synthetic visitors, then render them.
    Simulate {
        /// Launches per minute.
        #[arg(long)]
        arrival_rate: f64,
        /// Seconds.
        #[arg(long)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "simulated.jsonl")]
        trace_out: PathBuf,
        #[arg(long, default_value = "simulated.wav")]
        out: PathBuf,
        /// Write the trace only.
        #[arg(long)]
        trace_only: bool,
        #[command(flatten)]
        source: LibrarySource,
    },
    /// Run the live session service until interrupted.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Args)]
struct TimebaseArgs {
    /// Session config JSON; only the timebase fields are used here.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tempo in BPM, integer or `a/b`.
    #[arg(long)]
    tempo: Option<String>,
    #[arg(long)]
    sample_rate: Option<u32>,
}

#[derive(Args)]
struct LibrarySource {
    /// Existing library directory; generated from --seed when absent.
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    library_seed: u64,
    #[command(flatten)]
    timebase: TimebaseArgs,
    #[arg(long, default_value_t = DEFAULT_LIFETIME_MEASURES)]
    lifetime: u32,
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(e: impl Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn failed(e: impl Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    workdir: PathBuf,
    exec: Exec,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }
}

fn io_err(path: &Path, e: impl Display) -> Failure {
    usage(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

impl TimebaseArgs {
    fn resolve(&self, ctx: &Ctx) -> Result<SessionConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => SessionConfig::load(&ctx.path(p)).map_err(usage)?,
            None => SessionConfig::default(),
        };
        if let Some(t) = &self.tempo {
            cfg.tempo_bpm = t.parse::<Tempo>().map_err(usage)?;
        }
        if let Some(r) = self.sample_rate {
            cfg.sample_rate_hz = r;
        }
        cfg.timebase().map_err(usage)?;
        Ok(cfg)
    }
}

fn manifest_path(ctx: &Ctx, p: &Path) -> PathBuf {
    let p = ctx.path(p);
    if p.is_dir() {
        p.join(MANIFEST)
    } else {
        p
    }
}

fn load_library(path: &Path) -> Result<LoopLibrary, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    LoopLibrary::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

impl LibrarySource {
    fn resolve(&self, ctx: &Ctx) -> Result<(LoopLibrary, SchedulerConfig), Failure> {
        let mut cfg = self.timebase.resolve(ctx)?;
        cfg.lifetime_measures = self.lifetime;
        let lib = match &self.library {
            Some(p) => {
                let lib = load_library(&manifest_path(ctx, p))?;
                cfg.tempo_bpm = lib.config.tempo_bpm();
                cfg.beats_per_measure = lib.config.beats_per_measure();
                cfg.pulses_per_beat = lib.config.pulses_per_beat();
                cfg.sample_rate_hz = lib.config.sample_rate_hz();
                lib
            }
            None => generate(self.library_seed, &cfg.timebase().map_err(usage)?, ctx.exec)?,
        };
        Ok((lib, cfg.scheduler_config().map_err(usage)?))
    }
}

fn generate(seed: u64, tb: &TimebaseConfig, exec: Exec) -> Result<LoopLibrary, Failure> {
    generate_library(seed, tb, exec).map_err(|e| match e {
        GenError::Music(m) => usage(m),
        other => failed(other),
    })
}

fn cmd_gen(ctx: &Ctx, seed: u64, timebase: &TimebaseArgs, out: &Path) -> Outcome {
    let tb = timebase.resolve(ctx)?.timebase().map_err(usage)?;
    let lib = generate(seed, &tb, ctx.exec)?;
    let dir = ctx.path(out);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let loops: Vec<_> = lib.beds.iter().chain(&lib.collages).collect();
    let rendered = ctx.exec.map(&loops, |lp| render_loop(lp, &tb));
    for (lp, pcm) in loops.iter().zip(rendered) {
        let path = dir.join(format!("{}.wav", lp.id));
        write_wav_file(&pcm.map_err(failed)?, &path).map_err(|e| io_err(&path, e))?;
    }
    let rendered = ctx.exec.map(&lib.announcements, |a| render_announcement(a, &tb));
    for (a, pcm) in lib.announcements.iter().zip(rendered) {
        let path = dir.join(format!("{}.wav", a.id));
        write_wav_file(&pcm.map_err(failed)?, &path).map_err(|e| io_err(&path, e))?;
    }
    write_file(&dir.join(MANIFEST), lib.to_json() + "\n")?;
    println!(
        "wrote {} loops, {} announcements and {} to {}",
        loops.len(),
        lib.announcements.len(),
        MANIFEST,
        dir.display()
    );
    Ok(())
}

fn cmd_check(ctx: &Ctx, library: &Path, report: Option<&Path>) -> Outcome {
    let manifest = manifest_path(ctx, library);
    let lib = load_library(&manifest)?;
    let matrix = check_library(&lib, ctx.exec);
    print!("{}", matrix.render_table());
    let report_path = match report {
        Some(p) => ctx.path(p),
        None => manifest.with_file_name(REPORT),
    };
    let json = serde_json::to_string_pretty(&matrix).map_err(failed)?;
    write_file(&report_path, json + "\n")?;
    if matrix.pass {
        Ok(())
    } else {
        let names: Vec<String> = matrix
            .failing_pairs()
            .map(|p| format!("{}/{} at offset {}", p.a, p.b, p.worst_offset))
            .collect();
        Err(failed(format!("incompatible pairs: {}", names.join(", "))))
    }
}

fn summarize(session: &SessionRender, out: &Path, seconds: f64) -> Outcome {
    let accepted = session.outcomes.iter().filter(|o| o.is_ok()).count();
    let summary = json!({
        "measures": session.measures,
        "frames": session.mix.pcm.frames(),
        "sample_rate_hz": session.mix.pcm.sample_rate_hz(),
        "clipped_samples": session.mix.clipped_samples,
        "events": session.events.len(),
        "launches_accepted": accepted,
        "launches_rejected": session.outcomes.len() - accepted,
    });
    write_file(&out.with_extension("summary.json"), summary.to_string() + "\n")?;
    println!(
        "{}: {} measures, {} frames, {} events, {} accepted / {} rejected, {} clipped samples ({seconds:.1} s)",
        out.display(),
        session.measures,
        session.mix.pcm.frames(),
        session.events.len(),
        accepted,
        session.outcomes.len() - accepted,
        session.mix.clipped_samples,
    );
    Ok(())
}

fn render_to(
    ctx: &Ctx,
    records: &[interlock_core::trace::TraceRecord],
    measures: u64,
    out: &Path,
    source: &LibrarySource,
) -> Outcome {
    let started = Instant::now();
    let (lib, sched) = source.resolve(ctx)?;
    let session = render_trace(records, &lib, &sched, measures, ctx.exec).map_err(|e| match e {
        TraceError::Parse(p) => usage(p),
        other => failed(other),
    })?;
    let out = ctx.path(out);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write_wav_file(&session.mix.pcm, &out).map_err(|e| io_err(&out, e))?;
    let log = interlock_core::scheduler::write_event_log(&session.events);
    write_file(&event_log_path(&out), log)?;
    summarize(&session, &out, started.elapsed().as_secs_f64())
}

fn cmd_render_trace(ctx: &Ctx, trace: &Path, measures: u64, out: &Path, source: &LibrarySource) -> Outcome {
    let path = ctx.path(trace);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let records = parse_trace(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    render_to(ctx, &records, measures, out, source)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    ctx: &Ctx,
    rate: f64,
    duration: f64,
    seed: u64,
    trace_out: &Path,
    out: &Path,
    trace_only: bool,
    source: &LibrarySource,
) -> Outcome {
    if !(rate >= 0.0 && rate.is_finite()) || !(duration > 0.0 && duration.is_finite()) {
        return Err(usage("--arrival-rate must be >= 0 and --duration > 0"));
    }
    let records = simulate_trace(rate, duration, seed);
    write_file(&ctx.path(trace_out), write_trace(&records))?;
    println!("{}: {} launches", ctx.path(trace_out).display(), records.len());
    if trace_only {
        return Ok(());
    }
    let tb = source.timebase.resolve(ctx)?.timebase().map_err(usage)?;
    let measures = (duration / tb.measure_seconds()).ceil() as u64;
    render_to(ctx, &records, measures, out, source)
}

fn cmd_serve(ctx: &Ctx, config: Option<&Path>, port: Option<u16>) -> Outcome {
    let mut cfg = match config {
        Some(p) => SessionConfig::load(&ctx.path(p)).map_err(usage)?,
        None => SessionConfig::default(),
    };
    cfg = cfg.with_env(std::env::vars()).map_err(usage)?;
    if let Some(p) = port {
        cfg.port = p;
    }
    for p in [&mut cfg.log_path, &mut cfg.library_path].into_iter().flatten() {
        *p = ctx.path(p);
    }
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let rt = tokio::runtime::Runtime::new().map_err(failed)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", cfg.port))
            .await
            .map_err(|e| usage(format!("port {}: {e}", cfg.port)))?;
        let handle = interlock_service::start(cfg).map_err(usage)?;
        interlock_service::serve(handle, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(failed)
    })
}

fn run(cli: Cli) -> Outcome {
    let ctx = Ctx {
        workdir: cli.workdir,
        exec: if cli.sequential { Exec::Sequential } else { Exec::default() },
    };
    match &cli.command {
        Command::Gen { seed, timebase, out } => cmd_gen(&ctx, *seed, timebase, out),
        Command::Check { library, report } => cmd_check(&ctx, library, report.as_deref()),
        Command::RenderTrace {
            trace,
            measures,
            out,
            source,
        } => cmd_render_trace(&ctx, trace, *measures, out, source),
        Command::Simulate {
            arrival_rate,
            duration,
            seed,
            trace_out,
            out,
            trace_only,
            source,
        } => cmd_simulate(&ctx, *arrival_rate, *duration, *seed, trace_out, out, *trace_only, source),
        Command::Serve { config, port } => cmd_serve(&ctx, config.as_deref(), *port),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
