use std::ffi::OsString;
use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use visguardian::detect::FixtureDetector;
use visguardian::oracle::{comparison_csv, comparison_table, Scenario};
use visguardian::pipeline::{
    drive, load_script, replay, DriveOptions, EncodeOnlySink, FrameSource, MemorySource, Pipeline, PipelineConfig,
    PipelineError, PngDirSource, RunReport,
};
use visguardian::policy::PolicyFile;
use visguardian::synthetic::{run_bench, BenchConfig};
use visguardian::{Mode, Occluder, PolicyStore, Taxonomy};

use crate::server::{ServeOptions, Service};

/// Overrides `--taxonomy` when set.
pub const TAXONOMY_ENV: &str = "VISGUARDIAN_TAXONOMY";

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "visguardian", version, about = "Group-based visual privacy middleware")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sanitize a PNG frame directory, optionally replaying an interaction script.
    Sanitize(SanitizeArgs),
    /// Minimal interaction cost per control technique for a scenario.
    Compare(CompareArgs),
    /// Serve the sanitized stream, policy and events over HTTP/WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct SourceArgs {
    /// Directory of numbered PNG frames.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// JSON-lines detection fixture.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Taxonomy JSON; the bundled taxonomy when omitted.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long, default_value = "VisGuardian")]
    mode: Mode,
    /// Occlude with solid gray instead of frozen patches.
    #[arg(long)]
    fallback_fill: bool,
    #[arg(long, default_value = "default")]
    app_id: String,
}

impl SourceArgs {
    fn occluder(&self) -> Occluder {
        if self.fallback_fill {
            Occluder::SolidFill
        } else {
            Occluder::FrozenPatch
        }
    }
}

#[derive(Debug, Args)]
struct SanitizeArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Output directory for sanitized frames, audit log and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Interaction script (JSON array or JSON lines; timestamps are frame indices).
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    fps_cap: Option<f64>,
    /// Uncapped throughput run with in-memory encoding; uses a synthetic
    /// 1280x720 stream with 32 boxes unless a fixture is given.
    #[arg(long)]
    bench: bool,
    #[arg(long, default_value_t = 300)]
    bench_frames: u64,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Also write the comparison as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 10.0)]
    fps_cap: f64,
    /// Frames buffered per WebSocket client before frames are dropped.
    #[arg(long, default_value_t = 8)]
    frame_buffer: usize,
    #[arg(long)]
    policy_in: Option<PathBuf>,
    #[arg(long)]
    policy_out: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: EXIT_CONFIG, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME };
        Failure { code, message: e.to_string() }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Sanitize(args) => sanitize(args),
        Command::Compare(args) => compare(args),
        Command::Serve(args) => serve(args),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn taxonomy_path(flag: Option<&Path>) -> Option<PathBuf> {
    match std::env::var_os(TAXONOMY_ENV) {
        Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
        _ => flag.map(Path::to_path_buf),
    }
}

fn load_taxonomy(flag: Option<&Path>) -> Result<Taxonomy, Failure> {
    match taxonomy_path(flag) {
        Some(path) => Taxonomy::load(&path).map_err(|e| Failure::config(format!("taxonomy {}: {e}", path.display()))),
        None => Ok(Taxonomy::bundled()),
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    value.as_deref().ok_or_else(|| Failure::config(format!("--{flag} is required")))
}

fn require_dir(path: &Path, flag: &str) -> Result<(), Failure> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::config(format!("--{flag} {}: not a directory", path.display())))
    }
}

fn require_file(path: &Path, flag: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::config(format!("--{flag} {}: no such file", path.display())))
    }
}

fn load_frames(dir: &Path) -> Result<Vec<(u64, visguardian::Frame)>, Failure> {
    let mut source = PngDirSource::open(dir)?;
    std::iter::from_fn(|| source.next_frame())
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::from)
}

fn sanitize(args: SanitizeArgs) -> Result<(), Failure> {
    if let Some(cap) = args.fps_cap {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Failure::config(format!("--fps-cap must be positive, got {cap}")));
        }
    }
    let taxonomy = Arc::new(load_taxonomy(args.source.taxonomy.as_deref())?);
    if args.bench {
        return bench(&args, taxonomy);
    }

    let frames = require(&args.source.frames, "frames")?;
    let detections = require(&args.source.detections, "detections")?;
    let out = require(&args.out, "out")?;
    require_dir(frames, "frames")?;
    require_file(detections, "detections")?;
    let script = match &args.script {
        Some(path) => {
            require_file(path, "script")?;
            load_script(path)?
        }
        None => Vec::new(),
    };

    let mut config = PipelineConfig::new(frames, detections, out);
    config.taxonomy = taxonomy_path(args.source.taxonomy.as_deref());
    config.mode = args.source.mode;
    config.app_id = args.source.app_id.clone();
    config.occluder = args.source.occluder();
    config.fps_cap = args.fps_cap;
    let report = replay(&config, &script)?;
    println!(
        "sanitized {} frames into {} ({} interactions, audit digest {})",
        report.frames_processed,
        config.out_dir.display(),
        report.interactions_applied,
        report.audit_digest
    );
    Ok(())
}

fn bench(args: &SanitizeArgs, taxonomy: Arc<Taxonomy>) -> Result<(), Failure> {
    let (report, label) = match (&args.source.frames, &args.source.detections) {
        (Some(frames), Some(detections)) => {
            require_dir(frames, "frames")?;
            require_file(detections, "detections")?;
            let detector = FixtureDetector::load(detections, &taxonomy).map_err(PipelineError::from)?;
            let frames = load_frames(frames)?;
            let count = frames.len();
            let store = PolicyStore::new(args.source.app_id.clone(), Arc::clone(&taxonomy), args.source.mode);
            let mut pipeline = Pipeline::new(Box::new(detector), store, args.source.occluder());
            let mut source = MemorySource::new(frames);
            let mut sink = EncodeOnlySink::default();
            let options = DriveOptions { fps_cap: args.fps_cap };
            let outcome = drive(&mut pipeline, &mut source, &mut sink, &[], &options, None)?;
            (outcome.report, format!("fixture, {count} frames"))
        }
        (None, None) => {
            let config = BenchConfig {
                frames: args.bench_frames,
                mode: args.source.mode,
                occluder: args.source.occluder(),
                ..BenchConfig::default()
            };
            let report = run_bench(taxonomy, &config)?;
            let label = format!("synthetic {}x{}, {} boxes", config.width, config.height, config.boxes);
            (report, label)
        }
        _ => return Err(Failure::config("--bench needs both --frames and --detections, or neither")),
    };
    print_bench(&label, &report);
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| Failure::runtime(e.to_string()))?;
        let json = serde_json::to_vec_pretty(&report).expect("serializable");
        fs::write(out.join("bench.json"), json).map_err(|e| Failure::runtime(e.to_string()))?;
    }
    Ok(())
}

fn print_bench(label: &str, report: &RunReport) {
    println!("bench: {label}");
    println!("frames processed  {}", report.frames_processed);
    println!("achieved fps      {:.1}", report.achieved_fps);
    let l = &report.latency_ms;
    for (name, s) in [
        ("detect", l.detect),
        ("policy", l.policy),
        ("sanitize", l.sanitize),
        ("encode", l.encode),
        ("total", l.total),
    ] {
        println!(
            "{name:<9} ms  min {:>7.3}  median {:>7.3}  p95 {:>7.3}  max {:>7.3}",
            s.min, s.median, s.p95, s.max
        );
    }
    println!("{}", serde_json::to_string(report).expect("serializable"));
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let taxonomy = load_taxonomy(args.taxonomy.as_deref())?;
    let text = fs::read_to_string(&args.scenario)
        .map_err(|e| Failure::config(format!("scenario {}: {e}", args.scenario.display())))?;
    let rows = Scenario::from_json(&text)
        .and_then(|s| s.evaluate(&taxonomy))
        .map_err(|e| Failure::config(e.to_string()))?;
    print!("{}", comparison_table(&rows));
    if let Some(path) = &args.csv {
        fs::write(path, comparison_csv(&rows)).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Failure> {
    if !(args.fps_cap > 0.0 && args.fps_cap.is_finite()) {
        return Err(Failure::config(format!("--fps-cap must be positive, got {}", args.fps_cap)));
    }
    let taxonomy = Arc::new(load_taxonomy(args.source.taxonomy.as_deref())?);
    let frames_dir = require(&args.source.frames, "frames")?;
    let detections = require(&args.source.detections, "detections")?;
    require_dir(frames_dir, "frames")?;
    require_file(detections, "detections")?;
    let detector = FixtureDetector::load(detections, &taxonomy).map_err(PipelineError::from)?;
    let frames = load_frames(frames_dir)?;

    let store = match &args.policy_in {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            let file: PolicyFile =
                serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            PolicyStore::from_file(Arc::clone(&taxonomy), file)
        }
        None => PolicyStore::new(args.source.app_id.clone(), Arc::clone(&taxonomy), args.source.mode),
    };

    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let options = ServeOptions {
        fps_cap: args.fps_cap,
        frame_buffer: args.frame_buffer,
        policy_out: args.policy_out.clone(),
        occluder: args.source.occluder(),
    };
    let addr = SocketAddr::new(args.bind, args.port);
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::runtime(format!("bind {addr}: {e}")))?;
        let service = Service::start(store, Box::new(detector), frames, options);
        tracing::info!(addr = %listener.local_addr().unwrap_or(addr), "serving");
        let result = axum::serve(listener, service.router())
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        tokio::task::spawn_blocking(move || service.shutdown()).await.ok();
        result.map_err(|e| Failure::runtime(e.to_string()))
    })
}
