//! `linehue` command-line front end.
//!
//! Exit codes: 0 success, 1 pipeline error, 2 usage error.

use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use linehue::cluster::Metric;
use linehue::eval::evaluate;
use linehue::hue::TemplateKind;
use linehue::ingest::{parse_timeseries, parse_trajectories, LineKind};
use linehue::pipeline::{render_options, run, Artifacts, GridSize, PipelineConfig};
use linehue::synth::{ContinuationMode, SynthParams};
use linehue_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "linehue", version, about = "Colourised line density plots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write density.png, legend.json,
    /// assignment.csv and dendrogram.json.
    Render(RenderArgs),
    /// Generate a labelled synthetic dataset.
    Synth(SynthArgs),
    /// Score an assignment CSV against ground-truth labels.
    Eval(EvalArgs),
    /// Start the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Trajectory,
    Timeseries,
}

impl From<KindArg> for LineKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Trajectory => LineKind::Trajectory,
            KindArg::Timeseries => LineKind::Timeseries,
        }
    }
}

/// Flags left unset fall back to the config file, then to built-in defaults.
#[derive(Args)]
struct RenderArgs {
    /// Input dataset (long-format trajectory CSV, wide time-series CSV or JSON).
    input: PathBuf,
    #[arg(long, value_enum, default_value = "trajectory")]
    kind: KindArg,
    /// TOML config file; explicit flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid resolution, e.g. 512x256.
    #[arg(long, value_parser = parse_grid)]
    bins: Option<GridSize>,
    #[arg(long)]
    preserve_aspect: bool,
    /// Feature extraction radius in bins.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    min_density: Option<u32>,
    /// Number of bins sampled for clustering.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Harmonic template: i, V, L, I, T, Y, X or N.
    #[arg(long)]
    template: Option<TemplateKind>,
    #[arg(long, overrides_with = "no_log_scale")]
    log_scale: bool,
    #[arg(long)]
    no_log_scale: bool,
    /// Pixels per bin.
    #[arg(long)]
    scale: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep extracted features in a sidecar file next to the input.
    #[arg(long)]
    cache: bool,
}

fn parse_grid(s: &str) -> Result<GridSize, String> {
    s.parse().map_err(|e: linehue::Error| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Illusory,
    Continuation,
    Disconnected,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Crossing,
    Touching,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(value_enum)]
    kind: SynthKind,
    /// Continuation variant.
    #[arg(long, value_enum, default_value = "crossing")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lines per pattern (illusory: total pattern lines).
    #[arg(long)]
    n: Option<usize>,
    /// Illusory noise lines.
    #[arg(long)]
    noise: Option<usize>,
    /// Illusory fan-out in [0, 1].
    #[arg(long)]
    fanout: Option<f64>,
    /// Disconnected dense-band length in [0, 1].
    #[arg(long)]
    separation: Option<f64>,
    /// Dataset CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label CSV path; defaults to `<out stem>.labels.csv` next to `--out`.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Assignment CSV written by `render`.
    assignment: PathBuf,
    /// Label CSV written by `synth`.
    labels: PathBuf,
    /// Labels left out of the score (e.g. 2 for illusory noise lines).
    #[arg(long)]
    exclude: Vec<String>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Defaults to $PORT, else 8080.
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value_t = 256)]
    max_body_mb: usize,
    #[arg(long, default_value_t = 30)]
    idle_minutes: u64,
}

enum Failure {
    Usage(String),
    Pipeline(String),
}

impl From<linehue::Error> for Failure {
    fn from(e: linehue::Error) -> Self {
        match e {
            linehue::Error::InvalidParameter(_) | linehue::Error::UnknownTemplate(_) => Failure::Usage(e.to_string()),
            e => Failure::Pipeline(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Pipeline(format!("{}: {e}", path.display()))
}

fn build_config(args: &RenderArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            PipelineConfig::from_toml(&text).map_err(|e| Failure::Usage(e.to_string()))?
        }
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                cfg.$field = v;
            }
        };
    }
    if args.bins.is_some() {
        cfg.bins = args.bins;
    }
    if args.preserve_aspect {
        cfg.preserve_aspect = true;
    }
    set!(radius, args.radius);
    set!(min_density, args.min_density);
    set!(max_samples, args.sample);
    set!(metric, args.metric);
    set!(k, args.k);
    set!(seed, args.seed);
    set!(scale, args.scale);
    if args.template.is_some() {
        cfg.template = args.template;
    }
    if args.log_scale {
        cfg.log_scale = Some(true);
    } else if args.no_log_scale {
        cfg.log_scale = Some(false);
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.cache {
        cfg.cache = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_render(args: RenderArgs) -> Result<(), Failure> {
    let cfg = build_config(&args)?;
    let text = std::fs::read_to_string(&args.input).map_err(|e| io_failure(&args.input, e))?;
    let parsed = match LineKind::from(args.kind) {
        LineKind::Trajectory => parse_trajectories(&text),
        LineKind::Timeseries => parse_timeseries(&text),
    }
    .map_err(|e| Failure::Pipeline(format!("{}: {e}", args.input.display())))?;
    let cache = cfg.cache.then(|| {
        let mut name = args.input.file_name().unwrap_or_default().to_os_string();
        name.push(".features");
        args.input.with_file_name(name)
    });
    let out = run(&parsed.lineset, &cfg, cache.as_deref())?;
    let opts = render_options(&cfg, &out.view);
    let artifacts = Artifacts::build(&out.prepared, &out.derived, &out.view, &opts, Some(&parsed.original_ids))?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let written = artifacts.write_to(&dir)?;
    let (per_cluster, none) = out.derived.lines.counts();
    eprintln!(
        "{} lines, {} clusters (lines per cluster {:?}, unassigned {none}), stress {:.4}",
        parsed.lineset.len(),
        out.derived.clustering.k,
        per_cluster,
        out.derived.hues.stress
    );
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let params = match args.kind {
        SynthKind::Illusory => {
            let SynthParams::Illusory { n_pattern, n_noise, fanout } = SynthParams::illusory() else { unreachable!() };
            SynthParams::Illusory {
                n_pattern: args.n.unwrap_or(n_pattern),
                n_noise: args.noise.unwrap_or(n_noise),
                fanout: args.fanout.unwrap_or(fanout),
            }
        }
        SynthKind::Continuation => {
            let mode = match args.mode {
                ModeArg::Crossing => ContinuationMode::Crossing,
                ModeArg::Touching => ContinuationMode::Touching,
            };
            let SynthParams::Continuation { n_per_trend, .. } = SynthParams::continuation(mode) else { unreachable!() };
            SynthParams::Continuation { n_per_trend: args.n.unwrap_or(n_per_trend), mode }
        }
        SynthKind::Disconnected => {
            let SynthParams::Disconnected { n_per_trend, separation } = SynthParams::disconnected() else {
                unreachable!()
            };
            SynthParams::Disconnected {
                n_per_trend: args.n.unwrap_or(n_per_trend),
                separation: args.separation.unwrap_or(separation),
            }
        }
    };
    let data = params.generate(args.seed)?;
    let labels_path = args.labels.clone().or_else(|| {
        args.out.as_ref().map(|out| {
            let stem = out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.with_file_name(format!("{stem}.labels.csv"))
        })
    });
    match &args.out {
        Some(path) => std::fs::write(path, data.to_csv()).map_err(|e| io_failure(path, e))?,
        None => std::io::stdout().write_all(data.to_csv().as_bytes()).map_err(|e| Failure::Pipeline(e.to_string()))?,
    }
    if let Some(path) = labels_path {
        if let Err(e) = std::fs::write(&path, data.labels_csv()) {
            if let Some(out) = &args.out {
                let _ = std::fs::remove_file(out);
            }
            return Err(io_failure(&path, e));
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let read = |p: &PathBuf| std::fs::read_to_string(p).map_err(|e| io_failure(p, e));
    let (assignment, labels) = (read(&args.assignment)?, read(&args.labels)?);
    let exclude: Vec<&str> = args.exclude.iter().map(String::as_str).collect();
    let report = evaluate(&assignment, &labels, &exclude)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n").map_err(|e| io_failure(path, e))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let port = args.port.unwrap_or_else(|| linehue_service::port_from_env(8080));
    let config = ServiceConfig {
        max_body_bytes: args.max_body_mb * 1024 * 1024,
        idle_timeout: Duration::from_secs(args.idle_minutes * 60),
        ..Default::default()
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Pipeline(e.to_string()))?;
    runtime
        .block_on(linehue_service::serve(SocketAddr::new(args.host, port), config))
        .map_err(|e| Failure::Pipeline(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
