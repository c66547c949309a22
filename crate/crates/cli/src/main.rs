mod audio;
mod corpus;
mod eval;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dialektpipe::backend::{self, BackendKind, StubOptions};
use dialektpipe::pipeline::{self, PipelineConfig, RunOptions, Stage, WORKSPACE_ENV};
use dialektpipe::Error;

#[derive(Parser)]
#[command(name = "dialektpipe", version, about = "Swiss German dialect corpus pipeline and TTS evaluation")]
struct Cli {
    /// Log more; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch the podcast catalog, classify podcasts and download episodes.
    Ingest(corpus::IngestArgs),
    /// Diarize ingested episodes into RTTM files.
    Diarize(corpus::DiarizeArgs),
    /// Cut diarized episodes into 2-15 s single-speaker segments.
    Segment(corpus::SegmentArgs),
    /// Transcribe segments and drop those without a transcript.
    Transcribe(corpus::TranscribeArgs),
    /// Train, apply and evaluate the phoneme n-gram dialect classifier.
    Did {
        #[command(subcommand)]
        command: corpus::DidCommand,
    },
    /// Per-dialect corpus statistics of a manifest.
    Stats(corpus::StatsArgs),
    /// Evaluate voice-adaptation models.
    Eval {
        #[command(subcommand)]
        command: eval::EvalCommand,
    },
    /// Run the checkpointed pipeline described by a config file.
    Pipeline(PipelineArgs),
    /// Audio utilities.
    Audio {
        #[command(subcommand)]
        command: audio::AudioCommand,
    },
    /// Serve the deterministic stub backend over stdin/stdout.
    BackendStub(StubArgs),
}

#[derive(clap::Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's workspace.
    #[arg(long, env = WORKSPACE_ENV)]
    workspace: Option<PathBuf>,
    /// Halt once this stage has completed.
    #[arg(long)]
    stop_after: Option<Stage>,
    /// Halt a backend stage after this many new requests.
    #[arg(long)]
    stop_after_requests: Option<usize>,
}

#[derive(clap::Args)]
struct StubArgs {
    #[arg(long)]
    kind: BackendKind,
    #[arg(long, value_delimiter = ',')]
    fail_ids: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    fail_rate: f64,
    #[arg(long, default_value_t = 0)]
    noise_every: usize,
    #[arg(long, default_value_t = 0)]
    embed_dim: usize,
}

fn run_pipeline(args: PipelineArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let base = args.config.parent().unwrap_or(std::path::Path::new("")).to_path_buf();
    let conf = std::env::var_os(backend::BACKEND_CONF_ENV).map(PathBuf::from);
    let cfg = PipelineConfig::parse(&text, &base, args.workspace, conf.as_deref()).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", args.config.display())),
        other => other,
    })?;
    let opts = RunOptions {
        stop_after: args.stop_after,
        stop_after_requests: args.stop_after_requests,
    };
    let out = pipeline::run_pipeline(&cfg, &opts)?;
    for s in &out.ran {
        eprintln!("ran     {s}");
    }
    for s in &out.skipped {
        eprintln!("skipped {s}");
    }
    if let Some(stats) = out.stats {
        print!("{}", stats.render_text());
    }
    Ok(())
}

fn serve_stub(args: StubArgs) -> anyhow::Result<()> {
    let opts = StubOptions {
        fail_ids: args.fail_ids,
        fail_rate: args.fail_rate,
        noise_every: args.noise_every,
        embed_dim: args.embed_dim,
        delay_ms: 0,
    };
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    backend::stub::serve(args.kind, &opts, stdin, stdout)?;
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Ingest(a) => corpus::ingest(a),
        Command::Diarize(a) => corpus::diarize(a),
        Command::Segment(a) => corpus::segment(a),
        Command::Transcribe(a) => corpus::transcribe(a),
        Command::Did { command } => corpus::did(command),
        Command::Stats(a) => corpus::stats(a),
        Command::Eval { command } => eval::run(command),
        Command::Pipeline(a) => run_pipeline(a),
        Command::Audio { command } => audio::run(command),
        Command::BackendStub(a) => serve_stub(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(Error::Halted(stage)) = e.downcast_ref::<Error>() {
                eprintln!("halted after stage {stage}; rerun to resume");
                return ExitCode::SUCCESS;
            }
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
