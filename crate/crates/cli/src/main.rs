mod commands;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] rdkd::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use rdkd::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                E::Config { .. } => 2,
                E::Format { .. } | E::Data { .. } | E::Io { .. } => 3,
                E::Shape(_) | E::Domain { .. } | E::NonFinite { .. } | E::Metric(_) | E::State(_) | E::Training { .. } => 4,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "rdkd", version, about = "Noise-robust distillation of speech encoders")]
struct Cli {
    /// Worker threads for the data-parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Global seed; overrides every section seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderKind {
    Teacher,
    Student,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic train and test corpora with manifests.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the teacher on frame labels and save it frozen.
    PretrainTeacher {
        #[command(flatten)]
        config: ConfigArgs,
        /// Corpus directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distil a student from a frozen teacher.
    Distill {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Teacher checkpoint from `pretrain-teacher`.
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Clean student inputs and no enhancement head.
        #[arg(long)]
        plain: bool,
    },
    /// Write a scenario test set with one sidecar per clip.
    Contaminate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Scenario tag: c, n, r or n+r.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit probes and evaluate an upstream under every scenario.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Teacher or student checkpoint.
        #[arg(long)]
        upstream: PathBuf,
        #[arg(long, value_enum, default_value = "student")]
        encoder: EncoderKind,
        /// Model name recorded in the report.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Also write speaker-separation results at 0 dB and clean.
        #[arg(long)]
        disentangle: bool,
    },
    /// Benchmark score of one upstream from a score table.
    Score {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        upstream: String,
    },
    /// Train one probe and test it under one scenario.
    Probe {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        upstream: PathBuf,
        #[arg(long, value_enum, default_value = "student")]
        encoder: EncoderKind,
        /// kws, sid, asv or se.
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "c")]
        scenario: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge robustness reports into CSV and SVG bar charts.
    Report {
        /// Robustness report JSON files.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        /// Optional ablation report to chart.
        #[arg(long)]
        ablation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the enhancement-head ablation sweep.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging() -> CliResult<()> {
    let level = match std::env::var("RD_LOG_LEVEL").as_deref() {
        Err(_) | Ok("") | Ok("info") => log::LevelFilter::Info,
        Ok("error") => log::LevelFilter::Error,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => return Err(CliError::Usage(format!("RD_LOG_LEVEL must be error, info or debug, not `{other}`"))),
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    init_logging()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Synth { config, out } => commands::synth(&config, seed, &out),
        Command::PretrainTeacher { config, data, out } => commands::pretrain_teacher(&config, seed, &data, &out),
        Command::Distill {
            config,
            data,
            teacher,
            out,
            resume,
            plain,
        } => commands::distill(&config, seed, &data, &teacher, &out, resume, plain),
        Command::Contaminate {
            config,
            data,
            scenario,
            out,
        } => commands::contaminate(&config, seed, &data, &scenario, &out),
        Command::Evaluate {
            config,
            data,
            upstream,
            encoder,
            name,
            out,
            disentangle,
        } => commands::evaluate(&config, seed, &data, &upstream, encoder, name, &out, disentangle),
        Command::Score { table, anchors, upstream } => commands::score(&table, &anchors, &upstream),
        Command::Probe {
            config,
            data,
            upstream,
            encoder,
            task,
            scenario,
            out,
        } => commands::probe(&config, seed, &data, &upstream, encoder, &task, &scenario, out.as_deref()),
        Command::Report { input, ablation, out } => commands::report(&input, ablation.as_deref(), &out),
        Command::Ablate {
            config,
            data,
            teacher,
            steps,
            out,
        } => commands::ablate(&config, seed, &data, &teacher, steps, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
