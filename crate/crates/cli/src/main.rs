mod analysis;
mod eval;
mod layout;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use stemeval::audio::{extract_fragment, load_wav, make_anchor, save_wav, SampleFormat, StemKind};
use stemeval::correlation::{TauMode, TauOptions, DEFAULT_GRID_STEP};
use stemeval::energy::{BssConfig, Framing};
use stemeval::fad::{fad_score, COVARIANCE_DIVISOR, COVARIANCE_RIDGE};
use stemeval::ratings::{ParseMode, QcThresholds};

#[derive(Parser)]
#[command(name = "stemeval", version, about = "Evaluate music source separation against references and listeners")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Abort on the first malformed CSV row instead of skipping it.
    #[arg(long, global = true)]
    strict: bool,
    /// Accepted for reproducible invocations; every computation is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score system estimates against references and write a metric-score CSV.
    Eval(EvalArgs),
    /// Quality-check ratings, correlate with metric scores, write tables.
    Analyze(AnalyzeArgs),
    /// Sweep the reweighted SI-SDR weight and correlate each point.
    Sweep(SweepArgs),
    /// Fréchet audio distance between two EMB1 files.
    Fad { reference: PathBuf, estimate: PathBuf },
    /// Run the listener quality checks and filter.
    RatingsQc(RatingsQcArgs),
    /// Write the low-pass anchor of a stem.
    Anchor {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        stem: StemKind,
        #[arg(long, value_enum, default_value_t = WavFormat::Float32)]
        format: WavFormat,
    },
    /// Cut a fragment out of a WAV file.
    Fragment {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        start: f64,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, value_enum, default_value_t = WavFormat::Float32)]
        format: WavFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WavFormat {
    Pcm16,
    Pcm24,
    Pcm32,
    Float32,
}

impl From<WavFormat> for SampleFormat {
    fn from(f: WavFormat) -> Self {
        match f {
            WavFormat::Pcm16 => SampleFormat::Int16,
            WavFormat::Pcm24 => SampleFormat::Int24,
            WavFormat::Pcm32 => SampleFormat::Int32,
            WavFormat::Float32 => SampleFormat::Float32,
        }
    }
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Directory of tracks laid out as track/{references,systems,embeddings}.
    #[arg(long, required_unless_present = "manifest")]
    root: Option<PathBuf>,
    /// JSON manifest listing files explicitly; overrides the directory layout.
    #[arg(long, conflicts_with = "root")]
    manifest: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct BssArgs {
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    #[arg(long, default_value_t = 1.0)]
    hop: f64,
    #[arg(long, default_value_t = 512)]
    filter_len: usize,
    /// One decomposition over the whole track instead of framewise medians.
    #[arg(long)]
    whole_track: bool,
}

impl BssArgs {
    fn config(&self) -> BssConfig {
        let framing = if self.whole_track {
            Framing::WholeTrack
        } else {
            Framing::Windowed { window_s: self.window, hop_s: self.hop }
        };
        BssConfig { framing, filter_len: self.filter_len }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated metric names, e.g. SDR,SI-SAR,RW-SISDR(0.5),FAD-vggish.
    #[arg(long, value_delimiter = ',', default_value = "SDR,ISR,SIR,SAR,SI-SDR,SI-SIR,SI-SAR,SD-SDR")]
    metrics: Vec<String>,
    #[command(flatten)]
    bss: BssArgs,
    /// Output CSV (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct QcArgs {
    /// Pages with more failed checks than this are dropped.
    #[arg(long, default_value_t = 2)]
    max_violations: u8,
    #[arg(long, default_value_t = 10.0)]
    min_ref_anchor_gap: f64,
    #[arg(long, default_value_t = 90.0)]
    min_reference_score: f64,
    #[arg(long, default_value_t = 20.0)]
    min_user_stddev: f64,
    #[arg(long, default_value_t = 20.0)]
    min_page_time: f64,
    #[arg(long, default_value_t = 213.0)]
    max_page_time: f64,
}

impl QcArgs {
    fn thresholds(&self) -> anyhow::Result<QcThresholds> {
        if self.max_violations > 4 {
            anyhow::bail!(cli_error(format!("--max-violations {} exceeds 4", self.max_violations)));
        }
        if self.min_page_time > self.max_page_time {
            anyhow::bail!(cli_error("--min-page-time exceeds --max-page-time".into()));
        }
        Ok(QcThresholds {
            min_ref_anchor_gap: self.min_ref_anchor_gap,
            min_reference_score: self.min_reference_score,
            min_user_stddev: self.min_user_stddev,
            min_page_time_s: self.min_page_time,
            max_page_time_s: self.max_page_time,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TauArg {
    B,
    A,
}

#[derive(Args, Clone)]
struct TauArgs {
    /// Kendall variant: b (tie-corrected) or a.
    #[arg(long, value_enum, default_value_t = TauArg::B)]
    tau: TauArg,
    /// Rank the hidden reference and anchor along with the systems.
    #[arg(long)]
    include_hidden: bool,
}

impl TauArgs {
    fn options(&self) -> TauOptions {
        TauOptions {
            mode: match self.tau {
                TauArg::B => TauMode::B,
                TauArg::A => TauMode::A,
            },
            include_hidden: self.include_hidden,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    /// Metrics to correlate (default: every metric in the score file).
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    #[command(flatten)]
    qc: QcArgs,
    /// Also emit a table computed from pages with no failed checks.
    #[arg(long)]
    strict_qc: bool,
    #[command(flatten)]
    tau: TauArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    grid_step: f64,
    #[command(flatten)]
    qc: QcArgs,
    #[command(flatten)]
    tau: TauArgs,
    /// Output CSV (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RatingsQcArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[command(flatten)]
    qc: QcArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Input problems found by the front end itself.
#[derive(Debug)]
pub enum CliError {
    MissingFiles(Vec<String>),
    Invalid(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::MissingFiles(m) => write!(f, "{} required file(s) missing: {}", m.len(), m.join(", ")),
            CliError::Invalid(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

pub fn cli_error(message: String) -> CliError {
    CliError::Invalid(message)
}

/// Writes to `path`, or stdout when absent.
pub fn write_output(path: Option<&PathBuf>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mode = if cli.strict { ParseMode::Strict } else { ParseMode::Lenient };
    match cli.command {
        Command::Eval(a) => {
            let layout = layout::load(a.input.root.as_deref(), a.input.manifest.as_deref())?;
            let metrics = eval::parse_metrics(&a.metrics)?;
            let csv = eval::run(&layout, &metrics, &a.bss.config())?;
            write_output(a.output.as_ref(), &csv)
        }
        Command::Analyze(a) => analysis::analyze(&a, mode),
        Command::Sweep(a) => analysis::sweep(&a, mode),
        Command::RatingsQc(a) => analysis::ratings_qc(&a, mode),
        Command::Fad { reference, estimate } => {
            let s = fad_score(&reference, &estimate)?;
            let out = json!({
                "distance": s.distance,
                "inverted": s.inverted,
                "covariance_ridge": COVARIANCE_RIDGE,
                "covariance_divisor": COVARIANCE_DIVISOR,
            });
            write_output(None, format!("{}\n", serde_json::to_string_pretty(&out)?).as_bytes())
        }
        Command::Anchor { input, output, stem, format } => {
            let buf = load_wav(&input)?;
            save_wav(&output, &make_anchor(&buf, stem)?, format.into())?;
            Ok(())
        }
        Command::Fragment { input, output, start, duration, format } => {
            let buf = load_wav(&input)?;
            save_wav(&output, &extract_fragment(&buf, start, duration)?, format.into())?;
            Ok(())
        }
    }
}

fn error_json(e: &anyhow::Error) -> (u8, serde_json::Value) {
    let message = format!("{e:#}");
    if let Some(core) = e.downcast_ref::<stemeval::Error>() {
        let mut v = json!({ "error": core.kind(), "message": message });
        if let stemeval::Error::Join { missing } = core {
            v["missing"] = json!(missing);
        }
        return (if core.is_numerical() { 2 } else { 1 }, v);
    }
    match e.downcast_ref::<CliError>() {
        Some(CliError::MissingFiles(m)) => (1, json!({ "error": "missing_files", "message": message, "missing": m })),
        Some(CliError::Invalid(_)) => (1, json!({ "error": "invalid_input", "message": message })),
        None => (1, json!({ "error": "input", "message": message })),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({ "error": "invalid_input", "message": e.to_string() }));
            return ExitCode::from(1);
        }
    }
    let _ = cli.seed;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, v) = error_json(&e);
            eprintln!("{v}");
            ExitCode::from(code)
        }
    }
}
