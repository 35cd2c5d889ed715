use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use timebin::analysis::{sweep, AnalysisConfig, CertificateRecord, PS_PER_SECOND};
use timebin::framing::{FrameConfig, MultiClickPolicy, SignConvention, DEFAULT_TAU_MZI};
use timebin::sim::{generate_streams, SimulationManifest, SourceModel};
use timebin::timetag::{
    estimate_offset, parse_stream, refine_offset, write_stream, ChannelMap, DetectionEvent,
    OffsetSearch, TimetagError,
};

const THREADS_VAR: &str = "TIMEBIN_CERTIFY_THREADS";

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Run(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<timebin::Error> for CliError {
    fn from(e: timebin::Error) -> Self {
        use timebin::Error as E;
        if e.is_config() {
            return CliError::Config(e.to_string());
        }
        match e {
            E::Timetag(
                TimetagError::MalformedHeader(_)
                | TimetagError::TruncatedRecord { .. }
                | TimetagError::NonMonotonicTimestamp { .. }
                | TimetagError::UnknownChannel(_),
            ) => CliError::Io(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Time-bin entanglement dimensionality certificates from Franson time-tag
/// streams.
#[derive(Debug, Parser)]
#[command(name = "timebin-certify", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a source and write TTAG streams, channel map and manifest.
    Simulate(SimulateArgs),
    /// Certify each time block at one bin width.
    Analyze(AnalyzeArgs),
    /// Certify each time block at several bin widths.
    Sweep(SweepArgs),
    /// Estimate the clock offset of stream B against stream A.
    Offset(OffsetArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Policy {
    Random,
    Discard,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sign {
    /// D detector is the + superposition.
    DPlus,
    DMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Weight of the maximally entangled component.
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    #[arg(long, default_value_t = 100_000.0)]
    pairs_per_s: f64,
    /// Seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Background counts per second and detector.
    #[arg(long, default_value_t = 0.0)]
    background: f64,
    /// Gaussian timing jitter per detection, picoseconds.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    loss_a: f64,
    #[arg(long, default_value_t = 0.0)]
    loss_b: f64,
    /// Added to every B timestamp, picoseconds.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    clock_offset: i64,
    #[arg(long, default_value_t = DEFAULT_TAU_MZI)]
    tau_mzi: u64,
    /// Bin width the data is meant for; only checked against --tau-mzi.
    #[arg(long)]
    delta_t: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    input_a: PathBuf,
    #[arg(long)]
    input_b: PathBuf,
    /// Channel map JSON; the standard eight-channel layout if omitted.
    #[arg(long)]
    channel_map: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// Offset search range, +- picoseconds.
    #[arg(long, default_value_t = 10_000_000)]
    search_half_width: i64,
    /// Offset histogram bin, picoseconds.
    #[arg(long, default_value_t = 100)]
    hist_bin: i64,
    /// Histogram every k-th event of stream A.
    #[arg(long, default_value_t = 1)]
    decimation: usize,
}

impl SearchArgs {
    fn search(&self) -> OffsetSearch {
        OffsetSearch {
            search_half_width: self.search_half_width,
            hist_bin: self.hist_bin,
            decimation: self.decimation,
        }
    }
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_TAU_MZI)]
    tau_mzi: u64,
    /// Coincidence window, picoseconds; 4 * tau_mzi if omitted.
    #[arg(long)]
    window: Option<u64>,
    #[arg(long, default_value_t = 200.0)]
    block_seconds: f64,
    /// Fixed clock offset of B in picoseconds instead of a per-block estimate.
    #[arg(long, allow_negative_numbers = true)]
    offset: Option<i64>,
    #[arg(long, value_enum, default_value_t = Policy::Random)]
    policy: Policy,
    #[arg(long, value_enum, default_value_t = Sign::DPlus)]
    sign: Sign,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bootstrap resamples for the error bar; 0 disables it.
    #[arg(long, default_value_t = 200)]
    resamples: usize,
    #[command(flatten)]
    search: SearchArgs,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Time-bin length, picoseconds.
    #[arg(long, default_value_t = 540)]
    delta_t: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Comma-separated time-bin lengths, picoseconds.
    #[arg(long, value_delimiter = ',', required = true)]
    delta_t_list: Vec<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Args)]
struct OffsetArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    search: SearchArgs,
    /// Median refinement half width around the histogram peak.
    #[arg(long, default_value_t = 1_000)]
    refine_half_width: i64,
}

fn read_stream(path: &Path) -> Result<Vec<DetectionEvent>, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    parse_stream(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_inputs(
    args: &InputArgs,
) -> Result<(Vec<DetectionEvent>, Vec<DetectionEvent>, ChannelMap), CliError> {
    let map = match &args.channel_map {
        Some(p) => {
            let s = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            ChannelMap::from_json(&s)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ChannelMap::standard(),
    };
    Ok((read_stream(&args.input_a)?, read_stream(&args.input_b)?, map))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let model = SourceModel {
        v: args.v,
        pair_rate: args.pairs_per_s,
        background_rate: args.background,
        jitter_sigma: args.jitter,
        loss_a: args.loss_a,
        loss_b: args.loss_b,
        tau_mzi: args.tau_mzi,
        clock_offset: args.clock_offset,
        duration: args.duration,
        seed: args.seed,
    };
    model.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(delta_t) = args.delta_t {
        FrameConfig { delta_t, tau_mzi: args.tau_mzi, window: 4 * args.tau_mzi, ..Default::default() }
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let streams = generate_streams(&model).map_err(|e| CliError::Config(e.to_string()))?;
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    let channels = streams.channels.party_channel_ids(timebin::timetag::Party::A).len()
        + streams.channels.party_channel_ids(timebin::timetag::Party::B).len();
    for (name, events) in [("alice.ttag", &streams.alice), ("bob.ttag", &streams.bob)] {
        let path = args.out.join(name);
        write_stream(create(&path)?, events, channels as u16).map_err(|e| io_err(&path, e))?;
    }
    let manifest = SimulationManifest::new(&model, &streams);
    for (name, text) in [
        ("channels.json", streams.channels.to_json()),
        ("manifest.json", serde_json::to_string_pretty(&manifest).expect("manifest serializes")),
    ] {
        let path = args.out.join(name);
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn analysis_config(p: &PipelineArgs, delta_ts: Vec<u64>) -> Result<AnalysisConfig, CliError> {
    if !(p.block_seconds.is_finite() && p.block_seconds > 0.0) {
        return Err(CliError::Config("--block-seconds must be positive".into()));
    }
    let block_len = (p.block_seconds * PS_PER_SECOND as f64).round() as u64;
    let frame = FrameConfig {
        delta_t: delta_ts.first().copied().unwrap_or(p.tau_mzi),
        tau_mzi: p.tau_mzi,
        window: p.window.unwrap_or(4 * p.tau_mzi),
        policy: match p.policy {
            Policy::Random => MultiClickPolicy::RandomOutcome,
            Policy::Discard => MultiClickPolicy::DiscardFrame,
        },
        seed: p.seed,
        sign_convention: match p.sign {
            Sign::DPlus => SignConvention::DPlus,
            Sign::DMinus => SignConvention::DMinus,
        },
        ..Default::default()
    };
    let cfg = AnalysisConfig {
        frame,
        delta_ts,
        block_len,
        offset: p.offset,
        search: p.search.search(),
        resamples: p.resamples,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run_pipeline(p: &PipelineArgs, delta_ts: Vec<u64>) -> Result<Vec<CertificateRecord>, CliError> {
    // validate before touching the inputs so bad flags are config errors
    let cfg = analysis_config(p, delta_ts)?;
    let (a, b, map) = read_inputs(&p.input)?;
    Ok(sweep(&a, &b, &map, &cfg)?)
}

fn field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_json(out: &mut dyn Write, records: &[CertificateRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn write_summary_csv(out: &mut dyn Write, records: &[CertificateRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["block_start", "F_cf", "F_sdp", "schmidt_number", "stderr"])?;
    for r in records {
        w.write_record([
            r.block_start_ps.to_string(),
            field(r.f_cf),
            field(r.f_sdp),
            r.schmidt_number.map(|k| k.to_string()).unwrap_or_default(),
            field(r.stderr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_matrix_csv(
    out: &mut dyn Write,
    records: &[CertificateRecord],
    delta_ts: &[u64],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["block_start".to_string()];
    header.extend(delta_ts.iter().map(|dt| format!("F_sdp_{dt}ps")));
    w.write_record(&header)?;
    for row in records.chunks(delta_ts.len()) {
        let mut line = vec![row[0].block_start_ps.to_string()];
        line.extend(row.iter().map(|r| field(r.f_sdp)));
        w.write_record(&line)?;
    }
    w.flush()?;
    Ok(())
}

fn emit(
    path: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> Result<(), Box<dyn std::error::Error>>,
) -> Result<(), CliError> {
    let mut out = output(path)?;
    let name = path.map(|p| p.display().to_string()).unwrap_or("stdout".into());
    f(&mut out).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
    out.flush().map_err(|e| CliError::Io(format!("{name}: {e}")))
}

fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let records = run_pipeline(&args.pipeline, vec![args.delta_t])?;
    emit(args.pipeline.out.as_deref(), |out| match args.format {
        Format::Json => Ok(write_json(out, &records)?),
        Format::Csv => Ok(write_summary_csv(out, &records)?),
    })
}

fn sweep_cmd(args: &SweepArgs) -> Result<(), CliError> {
    let records = run_pipeline(&args.pipeline, args.delta_t_list.clone())?;
    emit(args.pipeline.out.as_deref(), |out| match args.format {
        Format::Json => Ok(write_json(out, &records)?),
        Format::Csv => Ok(write_matrix_csv(out, &records, &args.delta_t_list)?),
    })
}

fn offset(args: &OffsetArgs) -> Result<(), CliError> {
    if args.refine_half_width < 0 {
        return Err(CliError::Config("--refine-half-width must be >= 0".into()));
    }
    let (a, b, _) = read_inputs(&args.input)?;
    let coarse = estimate_offset(&a, &b, &args.search.search()).map_err(|e| match e {
        TimetagError::InvalidSearch(_) => CliError::Config(e.to_string()),
        other => CliError::Run(other.to_string()),
    })?;
    let refined = refine_offset(&a, &b, coarse, args.refine_half_width);
    let json = serde_json::json!({ "offset_ps": refined, "histogram_peak_ps": coarse });
    emit(None, |out| Ok(writeln!(out, "{json}")?))
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_VAR} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Run(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Offset(a) => offset(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("timebin-certify: {e}");
            ExitCode::from(e.code())
        }
    }
}
