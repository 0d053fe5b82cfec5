//! Command-line surface: `encode`, `decode`, `metrics` and `report`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::codec::{
    rate_split, DecodeOptions, Decoder, GopConfig, MixingMask, Provenance, Reconstruction,
};
use crate::error::Error;
use crate::frame::Frame;
use crate::ida::{Denoiser, ExternalDenoiser, GaussianDenoiser, HaarShrinkDenoiser, IdaConfig, SigmaSchedule};
use crate::io::bitstream::{read_stream, write_stream};
use crate::io::pgm::{read_pgm, write_pgm};
use crate::io::plugin::PluginBridge;
use crate::io::yuv::{read_y_sequence, VideoFormat};
use crate::metrics::{evaluate_sequence, summarize, FrameMeta, QualityReport};
use crate::sensing::{Allocation, FrameKind};
use crate::vfi::{ExternalInterpolator, Interpolator, LinearInterpolator};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Per-frame metadata written next to the decoded PGMs.
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Parser)]
#[command(name = "valc", version, about = "Block compressive-sensing video codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sense a raw video into a bitstream.
    Encode(EncodeArgs),
    /// Reconstruct a bitstream into one PGM per frame.
    Decode(DecodeArgs),
    /// Score decoded frames against the original video.
    Metrics(MetricsArgs),
    /// Aggregate per-sequence metric CSVs into one summary table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AllocArg {
    Thi,
    Mdd,
    Fixed,
}

impl From<AllocArg> for Allocation {
    fn from(a: AllocArg) -> Self {
        match a {
            AllocArg::Thi => Allocation::Thi,
            AllocArg::Mdd => Allocation::Mdd,
            AllocArg::Fixed => Allocation::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Yuv420,
    Gray,
    Y4m,
}

impl From<FormatArg> for VideoFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Yuv420 => VideoFormat::Yuv420,
            FormatArg::Gray => VideoFormat::Gray,
            FormatArg::Y4m => VideoFormat::Y4m,
        }
    }
}

#[derive(Debug, Args)]
struct VideoArgs {
    #[arg(long, default_value_t = 352)]
    width: usize,
    #[arg(long, default_value_t = 288)]
    height: usize,
    /// Input container; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl VideoArgs {
    fn read(&self, path: &Path, max_frames: Option<usize>) -> Result<Vec<Frame>, Error> {
        let format = self.format.map_or_else(|| VideoFormat::from_path(path), Into::into);
        read_y_sequence(path, self.width, self.height, format, max_frames)
    }
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 8)]
    gop: usize,
    #[arg(long, default_value_t = 0.7)]
    delta_key: f64,
    /// Target average ratio over a GOP; sets the non-key ratio.
    #[arg(long, default_value_t = 0.175)]
    delta_avg: f64,
    #[arg(long, default_value_t = 16)]
    block_size: usize,
    #[arg(long, value_enum, default_value = "mdd")]
    alloc: AllocArg,
    /// Encode at most this many frames.
    #[arg(long)]
    frames: Option<usize>,
    #[command(flatten)]
    video: VideoArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InterpArg {
    Linear,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReconArg {
    Fast,
    Ida,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DenoiserArg {
    Haar,
    Gaussian,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MixingArg {
    Full,
    Key,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    interp: InterpArg,
    /// Command run for external interpolation or denoising.
    #[arg(long)]
    plugin_cmd: Option<String>,
    /// Seconds to wait for each plugin request.
    #[arg(long, default_value_t = 30.0)]
    plugin_timeout: f64,
    #[arg(long, value_enum, default_value = "fast")]
    recon: ReconArg,
    #[arg(long, default_value_t = 20)]
    ida_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    ida_damping: f64,
    #[arg(long, default_value_t = 4.0)]
    ida_sigma: f64,
    #[arg(long, value_enum, default_value = "haar")]
    denoiser: DenoiserArg,
    /// Best-pixel threshold; defaults to 25 (fast) or 10 (ida).
    #[arg(long)]
    td: Option<f64>,
    /// Reference coefficients mixed into non-key frames.
    #[arg(long, value_enum, default_value = "full")]
    mixing: MixingArg,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Original raw video.
    #[arg(long)]
    original: PathBuf,
    /// Directory written by `decode`.
    #[arg(long)]
    decoded: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    video: VideoArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Metric CSVs, one per sequence; the file stem names the row.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// Also write the summary table here.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// One entry of `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub index: usize,
    pub file: String,
    pub kind: FrameKind,
    pub provenance: Provenance,
    pub delta_realized: f64,
    pub degraded: bool,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on runtime errors, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Encode(a) => encode(&a),
        Command::Decode(a) => decode(&a),
        Command::Metrics(a) => metrics(&a),
        Command::Report(a) => report(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn encode(a: &EncodeArgs) -> Result<(), Failure> {
    let delta_nonkey =
        rate_split(a.delta_avg, a.gop, a.delta_key).map_err(|e| usage(e.to_string()))?;
    info!(
        "GOP {} with key ratio {} and average {}: non-key ratio {:.6}",
        a.gop, a.delta_key, a.delta_avg, delta_nonkey
    );
    let config = GopConfig::new(a.gop, a.block_size, a.delta_key, delta_nonkey, a.alloc.into())
        .map_err(|e| usage(e.to_string()))?;
    if a.frames == Some(0) {
        return Err(usage("--frames must be positive"));
    }
    let frames = a.video.read(&a.input, a.frames)?;
    let stream = crate::codec::encode_sequence(&frames, &config)?;
    let bytes = write_stream(&stream)?;
    fs::write(&a.output, &bytes).map_err(|e| Error::io(&a.output, e))?;
    info!("encoded {} frames into {} bytes", frames.len(), bytes.len());
    Ok(())
}

fn decode(a: &DecodeArgs) -> Result<(), Failure> {
    let needs_plugin = a.interp == InterpArg::External
        || (a.recon == ReconArg::Ida && a.denoiser == DenoiserArg::External);
    let bridge = match (&a.plugin_cmd, needs_plugin) {
        (Some(cmd), true) => {
            if !(a.plugin_timeout > 0.0 && a.plugin_timeout.is_finite()) {
                return Err(usage("--plugin-timeout must be positive"));
            }
            Some(PluginBridge::new(cmd.clone()).with_timeout(Duration::from_secs_f64(a.plugin_timeout)))
        }
        (None, true) => return Err(usage("external interpolation or denoising needs --plugin-cmd")),
        (Some(_), false) => {
            warn!("--plugin-cmd given but nothing external was requested");
            None
        }
        (None, false) => None,
    };
    let reconstruction = match a.recon {
        ReconArg::Fast => Reconstruction::Fast,
        ReconArg::Ida => {
            let config = IdaConfig {
                iterations: a.ida_iters,
                damping: a.ida_damping,
                schedule: SigmaSchedule::Constant(a.ida_sigma),
            };
            config.validate().map_err(|e| usage(e.to_string()))?;
            let denoiser: Arc<dyn Denoiser + Send + Sync> = match a.denoiser {
                DenoiserArg::Haar => Arc::new(HaarShrinkDenoiser),
                DenoiserArg::Gaussian => Arc::new(GaussianDenoiser),
                DenoiserArg::External => {
                    Arc::new(ExternalDenoiser::new(bridge.clone().expect("checked above")))
                }
            };
            Reconstruction::Ida { config, denoiser }
        }
    };
    let options = DecodeOptions {
        reconstruction,
        mixing: match a.mixing {
            MixingArg::Full => MixingMask::FullComplement,
            MixingArg::Key => MixingMask::KeyMeasured,
        },
        threshold: a.td,
    };
    let interpolator: Box<dyn Interpolator> = match a.interp {
        InterpArg::Linear => Box::new(LinearInterpolator),
        InterpArg::External => Box::new(ExternalInterpolator::new(bridge.expect("checked above"))),
    };

    let bytes = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let stream = read_stream(&bytes)?;
    fs::create_dir_all(&a.output_dir).map_err(|e| Error::io(&a.output_dir, e))?;
    let mut decoder = Decoder::new(stream.header, &options, interpolator.as_ref())?;
    let mut index = Vec::with_capacity(stream.frames.len());
    let mut emit = |frames: Vec<crate::codec::DecodedFrame>| -> Result<(), Error> {
        for d in frames {
            let file = format!("frame_{:04}.pgm", d.index);
            write_pgm(a.output_dir.join(&file), &d.pixels)?;
            index.push(IndexEntry {
                index: d.index,
                file,
                kind: d.kind,
                provenance: d.provenance,
                delta_realized: d.delta_realized,
                degraded: d.degraded,
            });
        }
        Ok(())
    };
    for payload in &stream.frames {
        emit(decoder.push(payload)?)?;
    }
    emit(decoder.finish()?)?;
    let degraded = index.iter().filter(|e| e.degraded).count();
    if degraded > 0 {
        warn!("{degraded} frames used fallback interpolation");
    }
    let path = a.output_dir.join(INDEX_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&index).map_err(Error::from)?)
        .map_err(|e| Error::io(&path, e))?;
    info!("decoded {} frames into {}", index.len(), a.output_dir.display());
    Ok(())
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexEntry>, Error> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&text)?)
}

fn metrics(a: &MetricsArgs) -> Result<(), Failure> {
    let index = read_index(&a.decoded)?;
    if index.is_empty() {
        return Err(Error::EmptyInput(a.decoded.join(INDEX_FILE)).into());
    }
    let original = a.video.read(&a.original, Some(index.len()))?;
    if original.len() < index.len() {
        return Err(Error::dims(
            format!("{} original frames", index.len()),
            format!("{}", original.len()),
        )
        .into());
    }
    let decoded = index
        .iter()
        .map(|e| read_pgm(a.decoded.join(&e.file)))
        .collect::<Result<Vec<_>, _>>()?;
    let meta: Vec<FrameMeta> = index
        .iter()
        .map(|e| FrameMeta {
            kind: e.kind,
            delta_realized: e.delta_realized,
        })
        .collect();
    let report = evaluate_sequence(&original, &decoded, &meta)?;
    if let Some(path) = &a.csv {
        report.write_csv(path)?;
    }
    println!(
        "frames {}  PSNR {:.2} dB  MS-SSIM {:.4}  (key {:.2} dB, non-key {:.2} dB)",
        report.frames.len(),
        report.average.psnr,
        report.average.ms_ssim,
        report.key.psnr,
        report.nonkey.psnr
    );
    Ok(())
}

fn report(a: &ReportArgs) -> Result<(), Failure> {
    let mut reports = BTreeMap::new();
    for path in &a.csv {
        let name = path
            .file_stem()
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        reports.insert(name, QualityReport::read_csv(path)?);
    }
    let text = summarize(&reports).to_text();
    print!("{text}");
    if let Some(path) = &a.output {
        fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
