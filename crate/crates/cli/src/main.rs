//! Batch tool for joint motion estimation and reconstruction of damaged
//! image sequences: inpainting, flow estimation, synthetic data, synthetic
//! degradation, quality metrics, and pyramid inspection.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowinpaint::degrade::{degrade, BlotchFill, DegradationSpec};
use flowinpaint::grid::FlowDirection;
use flowinpaint::metrics::{flow_metrics, image_metrics};
use flowinpaint::multires::{build_pyramid, estimate_flow, run_pipeline};
use flowinpaint::synth::{
    rotating_sequence, rotation_flow, translating_sequence, translation_flow, BlobTexture,
};

use flowinpaint_cli::config::{Config, ConfigOverrides};
use flowinpaint_cli::seq::{self, FrameFormat};
use flowinpaint_cli::{flo, report, CliError};

#[derive(Parser)]
#[command(
    name = "flowinpaint",
    about = "Motion-compensated reconstruction of image sequences",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct the missing regions of a sequence.
    Inpaint(InpaintArgs),
    /// Estimate forward and backward displacement fields only.
    Flow(FlowArgs),
    /// Blotch and optionally add noise to a sequence.
    Degrade(DegradeArgs),
    /// Compare a restored sequence (or flow) against a reference.
    Metrics(MetricsArgs),
    /// Dump every pyramid level of a sequence and mask.
    Pyramid(PyramidArgs),
    /// Generate a synthetic sequence with ground-truth motion.
    Synth(SynthArgs),
}

#[derive(Args)]
struct InpaintArgs {
    /// Directory of numbered input frames.
    #[arg(long)]
    input: PathBuf,
    /// Directory of numbered mask frames (255 = missing).
    #[arg(long)]
    mask: PathBuf,
    /// Output directory for the restored frames.
    #[arg(long)]
    output: PathBuf,
    /// Output directory for the final forward displacement field.
    #[arg(long)]
    flow_forward: Option<PathBuf>,
    /// Output directory for the final backward displacement field.
    #[arg(long)]
    flow_backward: Option<PathBuf>,
    /// File receiving the finest-level energy trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Frame format for the restored output.
    #[arg(long, default_value = "pgm16")]
    format: String,
    #[command(flatten)]
    config: ConfigOverrides,
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    input: PathBuf,
    /// Output directory for the forward field.
    #[arg(long)]
    forward: PathBuf,
    /// Output directory for the backward field.
    #[arg(long)]
    backward: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigOverrides,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Output directory for the blotch mask.
    #[arg(long)]
    mask_out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Blotches per frame.
    #[arg(long, default_value_t = 3)]
    blotches: usize,
    #[arg(long, default_value_t = 4)]
    vertex_min: usize,
    #[arg(long, default_value_t = 8)]
    vertex_max: usize,
    /// Blotch radius range as fractions of the smaller frame dimension.
    #[arg(long, default_value_t = 0.06)]
    size_min: f64,
    #[arg(long, default_value_t = 0.16)]
    size_max: f64,
    /// Probability that a blotch repeats the previous frame's polygon.
    #[arg(long, default_value_t = 0.3)]
    overlap_prob: f64,
    /// Additive Gaussian noise standard deviation (fraction of range).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Blotch interior fill: a constant in [0,1] or the word "noise".
    #[arg(long, default_value = "0.9")]
    fill: String,
    #[arg(long, default_value = "pgm16")]
    format: String,
}

#[derive(Args)]
struct MetricsArgs {
    /// Restored sequence directory (image comparison).
    #[arg(long)]
    restored: Option<PathBuf>,
    /// Reference sequence directory (image comparison).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Mask directory splitting the report by region.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Estimated flow directory (flow comparison).
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Ground-truth flow directory (flow comparison).
    #[arg(long)]
    flow_reference: Option<PathBuf>,
    /// Direction of the compared flow fields.
    #[arg(long, default_value = "forward")]
    direction: String,
    /// Border width excluded from flow statistics.
    #[arg(long, default_value_t = 0)]
    margin: usize,
    /// Report file (defaults to stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PyramidArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "pgm16")]
    format: String,
    #[command(flatten)]
    config: ConfigOverrides,
}

#[derive(Args)]
struct SynthArgs {
    /// Motion kind: translate or rotate.
    #[arg(long, default_value = "translate")]
    kind: String,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Per-frame shift (translate).
    #[arg(long, default_value_t = 1.0)]
    shift_x: f64,
    #[arg(long, default_value_t = 0.0)]
    shift_y: f64,
    /// Per-frame rotation in radians (rotate).
    #[arg(long, default_value_t = 0.02)]
    theta: f64,
    #[arg(long, default_value_t = 40)]
    blobs: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth forward field output directory.
    #[arg(long)]
    flow_forward: Option<PathBuf>,
    /// Ground-truth backward field output directory.
    #[arg(long)]
    flow_backward: Option<PathBuf>,
    #[arg(long, default_value = "pgm16")]
    format: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flowinpaint: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Inpaint(args) => cmd_inpaint(args),
        Command::Flow(args) => cmd_flow(args),
        Command::Degrade(args) => cmd_degrade(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Pyramid(args) => cmd_pyramid(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn cmd_inpaint(args: InpaintArgs) -> Result<(), CliError> {
    let cfg = Config::resolve(&args.config)?;
    let params = cfg.pipeline_params()?;
    let format = FrameFormat::parse(&args.format)?;
    let input = seq::read_sequence(&args.input)?;
    let mask = seq::read_mask(&args.mask)?;
    if mask.width() != input.width()
        || mask.height() != input.height()
        || mask.frames() != input.frames()
    {
        return Err(CliError::data(format!(
            "mask {}x{}x{} does not match sequence {}x{}x{}",
            mask.width(),
            mask.height(),
            mask.frames(),
            input.width(),
            input.height(),
            input.frames()
        )));
    }
    let out = run_pipeline(&input, &mask, &params)?;
    seq::write_sequence(&args.output, &out.image, format)?;
    if let Some(dir) = &args.flow_forward {
        flo::write_flow(dir, &out.forward)?;
    }
    if let Some(dir) = &args.flow_backward {
        flo::write_flow(dir, &out.backward)?;
    }
    if let Some(path) = &args.trace {
        let finest = out
            .level_traces
            .iter()
            .find(|(l, _)| *l == 0)
            .map(|(_, t)| t.as_slice())
            .unwrap_or(&[]);
        report::write_text(path, &report::render_trace(finest))?;
    }
    Ok(())
}

fn cmd_flow(args: FlowArgs) -> Result<(), CliError> {
    let cfg = Config::resolve(&args.config)?;
    let params = cfg.flow_params()?;
    let spec = cfg.pyramid_spec()?;
    let input = seq::read_sequence(&args.input)?;
    let (fwd, bwd) = estimate_flow(&input, &spec, &params)?;
    flo::write_flow(&args.forward, &fwd)?;
    if let Some(dir) = &args.backward {
        flo::write_flow(dir, &bwd)?;
    }
    Ok(())
}

fn cmd_degrade(args: DegradeArgs) -> Result<(), CliError> {
    let format = FrameFormat::parse(&args.format)?;
    let fill = match args.fill.as_str() {
        "noise" => BlotchFill::UniformNoise,
        text => {
            let v: f64 = text.parse().map_err(|_| {
                CliError::usage(format!("fill must be a number in [0,1] or 'noise', got '{text}'"))
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::usage("fill value must lie in [0,1]"));
            }
            BlotchFill::Constant(v)
        }
    };
    let spec = DegradationSpec {
        seed: args.seed,
        blotches_per_frame: args.blotches,
        vertex_range: (args.vertex_min, args.vertex_max),
        size_range: (args.size_min, args.size_max),
        overlap_probability: args.overlap_prob,
        noise_stddev: args.noise,
        fill,
    };
    let input = seq::read_sequence(&args.input)?;
    let (degraded, mask, rep) = degrade(&input, &spec)?;
    seq::write_sequence(&args.output, &degraded, format)?;
    seq::write_mask(&args.mask_out, &mask)?;
    println!("degraded_fraction: {:.6}", rep.degraded_fraction);
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), CliError> {
    let mut text = String::new();
    match (&args.restored, &args.reference) {
        (Some(restored), Some(reference)) => {
            let restored = seq::read_sequence(restored)?;
            let reference = seq::read_sequence(reference)?;
            let mask = match &args.mask {
                Some(dir) => seq::read_mask(dir)?,
                None => flowinpaint::grid::Mask::new_empty(
                    restored.width(),
                    restored.height(),
                    restored.frames(),
                ),
            };
            let m = image_metrics(&restored, &reference, &mask)?;
            text.push_str(&report::render_image_metrics(&m));
        }
        (None, None) => {}
        _ => {
            return Err(CliError::usage(
                "image metrics need both --restored and --reference",
            ))
        }
    }
    match (&args.flow, &args.flow_reference) {
        (Some(est_dir), Some(ref_dir)) => {
            let direction = match args.direction.as_str() {
                "forward" => FlowDirection::Forward,
                "backward" => FlowDirection::Backward,
                other => {
                    return Err(CliError::usage(format!(
                        "direction must be forward or backward, got '{other}'"
                    )))
                }
            };
            let count = count_flow_files(est_dir)?;
            let est = flo::read_flow(est_dir, direction, count + 1)?;
            let gt = flo::read_flow(ref_dir, direction, count + 1)?;
            let m = flow_metrics(&est, &gt, args.margin)?;
            text.push_str(&report::render_flow_metrics(&m));
        }
        (None, None) => {}
        _ => {
            return Err(CliError::usage(
                "flow metrics need both --flow and --flow-reference",
            ))
        }
    }
    if text.is_empty() {
        return Err(CliError::usage(
            "nothing to compare: pass --restored/--reference or --flow/--flow-reference",
        ));
    }
    print!("{text}");
    if let Some(path) = &args.out {
        report::write_text(path, &text)?;
    }
    Ok(())
}

fn count_flow_files(dir: &std::path::Path) -> Result<usize, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    let mut n = 0usize;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        if entry.path().extension().and_then(|e| e.to_str()) == Some("flo") {
            n += 1;
        }
    }
    if n == 0 {
        return Err(CliError::data(format!(
            "{}: no .flo files found",
            dir.display()
        )));
    }
    Ok(n)
}

fn cmd_pyramid(args: PyramidArgs) -> Result<(), CliError> {
    let cfg = Config::resolve(&args.config)?;
    let spec = cfg.pyramid_spec()?;
    let coarsening = cfg.mask_coarsening()?;
    let format = FrameFormat::parse(&args.format)?;
    let input = seq::read_sequence(&args.input)?;
    let mask = seq::read_mask(&args.mask)?;
    let levels = build_pyramid(&input, &mask, &spec, coarsening)?;
    for level in &levels {
        let dir = args.output.join(format!("level_{}", level.level));
        seq::write_sequence(&dir, &level.image, format)?;
        seq::write_mask(&args.output.join(format!("level_{}_mask", level.level)), &level.mask)?;
    }
    println!("levels: {}", levels.len());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let format = FrameFormat::parse(&args.format)?;
    if args.width < 2 || args.height < 2 || args.frames < 1 {
        return Err(CliError::usage("synth needs width, height >= 2 and frames >= 1"));
    }
    let tex = BlobTexture::random(args.width, args.height, args.blobs, args.seed);
    let (u, fwd, bwd) = match args.kind.as_str() {
        "translate" => {
            let u = translating_sequence(
                args.width,
                args.height,
                args.frames,
                (args.shift_x, args.shift_y),
                &tex,
            );
            let (f, b) =
                translation_flow(args.width, args.height, args.frames, (args.shift_x, args.shift_y));
            (u, f, b)
        }
        "rotate" => {
            let center = (
                (args.width as f64 - 1.0) / 2.0,
                (args.height as f64 - 1.0) / 2.0,
            );
            let u = rotating_sequence(args.width, args.height, args.frames, args.theta, center, &tex);
            let (f, b) = rotation_flow(args.width, args.height, args.frames, args.theta, center);
            (u, f, b)
        }
        other => {
            return Err(CliError::usage(format!(
                "kind must be translate or rotate, got '{other}'"
            )))
        }
    };
    seq::write_sequence(&args.output, &u, format)?;
    if args.frames > 1 {
        if let Some(dir) = &args.flow_forward {
            flo::write_flow(dir, &fwd)?;
        }
        if let Some(dir) = &args.flow_backward {
            flo::write_flow(dir, &bwd)?;
        }
    }
    Ok(())
}
