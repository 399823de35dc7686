//! Batch front end: `segment`, `evolve`, `evaluate`, `phantom` and `fields`.
//!
//! Exit codes: 0 on success, 2 for usage or configuration problems, 3 when
//! the pipeline fails at run time (the failing stage is printed on stderr).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use figac::config::{apply_overrides, Mode, PipelineConfig};
use figac::edges::PromptSet;
use figac::io::{self, ContourDoc, RasterType};
use figac::knowledge::Window;
use figac::metrics::{evaluate, MaskPair};
use figac::phantom::{make_phantom, PhantomKind, PhantomSpec};
use figac::pipeline::{self, Input, Runner};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "figac", version, about = "Fracture-interactive geodesic active contours for bone CT")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one slice; writes mask.png, contour.json and diagnostics.json.
    Segment(SegmentArgs),
    /// Run the evolution and write contour overlays at a fixed cadence.
    Evolve(EvolveArgs),
    /// Compare a predicted mask against a ground-truth mask.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic phantom with its ground truth.
    Phantom(PhantomArgs),
    /// Write the edge-detector and distance-factor fields.
    Fields(FieldsArgs),
}

#[derive(Debug, Args)]
pub struct JobArgs {
    /// Input slice: 8-bit gray levels, or 16-bit with a `<image>.json` sidecar.
    #[arg(long)]
    pub image: PathBuf,
    /// Pipeline configuration JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Prompt set JSON; replaces the prompts in the configuration.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set evolution.alpha=1.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub job: JobArgs,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub job: JobArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub snapshot_every: u64,
}

#[derive(Debug, Args)]
pub struct FieldsArgs {
    #[command(flatten)]
    pub job: JobArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Millimetres per pixel for the boundary metrics.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: PhantomKind,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a phantom parameter, e.g. `--set outer_radius=35`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Write a 16-bit HU slice with sidecar instead of 8-bit gray levels.
    #[arg(long)]
    pub hu: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_kind(s: &str) -> Result<PhantomKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        "expected one of ring, fractured_ring, ring_with_blob, annulus, two_disks".to_string()
    })
}

/// Failure classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(figac::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<figac::Error> for Failure {
    fn from(e: figac::Error) -> Self {
        if e.is_config() {
            Failure::Usage(e.into())
        } else {
            Failure::Runtime(e)
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// Output-side I/O failures are runtime errors.
fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes).map_err(|e| Failure::Runtime(e.into()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.into()))?;
    s.push('\n');
    write(path, s)
}

fn out_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path)
        .with_context(|| format!("cannot create output directory {}", path.display()))
        .map_err(usage)
}

/// Reads configuration, prompts and overrides.
pub fn load_config(job: &JobArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &job.config {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("cannot read config {}", p.display())).map_err(usage)?;
            PipelineConfig::from_json(&bytes)
                .with_context(|| format!("invalid config {}", p.display()))
                .map_err(usage)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(p) = &job.prompts {
        let bytes = fs::read(p).with_context(|| format!("cannot read prompts {}", p.display())).map_err(usage)?;
        cfg.prompts = PromptSet::from_json(&bytes)
            .with_context(|| format!("invalid prompts {}", p.display()))
            .map_err(usage)?;
    }
    if !job.overrides.is_empty() {
        cfg = cfg.with_overrides(&job.overrides).context("invalid --set override").map_err(usage)?;
    }
    Ok(cfg)
}

pub fn load_image(path: &Path) -> CliResult<Input> {
    if !path.exists() {
        return Err(usage(anyhow!("image {} does not exist", path.display())));
    }
    io::read_image(path).map_err(|e| match e {
        figac::Error::Io(_) | figac::Error::Image(_) | figac::Error::Json(_) => {
            usage(anyhow::Error::from(e).context(format!("cannot decode image {}", path.display())))
        }
        e => e.into(),
    })
}

fn write_result(out: &Path, res: &pipeline::SegmentationResult) -> CliResult {
    write(&out.join("mask.png"), io::encode_mask_png(&res.mask)?)?;
    write_json(
        &out.join("contour.json"),
        &ContourDoc {
            iteration: res.iterations_run,
            polylines: res.contour.clone(),
        },
    )?;
    write_json(&out.join("diagnostics.json"), &res.diagnostics)
}

pub fn cmd_segment(args: &SegmentArgs) -> CliResult {
    let cfg = load_config(&args.job)?;
    let input = load_image(&args.job.image)?;
    out_dir(&args.job.out)?;
    let res = pipeline::run(&input, &cfg)?;
    log::info!("segmented in {} iterations, timings {:?}", res.iterations_run, res.diagnostics.timings_ms);
    write_result(&args.job.out, &res)
}

fn snapshot_name(iter: usize, ext: &str) -> String {
    format!("snapshot_{iter:06}.{ext}")
}

pub fn cmd_evolve(args: &EvolveArgs) -> CliResult {
    let cfg = load_config(&args.job)?;
    let input = load_image(&args.job.image)?;
    let out = &args.job.out;
    out_dir(out)?;
    let every = args.snapshot_every as usize;
    let fields = pipeline::prepare(&input, &cfg)?;
    let mut runner = Runner::new(&fields, &cfg)?;
    while runner.iter() < cfg.evolution.n_iters {
        let done = runner.step()?;
        let iter = runner.iter();
        if iter % every == 0 {
            let polylines = figac::levelset::extract_contour(&runner.state.phi);
            write(&out.join(snapshot_name(iter, "png")), io::encode_overlay_png(&fields.image, &polylines)?)?;
            write_json(&out.join(snapshot_name(iter, "json")), &ContourDoc { iteration: iter, polylines })?;
            log::info!("iteration {iter}");
        }
        if done {
            break;
        }
    }
    let iters = runner.iter();
    let res = pipeline::finalize(&fields, &cfg, runner.state.phi, iters, runner.converged_at)?;
    write_result(out, &res)
}

pub fn cmd_fields(args: &FieldsArgs) -> CliResult {
    let cfg = load_config(&args.job)?;
    let input = load_image(&args.job.image)?;
    let out = &args.job.out;
    out_dir(out)?;
    let fields = pipeline::prepare(&input, &cfg)?;
    let g_max = match cfg.mode {
        Mode::Figac => 1.0 + cfg.detector.gamma,
        Mode::Classical => 1.0,
    };
    write(&out.join("g.png"), io::encode_field_png(&fields.g, (0.0, g_max))?)?;
    write(&out.join("g.raster"), io::encode_raster(&fields.g, RasterType::F64))?;
    if let Some(beta) = &fields.beta {
        write(&out.join("beta.png"), io::encode_field_png(beta.field(), (0.0, 1.0))?)?;
        write(&out.join("beta.raster"), io::encode_raster(beta.field(), RasterType::F64))?;
    }
    if let Some(stopping) = &fields.stopping {
        write(&out.join("stopping.png"), io::encode_mask_png(stopping.mask())?)?;
    }
    write(&out.join("phi0.raster"), io::encode_raster(&fields.phi0, RasterType::F64))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult {
    let read = |p: &Path| -> CliResult<figac::Mask> {
        let bytes = fs::read(p).with_context(|| format!("cannot read {}", p.display())).map_err(usage)?;
        io::decode_mask_png(&bytes)
            .with_context(|| format!("cannot decode mask {}", p.display()))
            .map_err(usage)
    };
    if !(args.spacing.is_finite() && args.spacing > 0.0) {
        return Err(usage(anyhow!("--spacing must be positive")));
    }
    let (truth, pred) = (read(&args.truth)?, read(&args.pred)?);
    let pair = MaskPair::new(&truth, &pred).map_err(usage)?;
    let report = evaluate(pair, args.spacing);
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?;
    println!("{text}");
    if let Some(p) = &args.out {
        write(p, format!("{text}\n"))?;
    }
    Ok(())
}

pub fn cmd_phantom(args: &PhantomArgs) -> CliResult {
    let mut spec = PhantomSpec::new(args.kind);
    if let Some(n) = args.size {
        spec.size = n;
    }
    if let Some(s) = args.noise_sigma {
        spec.noise_sigma = s;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if !args.overrides.is_empty() {
        spec = apply_overrides(&spec, &args.overrides).context("invalid --set override").map_err(usage)?;
    }
    let p = make_phantom(&spec)?;
    let out = &args.out;
    out_dir(out)?;
    if args.hu {
        let hu_offset = -1024.0;
        let ct = p.to_ct_slice(Window::default())?;
        write(&out.join("image.png"), io::encode_ct_png(&ct, hu_offset)?)?;
        write_json(
            &io::sidecar_path(&out.join("image.png")),
            &io::Sidecar {
                hu_offset,
                pixel_spacing: None,
            },
        )?;
    } else {
        write(&out.join("image.png"), io::encode_gray_png(&p.image)?)?;
        let side = io::sidecar_path(&out.join("image.png"));
        if side.exists() {
            fs::remove_file(&side).map_err(|e| Failure::Runtime(e.into()))?;
        }
    }
    write(&out.join("truth.png"), io::encode_mask_png(&p.truth)?)?;
    if let Some(m) = &p.ring_interior {
        write(&out.join("ring_interior.png"), io::encode_mask_png(m)?)?;
    }
    if let Some(prompt) = &p.prompt {
        write_json(&out.join("prompts.json"), prompt)?;
    }
    write_json(&out.join("phantom.json"), &spec)
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Evolve(a) => cmd_evolve(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Phantom(a) => cmd_phantom(a),
        Command::Fields(a) => cmd_fields(a),
    }
}

/// Parses `args`, runs the subcommand and reports failures on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            match &f {
                Failure::Usage(e) => eprintln!("error: {e:#}"),
                Failure::Runtime(e) => match e.stage() {
                    Some(stage) => eprintln!("error in stage {stage}: {e}"),
                    None => eprintln!("error: {e}"),
                },
            }
            f.code()
        }
    }
}
