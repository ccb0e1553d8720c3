//! `cloud-inspect` command-line front end.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit code, writing human or JSON output to the supplied streams.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cloud_inspect_core::comparison::median_spacing;
use cloud_inspect_core::pipeline::{
    align, comparison_report, compare_aligned, inspect, AlignOptions, CompareOptions,
    CorrespondenceBound, Downsample, InputsReport, InspectionReport, PipelineError,
    RegistrationReport, Sources, ToolInfo, TransformReport, Verdict,
};
use cloud_inspect_core::ply::{read_ply_file, write_ply, CoordinateKind, PlyFormat};
use cloud_inspect_core::synth::{
    build_case, DefectChoice, Perturbation, Preset, SceneConfig, PRESETS,
};
use cloud_inspect_core::{MatchLabel, Palette, PointCloud};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_DEFECT: i32 = 4;
pub const EXIT_REGISTRATION: i32 = 5;

/// Environment fallback for `--threads 0`.
pub const THREADS_ENV: &str = "CLOUD_INSPECT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "cloud-inspect", version, about = "Register two point clouds and report where they differ")]
pub struct Cli {
    /// Print machine-readable JSON to stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Suppress human-readable output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads; 0 picks CLOUD_INSPECT_THREADS or the core count.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed for commands that draw random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register FIELD onto REFERENCE and write the transformed field.
    Align(AlignCmd),
    /// Compare two clouds that already share a frame.
    Compare(CompareCmd),
    /// Align, then compare, then write the diff cloud and full report.
    Inspect(InspectCmd),
    /// Generate a synthetic reference/field pair with ground truth.
    Synth(SynthCmd),
    /// Summarize a PLY file.
    Info(InfoCmd),
}

#[derive(Args, Debug, Clone)]
struct AlignFlags {
    /// Keep unit scale (rigid registration).
    #[arg(long)]
    no_scale: bool,
    /// Downsample both clouds on this voxel size before registering.
    #[arg(long, conflicts_with = "no_downsample")]
    voxel: Option<f64>,
    /// Never downsample, even for large clouds.
    #[arg(long)]
    no_downsample: bool,
    #[arg(long, default_value_t = cloud_inspect_core::registration::DEFAULT_MAX_ITERATIONS)]
    max_iterations: usize,
    /// Convergence tolerance in model units (default 1e-6 of the reference diagonal).
    #[arg(long)]
    tolerance: Option<f64>,
    /// Drop correspondences farther than this (default 5% of the reference diagonal).
    #[arg(long, conflicts_with = "unbounded")]
    max_correspondence: Option<f64>,
    /// Keep every correspondence regardless of distance.
    #[arg(long)]
    unbounded: bool,
}

impl AlignFlags {
    fn options(&self) -> AlignOptions {
        AlignOptions {
            downsample: match (self.no_downsample, self.voxel) {
                (true, _) => Downsample::Off,
                (false, Some(v)) => Downsample::Voxel(v),
                (false, None) => Downsample::Auto,
            },
            with_scaling: !self.no_scale,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            correspondence: match (self.unbounded, self.max_correspondence) {
                (true, _) => CorrespondenceBound::Unbounded,
                (false, Some(d)) => CorrespondenceBound::Distance(d),
                (false, None) => CorrespondenceBound::Default,
            },
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PaletteArg {
    RedGreen,
    Pink,
}

#[derive(Args, Debug, Clone)]
struct CompareFlags {
    /// Match threshold in model units (default: 3 × median reference spacing).
    #[arg(long)]
    threshold: Option<f64>,
    /// Voxel edge for unmatched volume (default: the threshold).
    #[arg(long)]
    voxel_size: Option<f64>,
    /// Largest unmatched volume still reported as PASS.
    #[arg(long, default_value_t = 0.0)]
    volume_limit: f64,
    #[arg(long, value_enum, default_value_t = PaletteArg::RedGreen)]
    palette: PaletteArg,
}

impl CompareFlags {
    fn options(&self) -> CompareOptions {
        CompareOptions {
            threshold: self.threshold,
            voxel_size: self.voxel_size,
            volume_limit: self.volume_limit,
            palette: match self.palette {
                PaletteArg::RedGreen => Palette::RedGreen,
                PaletteArg::Pink => Palette::Pink,
            },
        }
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct WriteFlags {
    /// Write PLY output as ascii instead of binary little-endian.
    #[arg(long)]
    ascii: bool,
    /// Write float32 coordinates instead of float64.
    #[arg(long)]
    f32: bool,
}

impl WriteFlags {
    fn format(&self) -> PlyFormat {
        if self.ascii {
            PlyFormat::Ascii
        } else {
            PlyFormat::BinaryLittleEndian
        }
    }

    fn coords(&self) -> CoordinateKind {
        if self.f32 {
            CoordinateKind::F32
        } else {
            CoordinateKind::F64
        }
    }
}

#[derive(Args, Debug)]
struct AlignCmd {
    reference: PathBuf,
    field: PathBuf,
    /// Where to write the aligned field cloud.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    align: AlignFlags,
    #[command(flatten)]
    write: WriteFlags,
}

#[derive(Args, Debug)]
struct CompareCmd {
    reference: PathBuf,
    field: PathBuf,
    /// Where to write the colorized diff cloud.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the JSON report (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Include wall-clock timings in the report.
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    compare: CompareFlags,
    #[command(flatten)]
    write: WriteFlags,
}

#[derive(Args, Debug)]
struct InspectCmd {
    reference: PathBuf,
    field: PathBuf,
    /// Where to write the colorized diff cloud.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the JSON report (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the aligned field cloud here.
    #[arg(long)]
    aligned: Option<PathBuf>,
    /// Include wall-clock timings in the report.
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    align: AlignFlags,
    #[command(flatten)]
    compare: CompareFlags,
    #[command(flatten)]
    write: WriteFlags,
}

#[derive(Args, Debug)]
struct SynthCmd {
    /// Preset scene: tower, shiba or chair.
    #[arg(required_unless_present = "config", conflicts_with = "config")]
    preset: Option<String>,
    /// TOML scene description instead of a preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Total points sampled over the preset surface.
    #[arg(long, default_value_t = 50_000)]
    points: usize,
    #[arg(long, default_value = "remove")]
    defect: DefectChoice,
    #[arg(long, default_value_t = 180.0)]
    rotation_max_deg: f64,
    #[arg(long, default_value_t = 0.5)]
    translation_max_frac: f64,
    #[arg(long, default_value_t = 0.5)]
    scale_min: f64,
    #[arg(long, default_value_t = 2.0)]
    scale_max: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[command(flatten)]
    write: WriteFlags,
}

#[derive(Args, Debug)]
struct InfoCmd {
    path: PathBuf,
}

/// Failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::Registration(_) => EXIT_REGISTRATION,
            PipelineError::Input(_) | PipelineError::Comparison(_) => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = i32> = Result<T, CliError>;

struct Ctx {
    json: bool,
    quiet: bool,
    seed: Option<u64>,
    out: Vec<u8>,
}

impl Ctx {
    fn say(&mut self, line: impl fmt::Display) -> CliResult<()> {
        if !self.quiet && !self.json {
            writeln!(self.out, "{line}").map_err(CliError::input)?;
        }
        Ok(())
    }

    fn emit_json(&mut self, text: &str) -> CliResult<()> {
        self.out.write_all(text.as_bytes()).map_err(CliError::input)
    }
}

/// Parse `args` (including the program name), run the command and return
/// the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let stream: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = stream.write_all(rendered.as_bytes());
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.code
        }
    }
}

fn thread_count(requested: usize) -> CliResult<usize> {
    if requested > 0 {
        return Ok(requested);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| CliError::input(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
        _ => Ok(0),
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> CliResult {
    let threads = thread_count(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(CliError::input)?;
    let mut ctx = Ctx {
        json: cli.json,
        quiet: cli.quiet,
        seed: cli.seed,
        out: Vec::new(),
    };
    let command = cli.command;
    let result = pool.install(|| match command {
        Command::Align(c) => cmd_align(&mut ctx, c),
        Command::Compare(c) => cmd_compare(&mut ctx, c),
        Command::Inspect(c) => cmd_inspect(&mut ctx, c),
        Command::Synth(c) => cmd_synth(&mut ctx, c),
        Command::Info(c) => cmd_info(&mut ctx, c),
    });
    stdout
        .write_all(&ctx.out)
        .and_then(|_| stdout.flush())
        .map_err(CliError::input)?;
    result
}

fn label(path: &Path) -> String {
    path.display().to_string()
}

fn load(path: &Path) -> CliResult<(PlyFormat, PointCloud)> {
    read_ply_file(path)
        .map(|(h, c)| (h.format, c))
        .map_err(|e| CliError::input(format!("{}: {e}", label(path))))
}

fn save(path: &Path, cloud: &PointCloud, w: WriteFlags) -> CliResult<()> {
    fs::write(path, write_ply(cloud, w.format(), w.coords()))
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", label(path))))
}

fn save_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", label(path))))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Output of `align --json`: the registration half of an inspection report.
#[derive(Debug, Serialize)]
struct AlignReport {
    tool: ToolInfo,
    inputs: InputsReport,
    registration: RegistrationReport,
}

fn cmd_align(ctx: &mut Ctx, c: AlignCmd) -> CliResult {
    let (_, reference) = load(&c.reference)?;
    let (_, field) = load(&c.field)?;
    let outcome = align(&reference, &field, &c.align.options())?;
    save(&c.out, &outcome.aligned, c.write)?;

    let report = AlignReport {
        tool: ToolInfo::default(),
        inputs: InputsReport {
            reference_path: label(&c.reference),
            field_path: label(&c.field),
            reference_points: reference.len(),
            field_points: field.len(),
            reference_points_registered: outcome.reference_points_registered,
            field_points_registered: outcome.field_points_registered,
            downsample_voxel: outcome.downsample_voxel,
        },
        registration: outcome.report(),
    };
    if ctx.json {
        ctx.emit_json(&to_json(&report))?;
    }
    let t = &outcome.icp.transform;
    ctx.say(format_args!(
        "{} after {} iterations, rmse {:.6e}, scale {:.9}",
        if outcome.icp.converged { "converged" } else { "NOT converged" },
        outcome.icp.iterations_run,
        outcome.icp.final_rmse,
        t.scale()
    ))?;
    ctx.say(format_args!("aligned cloud written to {}", label(&c.out)))?;
    Ok(if outcome.icp.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn emit_report(ctx: &mut Ctx, report: &InspectionReport, path: Option<&Path>) -> CliResult<()> {
    let text = report.to_json();
    match path {
        Some(p) => {
            save_text(p, &text)?;
            if ctx.json {
                ctx.emit_json(&text)?;
            }
        }
        None => {
            if ctx.json || !ctx.quiet {
                ctx.emit_json(&text)?;
            }
        }
    }
    Ok(())
}

fn summarize(ctx: &mut Ctx, report: &InspectionReport) -> CliResult<()> {
    let cmp = &report.comparison;
    ctx.say(format_args!(
        "{}: unmatched field {} pts / {:.6e} vol, reference {} pts / {:.6e} vol (threshold {:.6e})",
        report.verdict,
        cmp.unmatched_count_field,
        cmp.unmatched_volume_field,
        cmp.unmatched_count_reference,
        cmp.unmatched_volume_reference,
        cmp.threshold
    ))
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Pass => EXIT_OK,
        Verdict::Defect => EXIT_DEFECT,
    }
}

fn cmd_compare(ctx: &mut Ctx, c: CompareCmd) -> CliResult {
    let (_, reference) = load(&c.reference)?;
    let (_, field) = load(&c.field)?;
    let outcome = compare_aligned(&reference, &field, &c.compare.options())?;
    if let Some(out) = &c.out {
        save(out, &outcome.diff, c.write)?;
    }
    let sources = Sources {
        reference_path: label(&c.reference),
        field_path: label(&c.field),
    };
    let report = comparison_report(&sources, &reference, &field, &outcome, c.timing);
    emit_report(ctx, &report, c.report.as_deref())?;
    if c.report.is_some() {
        summarize(ctx, &report)?;
    }
    Ok(verdict_code(report.verdict))
}

fn cmd_inspect(ctx: &mut Ctx, c: InspectCmd) -> CliResult {
    let (_, reference) = load(&c.reference)?;
    let (_, field) = load(&c.field)?;
    let sources = Sources {
        reference_path: label(&c.reference),
        field_path: label(&c.field),
    };
    let outcome = inspect(
        &sources,
        &reference,
        &field,
        &c.align.options(),
        &c.compare.options(),
        c.timing,
    )?;
    if let Some(p) = &c.aligned {
        save(p, &outcome.align.aligned, c.write)?;
    }
    if let Some(p) = &c.out {
        save(p, &outcome.compare.diff, c.write)?;
    }
    let report = &outcome.report;
    emit_report(ctx, report, c.report.as_deref())?;
    if c.report.is_some() {
        let reg = &outcome.align.icp;
        ctx.say(format_args!(
            "registration {} after {} iterations, rmse {:.6e}",
            if reg.converged { "converged" } else { "did NOT converge" },
            reg.iterations_run,
            reg.final_rmse
        ))?;
        summarize(ctx, report)?;
    }
    Ok(match report.verdict {
        Verdict::Defect => EXIT_DEFECT,
        Verdict::Pass if !outcome.align.icp.converged => EXIT_NOT_CONVERGED,
        Verdict::Pass => EXIT_OK,
    })
}

/// Contents of `truth.json` written by `synth`.
#[derive(Debug, Serialize)]
pub struct SynthTruth {
    pub tool: ToolInfo,
    pub scene: String,
    pub seed: u64,
    pub defect: String,
    /// Maps the defected reference onto the field cloud.
    pub field_transform: TransformReport,
    /// Maps the field cloud back onto the reference; what `align` should recover.
    pub expected_alignment: TransformReport,
    pub perturbation: Perturbation,
    pub reference_points: usize,
    pub field_points: usize,
    pub voxel_size: f64,
    pub defect_volume: f64,
    pub unmatched_reference_count: usize,
    pub unmatched_field_count: usize,
    pub unmatched_reference_indices: Vec<usize>,
    pub unmatched_field_indices: Vec<usize>,
}

fn unmatched(labels: &[MatchLabel]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_unmatched())
        .map(|(i, _)| i)
        .collect()
}

fn cmd_synth(ctx: &mut Ctx, c: SynthCmd) -> CliResult {
    let (name, config, defect_name) = match (&c.preset, &c.config) {
        (Some(p), _) => {
            let preset: Preset = p.parse().map_err(CliError::input)?;
            let perturbation = Perturbation {
                rotation_max_deg: c.rotation_max_deg,
                translation_max_frac: c.translation_max_frac,
                scale_range: (c.scale_min, c.scale_max),
                noise_sigma: c.noise_sigma,
            };
            let seed = ctx.seed.unwrap_or(0);
            let config = preset.config(seed, c.points, c.defect, perturbation);
            (preset.name().to_string(), config, c.defect.to_string())
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", label(path))))?;
            let mut config =
                SceneConfig::from_toml(&text).map_err(|e| CliError::input(format!("{}: {e}", label(path))))?;
            if let Some(seed) = ctx.seed {
                config.seed = seed;
            }
            let defects = format!("{} configured", config.defects.len());
            (label(path), config, defects)
        }
        (None, None) => return Err(CliError::input(format!("a preset ({}) or --config is required", preset_list()))),
    };

    let case = build_case(&config.scene(), &config.defects, &config.perturbation, None)
        .map_err(CliError::input)?;

    fs::create_dir_all(&c.out_dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", label(&c.out_dir))))?;
    let reference_path = c.out_dir.join("reference.ply");
    let field_path = c.out_dir.join("field.ply");
    let truth_path = c.out_dir.join("truth.json");
    save(&reference_path, &case.reference, c.write)?;
    save(&field_path, &case.field, c.write)?;

    let truth = SynthTruth {
        tool: ToolInfo::default(),
        scene: name,
        seed: config.seed,
        defect: defect_name,
        field_transform: (&case.true_transform).into(),
        expected_alignment: (&case.true_transform.inverse()).into(),
        perturbation: config.perturbation,
        reference_points: case.reference.len(),
        field_points: case.field.len(),
        voxel_size: case.defect_voxel_size,
        defect_volume: case.defect_volume_truth,
        unmatched_reference_count: unmatched(&case.reference_truth).len(),
        unmatched_field_count: unmatched(&case.field_truth).len(),
        unmatched_reference_indices: unmatched(&case.reference_truth),
        unmatched_field_indices: unmatched(&case.field_truth),
    };
    let text = to_json(&truth);
    save_text(&truth_path, &text)?;
    if ctx.json {
        ctx.emit_json(&text)?;
    }
    ctx.say(format_args!(
        "wrote {}, {} and {} ({} reference / {} field points, defect volume {:.6e})",
        label(&reference_path),
        label(&field_path),
        label(&truth_path),
        truth.reference_points,
        truth.field_points,
        truth.defect_volume
    ))?;
    Ok(EXIT_OK)
}

fn preset_list() -> String {
    PRESETS.iter().map(|p| p.name()).collect::<Vec<_>>().join(", ")
}

/// Output of `info`.
#[derive(Debug, Serialize)]
pub struct InfoReport {
    pub path: String,
    pub format: String,
    pub count: usize,
    pub has_color: bool,
    pub bbox: Option<cloud_inspect_core::Aabb>,
    pub median_spacing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spacing_error: Option<String>,
}

fn cmd_info(ctx: &mut Ctx, c: InfoCmd) -> CliResult {
    let (format, cloud) = load(&c.path)?;
    let (median_spacing, spacing_error) = match median_spacing(&cloud) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let info = InfoReport {
        path: label(&c.path),
        format: format.keyword().to_string(),
        count: cloud.len(),
        has_color: cloud.has_colors(),
        bbox: cloud.bounding_box().ok(),
        median_spacing,
        spacing_error,
    };
    if !ctx.quiet || ctx.json {
        ctx.emit_json(&to_json(&info))?;
    }
    Ok(EXIT_OK)
}
