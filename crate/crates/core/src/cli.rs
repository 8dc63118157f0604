//! Command-line front end. `run` returns the process exit code.
//!
//! Exit codes: 0 success, 1 validation diagnostics or rejected data,
//! 2 usage, I/O or format errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use image::RgbImage;

use crate::error::{Error, Result};
use crate::fusion::{self, EnsembleSet};
use crate::harness::{self, GroupKey, ReportFormat, RunOptions, ID_OOD_LAYOUT};
use crate::ingest;
use crate::manifest::{self, DatasetManifest};
use crate::metrics::{self, IouMode, LogBase, MetricConfig};
use crate::par;
use crate::raster::{self, Dims};
use crate::render::{self, Scale};
use crate::synth::{self, SynthDatasetOptions};
use crate::taxonomy::View;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "HANDUQ_CONFIG";

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nsynthetic generator: handuq-synth/chacha8/v1",
    "\nsampler: handuq-sample/chacha8-fisher-yates/v1",
    "\npmap format: 1",
    "\nmanifest format: 1",
);

#[derive(Debug, Parser)]
#[command(
    name = "handuq",
    version,
    long_version = LONG_VERSION,
    about = "Deep-ensemble hand segmentation: fusion, predictive entropy and ID/OOD condition reports"
)]
struct Cli {
    /// Worker threads (0 = all cores). Output does not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// key = value configuration file (default: $HANDUQ_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn raw captures into masks and sampled manifests.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Write a seeded synthetic dataset (masks, learner maps, manifest).
    Synth(SynthArgs),
    /// Average learner maps into one fused PMAP.
    Fuse(FuseArgs),
    /// Evaluate a manifest and print the condition report.
    Eval(EvalArgs),
    /// Re-aggregate a saved record file.
    Report(ReportArgs),
    /// Render entropy heatmaps and TP/FP/FN overlays.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Subcommand)]
enum IngestCommand {
    /// Rasterize a labeling-tool JSON export into 0/255 PNG masks.
    Import {
        #[arg(long)]
        export: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to look up images that have no annotated regions.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Drop near-duplicate frames; prints the kept paths.
    Select {
        /// Mean absolute luminance difference in [0, 1] needed to keep a frame.
        #[arg(long)]
        min_difference: Option<f64>,
        /// Write kept paths here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        frames: Vec<PathBuf>,
    },
    /// Draw a fixed number of items from every condition cell.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        per_condition: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    per_condition: Option<usize>,
    /// Ensemble size.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Comma-separated views: side, egocentric.
    #[arg(long)]
    views: Option<String>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    /// Fuse the maps of one manifest item...
    #[arg(long, requires = "item", conflicts_with = "maps")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    item: Option<String>,
    /// ...or an explicit list of PMAP files.
    #[arg(required_unless_present = "manifest")]
    maps: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Default)]
struct MetricFlags {
    /// Decision threshold: hand iff p >= tau.
    #[arg(long)]
    tau: Option<f64>,
    /// Entropy log base: e or 2.
    #[arg(long)]
    log_base: Option<String>,
    /// IoU mode: hand or two-class.
    #[arg(long)]
    iou_mode: Option<String>,
}

#[derive(Debug, Args, Default)]
struct ReportFlags {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, markdown or json (default: from --out extension, else csv).
    #[arg(long)]
    format: Option<String>,
    /// Comma-separated grouping keys: profile, kind, condition, background, view.
    #[arg(long)]
    group_by: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Training profile(s) to label against; all known profiles when absent.
    #[arg(long)]
    profile: Vec<String>,
    #[command(flatten)]
    metric: MetricFlags,
    #[command(flatten)]
    report: ReportFlags,
    /// Record failing items and continue.
    #[arg(long)]
    skip_errors: bool,
    /// Also save per-image records as JSON.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    show_config: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    #[command(flatten)]
    report: ReportFlags,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Item id; every item when absent.
    #[arg(long)]
    item: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// fixed or minmax.
    #[arg(long)]
    scale: Option<String>,
    /// Apply the embedded colormap instead of grayscale.
    #[arg(long)]
    color: bool,
    /// Write legend.txt describing the overlay colors.
    #[arg(long)]
    legend: bool,
    #[command(flatten)]
    metric: MetricFlags,
}

/// Values read from a configuration file. Unknown keys are rejected.
#[derive(Debug, Default, Clone, PartialEq)]
struct FileConfig {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

const CONFIG_KEYS: [&str; 9] = [
    "tau", "log_base", "iou_mode", "jobs", "group_by", "format", "profile", "scale", "seed",
];

/// Parses `key = value` lines; `#` starts a comment.
fn parse_config(text: &str, source: &Path) -> Result<FileConfig> {
    let mut values = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!(
                "{}:{}: expected key = value",
                source.display(),
                n + 1
            ))
        })?;
        let key = k.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Format(format!(
                "{}:{}: unknown key {key:?}",
                source.display(),
                n + 1
            )));
        }
        values.insert(key, v.trim().to_string());
    }
    Ok(FileConfig {
        values,
        source: Some(source.to_path_buf()),
    })
}

fn load_config(flag: Option<&Path>) -> Result<FileConfig> {
    let path = match flag {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => return Ok(FileConfig::default()),
        },
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_config(&text, &path)
}

impl FileConfig {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Parameter(format!("config {key} = {v:?}")))
            })
            .transpose()
    }

    /// Flag value if given, else the file value, else `None`.
    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

fn parse_with<T: std::str::FromStr<Err = Error>>(s: Option<String>) -> Result<Option<T>> {
    s.map(|v| v.parse()).transpose()
}

fn metric_config(flags: &MetricFlags, file: &FileConfig) -> Result<MetricConfig> {
    let mut config = MetricConfig::default();
    if let Some(tau) = file.pick(flags.tau, "tau")? {
        config.tau = tau;
    }
    let log_base: Option<String> = file.pick(flags.log_base.clone(), "log_base")?;
    if let Some(b) = parse_with::<LogBase>(log_base)? {
        config.log_base = b;
    }
    let iou_mode: Option<String> = file.pick(flags.iou_mode.clone(), "iou_mode")?;
    if let Some(m) = parse_with::<IouMode>(iou_mode)? {
        config.iou_mode = m;
    }
    config.validate()?;
    Ok(config)
}

fn report_settings(
    flags: &ReportFlags,
    file: &FileConfig,
) -> Result<(Vec<GroupKey>, ReportFormat)> {
    let group_by = match file.pick(flags.group_by.clone(), "group_by")? {
        Some(spec) => harness::parse_group_by(&spec)?,
        None => ID_OOD_LAYOUT.to_vec(),
    };
    let format = match file.pick(flags.format.clone(), "format")? {
        Some(f) => f.parse()?,
        None => flags
            .out
            .as_deref()
            .and_then(ReportFormat::from_path)
            .unwrap_or(ReportFormat::Csv),
    };
    Ok((group_by, format))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

/// Failure that carries its own exit code.
enum Failure {
    Diagnostics(Vec<manifest::Diagnostic>),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Io { .. }
        | Error::Image { .. }
        | Error::Format(_)
        | Error::Parameter(_)
        | Error::UnknownProfile(_) => 2,
        _ => 1,
    }
}

/// Validates the manifest, turning any diagnostic into a failure.
fn checked_manifest(path: &Path) -> std::result::Result<DatasetManifest, Failure> {
    let m = DatasetManifest::load(path)?;
    let diagnostics = manifest::validate_manifest(&m);
    if diagnostics.is_empty() {
        Ok(m)
    } else {
        Err(Failure::Diagnostics(diagnostics))
    }
}

fn find_item<'a>(m: &'a DatasetManifest, id: &str) -> Result<&'a manifest::ManifestItem> {
    m.items
        .iter()
        .find(|i| i.id == id)
        .ok_or_else(|| Error::Parameter(format!("item {id:?} not in manifest")))
}

fn show_config(
    config: &MetricConfig,
    file: &FileConfig,
    m: &DatasetManifest,
    profiles: &[String],
    group_by: &[GroupKey],
    format: ReportFormat,
    jobs: usize,
) -> String {
    let mut s = String::new();
    let source = file
        .source
        .as_ref()
        .map_or("none".to_string(), |p| p.display().to_string());
    let _ = writeln!(s, "# precedence: flags > config file > defaults");
    let _ = writeln!(s, "# config file: {source}");
    let _ = writeln!(s, "tau = {}", config.tau);
    let _ = writeln!(s, "log_base = {}", config.log_base);
    let _ = writeln!(s, "iou_mode = {}", config.iou_mode);
    let k = m
        .learner_count()
        .map_or("inconsistent".to_string(), |k| k.to_string());
    let _ = writeln!(s, "k = {k} # from manifest");
    let _ = writeln!(s, "profile = {}", profiles.join(","));
    let keys: Vec<String> = group_by
        .iter()
        .map(|k| {
            serde_json::to_value(k)
                .unwrap()
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    let _ = writeln!(s, "group_by = {}", keys.join(","));
    let _ = writeln!(s, "format = {}", format_name(format));
    let _ = writeln!(s, "jobs = {jobs}");
    s
}

fn format_name(f: ReportFormat) -> &'static str {
    match f {
        ReportFormat::Csv => "csv",
        ReportFormat::Markdown => "markdown",
        ReportFormat::Json => "json",
    }
}

fn cmd_eval(args: EvalArgs, file: &FileConfig, jobs: usize) -> std::result::Result<(), Failure> {
    let config = metric_config(&args.metric, file)?;
    let (group_by, format) = report_settings(&args.report, file)?;
    if args.show_config {
        let m = DatasetManifest::load(&args.manifest)?;
        let names = if args.profile.is_empty() {
            match file.get::<String>("profile")? {
                Some(p) => p.split(',').map(|s| s.trim().to_string()).collect(),
                None => m.all_profiles().into_iter().map(|p| p.name).collect(),
            }
        } else {
            args.profile.clone()
        };
        let text = show_config(&config, file, &m, &names, &group_by, format, jobs);
        write_output(None, &text)?;
        return Ok(());
    }
    let m = checked_manifest(&args.manifest)?;
    let profiles = if !args.profile.is_empty() {
        args.profile
            .iter()
            .map(|p| m.profile(p))
            .collect::<Result<Vec<_>>>()?
    } else if let Some(list) = file.get::<String>("profile")? {
        list.split(',')
            .map(|p| m.profile(p.trim()))
            .collect::<Result<Vec<_>>>()?
    } else {
        m.all_profiles()
    };
    let options = RunOptions {
        skip_errors: args.skip_errors,
    };
    let set = harness::run_evaluation_profiles(&m, &profiles, &config, options)?;
    for f in &set.failures {
        eprintln!("skipped {}: {}", f.item_id, f.error);
    }
    if let Some(path) = &args.records {
        write_output(Some(path), &set.to_json())?;
    }
    let report = harness::build_report(&set, &group_by)?;
    write_output(
        args.report.out.as_deref(),
        &harness::render_report(&report, format),
    )?;
    Ok(())
}

fn cmd_report(args: ReportArgs, file: &FileConfig) -> Result<()> {
    let (group_by, format) = report_settings(&args.report, file)?;
    let set = harness::RecordSet::load(&args.records)?;
    let report = harness::build_report(&set, &group_by)?;
    write_output(
        args.report.out.as_deref(),
        &harness::render_report(&report, format),
    )
}

fn cmd_synth(args: SynthArgs, file: &FileConfig) -> Result<()> {
    let defaults = SynthDatasetOptions::default();
    let views = match &args.views {
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<View>>>()?,
        None => defaults.views.clone(),
    };
    let options = SynthDatasetOptions {
        seed: file.pick(args.seed, "seed")?.unwrap_or(defaults.seed),
        per_condition: args.per_condition.unwrap_or(defaults.per_condition),
        k: args.k.unwrap_or(defaults.k),
        dims: Dims::new(
            args.width.unwrap_or(defaults.dims.width),
            args.height.unwrap_or(defaults.dims.height),
        )
        .map_err(|_| Error::Parameter("synthetic image size must be positive".into()))?,
        views,
    };
    let m = synth::write_synthetic_dataset(&args.out, &options)?;
    eprintln!(
        "wrote {} items to {}",
        m.items.len(),
        args.out.join("manifest.json").display()
    );
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<()> {
    let ensemble = match (&args.manifest, &args.item) {
        (Some(path), Some(id)) => {
            let m = DatasetManifest::load(path)?;
            harness::load_ensemble(&m, find_item(&m, id)?)?
        }
        _ => {
            let maps = args
                .maps
                .iter()
                .map(raster::read_pmap)
                .collect::<Result<Vec<_>>>()?;
            EnsembleSet::unlabeled(maps)?
        }
    };
    raster::write_pmap(&fusion::fuse(&ensemble), &args.out)
}

fn cmd_heatmap(args: HeatmapArgs, file: &FileConfig) -> Result<()> {
    let config = metric_config(&args.metric, file)?;
    let scale: Scale = file
        .pick(args.scale.clone(), "scale")?
        .map(|s: String| s.parse())
        .transpose()?
        .unwrap_or_default();
    let m = DatasetManifest::load(&args.manifest)?;
    let items: Vec<&manifest::ManifestItem> = match &args.item {
        Some(id) => vec![find_item(&m, id)?],
        None => m.items.iter().collect(),
    };
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let warnings = par::map(&items, |item| -> Result<Vec<String>> {
        let render_item = || -> Result<Vec<String>> {
            let ensemble = harness::load_ensemble(&m, item)?;
            let fused = fusion::fuse(&ensemble);
            let emap = metrics::entropy_map(&fused, &config);
            let heat = render::render_entropy(&emap, scale);
            let heat_path = args.out.join(format!("{}-entropy.png", item.id));
            let saved = if args.color {
                render::colorize(&heat.image).save(&heat_path)
            } else {
                heat.image.save(&heat_path)
            };
            saved.map_err(|e| Error::image(&heat_path, e))?;

            let gt = raster::read_mask(m.resolve(&item.gt_mask_path))?;
            let pred = fusion::threshold(&fused, config.tau)?;
            let source: Option<RgbImage> = match &item.image_path {
                Some(p) => {
                    let p = m.resolve(p);
                    Some(
                        image::open(&p)
                            .map_err(|e| Error::image(&p, e))?
                            .into_rgb8(),
                    )
                }
                None => None,
            };
            let overlay = render::render_overlay(source.as_ref(), &gt, &pred)?;
            let overlay_path = args.out.join(format!("{}-overlay.png", item.id));
            overlay
                .save(&overlay_path)
                .map_err(|e| Error::image(&overlay_path, e))?;
            Ok(heat
                .warnings
                .into_iter()
                .map(|w| format!("{}: {w}", item.id))
                .collect())
        };
        render_item().map_err(|e| e.in_item(&item.id))
    });
    for w in warnings {
        for line in w? {
            eprintln!("warning: {line}");
        }
    }
    if args.legend {
        let path = args.out.join("legend.txt");
        fs::write(&path, render::LEGEND).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn cmd_ingest(cmd: IngestCommand, file: &FileConfig) -> Result<()> {
    match cmd {
        IngestCommand::Import {
            export,
            out,
            images,
        } => {
            let report = ingest::import_annotations(&export, &out, images.as_deref())?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("wrote {} masks to {}", report.masks.len(), out.display());
            Ok(())
        }
        IngestCommand::Select {
            min_difference,
            out,
            frames,
        } => {
            let threshold = min_difference
                .ok_or_else(|| Error::Parameter("--min-difference is required".into()))?;
            let kept = ingest::select_frames(&frames, threshold)?;
            let mut text = String::new();
            for i in kept {
                let _ = writeln!(text, "{}", frames[i].display());
            }
            write_output(out.as_deref(), &text)
        }
        IngestCommand::Sample {
            manifest,
            per_condition,
            seed,
            out,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let n = per_condition.unwrap_or(20);
            let seed = file.pick(seed, "seed")?.unwrap_or(0);
            let mut sampled = ingest::balanced_sample(&m, n, seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            // Keep relative paths valid from the new manifest's location.
            let out_dir = out
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            if fs::canonicalize(out_dir).ok() != fs::canonicalize(&m.base_dir).ok() {
                let base = fs::canonicalize(&m.base_dir).unwrap_or(m.base_dir.clone());
                for item in &mut sampled.items {
                    let abs = |p: &Path| {
                        if p.is_absolute() {
                            p.to_path_buf()
                        } else {
                            base.join(p)
                        }
                    };
                    item.gt_mask_path = abs(&item.gt_mask_path);
                    item.learner_map_paths =
                        item.learner_map_paths.iter().map(|p| abs(p)).collect();
                    item.image_path = item.image_path.as_deref().map(abs);
                }
            }
            sampled.save(&out)?;
            eprintln!(
                "sampled {} items into {}",
                sampled.items.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    let file = load_config(cli.config.as_deref())?;
    let jobs = file.pick(cli.jobs, "jobs")?.unwrap_or(0);
    par::with_jobs(jobs, || match cli.command {
        Command::Ingest(cmd) => cmd_ingest(cmd, &file).map_err(Failure::from),
        Command::Synth(args) => cmd_synth(args, &file).map_err(Failure::from),
        Command::Fuse(args) => cmd_fuse(args).map_err(Failure::from),
        Command::Eval(args) => cmd_eval(args, &file, jobs),
        Command::Report(args) => cmd_report(args, &file).map_err(Failure::from),
        Command::Heatmap(args) => cmd_heatmap(args, &file).map_err(Failure::from),
    })
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Diagnostics(diags)) => {
            eprintln!(
                "manifest validation failed with {} diagnostic(s):",
                diags.len()
            );
            for d in diags {
                eprintln!("  {d}");
            }
            1
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
