//! `rivermon` command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime
//! failure (including a failed dataset validation).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rivermon::augmentation::{self, AugmentError, AugmentationSpec};
use rivermon::dataset::{self, ClassMap, DatasetManifest, SplitCounts};
use rivermon::evaluation::{self, ApMethod, EvalOptions};
use rivermon::imaging::ImageBuffer;
use rivermon::pipeline::{self, BackendSpec, ComponentCount, PipelineConfig, PipelineError, SegmentationConfig};
use rivermon::segmentation::{
    estimate_component_count, extract_regions, fit_gmm_histogram, gray_histogram, label_pixels, EmOptions,
};

#[derive(Debug, Parser)]
#[command(name = "rivermon", version, about = "Segment, detect and evaluate underwater frames")]
struct Cli {
    /// Config file (pipeline TOML for run/detect/bench, augmentation spec for augment).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (a file path for `bench`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset bookkeeping.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Write augmented copies of a labeled image directory.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        classes: ClassArgs,
    },
    /// Mixture segmentation of one image into region proposals.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        /// Number of mixture components, or `auto`.
        #[arg(long, default_value = "auto")]
        k: String,
        #[arg(long, default_value_t = rivermon::segmentation::DEFAULT_MIN_AREA)]
        min_area: u64,
    },
    /// Run the detector over a frame directory.
    Detect {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score detections against ground-truth labels.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Operating point for counts and the confusion matrix.
        #[arg(long, default_value_t = rivermon::detection::DEFAULT_CONF_THRESHOLD)]
        conf: f64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long = "pr-curve")]
        pr_curve: Option<PathBuf>,
        #[arg(long = "f1-curve")]
        f1_curve: Option<PathBuf>,
        /// Use 101-point interpolated AP instead of the all-points sum.
        #[arg(long)]
        interpolated: bool,
        #[command(flatten)]
        classes: ClassArgs,
    },
    /// Run the pipeline while sampling current draw.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// File holding the current reading in mA.
        #[arg(long = "telemetry-source", conflicts_with = "constant_ma")]
        telemetry_source: Option<PathBuf>,
        /// Use a constant reading instead of a source file.
        #[arg(long = "constant-ma")]
        constant_ma: Option<f64>,
        #[arg(long = "period-ms", default_value_t = 100)]
        period_ms: u64,
    },
    /// Full pipeline: segmentation, detection, evaluation and telemetry.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Label directory to evaluate against.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Check split sizes of a manifest against expected counts.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        /// Published split to compare against.
        #[arg(long, value_enum, conflicts_with_all = ["train", "test", "valid"])]
        expected: Option<Published>,
        #[arg(long, requires_all = ["test", "valid"])]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        valid: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Published {
    Crayfish,
    Plastic,
}

#[derive(Debug, Args)]
struct ClassArgs {
    /// Comma-separated class names in id order.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
}

impl ClassArgs {
    fn class_map(&self) -> Result<ClassMap, CliError> {
        match &self.classes {
            Some(names) => ClassMap::new(names.clone()).map_err(|e| CliError::Usage(e.into())),
            None => Ok(ClassMap::default()),
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Scripted detections (JSON object of image id to detections).
    #[arg(long, conflicts_with = "command")]
    fixture: Option<PathBuf>,
    /// External detector command line, split on whitespace.
    #[arg(long)]
    command: Option<String>,
    #[arg(long)]
    conf: Option<f64>,
    #[arg(long = "nms-iou")]
    nms_iou: Option<f64>,
    #[arg(long = "full-frame-also")]
    full_frame_also: bool,
    #[arg(long = "no-segmentation")]
    no_segmentation: bool,
    #[arg(long = "no-annotate")]
    no_annotate: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_config() {
            CliError::Usage(e.into())
        } else {
            CliError::Runtime(e.into())
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::InvalidSpec(_) => CliError::Usage(e.into()),
            _ => CliError::Runtime(e.into()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn runtime<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Usage(err) | CliError::Runtime(err)) = &e;
            eprintln!("error: {err:#}");
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Dataset {
            command:
                DatasetCommand::Validate {
                    manifest,
                    expected,
                    train,
                    test,
                    valid,
                },
        } => dataset_validate(cli, manifest, *expected, (*train, *test, *valid)),
        Command::Augment { input, classes } => augment(cli, input, classes),
        Command::Segment { input, k, min_area } => segment(cli, input, k, *min_area),
        Command::Detect { run } => {
            let cfg = pipeline_config(cli, run)?;
            finish_run(&pipeline::run_batch(&cfg)?.summary)
        }
        Command::Eval {
            gt,
            pred,
            iou,
            conf,
            report,
            pr_curve,
            f1_curve,
            interpolated,
            classes,
        } => eval(
            gt,
            pred,
            EvalOptions {
                iou_threshold: *iou,
                conf_threshold: *conf,
                ap_method: if *interpolated {
                    ApMethod::Interpolated101
                } else {
                    ApMethod::AllPoints
                },
            },
            [report, pr_curve, f1_curve],
            classes,
        ),
        Command::Bench {
            run,
            telemetry_source,
            constant_ma,
            period_ms,
        } => bench(cli, run, telemetry_source.as_deref(), *constant_ma, *period_ms),
        Command::Run { run, gt } => {
            let mut cfg = pipeline_config(cli, run)?;
            if let Some(gt) = gt {
                cfg.ground_truth = Some(gt.clone());
            }
            finish_run(&pipeline::run_batch(&cfg)?.summary)
        }
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn dataset_validate(
    cli: &Cli,
    manifest: &Path,
    expected: Option<Published>,
    custom: (Option<usize>, Option<usize>, Option<usize>),
) -> CliResult {
    let expected = match (expected, custom) {
        (Some(Published::Crayfish), _) => SplitCounts::CRAYFISH,
        (Some(Published::Plastic), _) => SplitCounts::PLASTIC,
        (None, (Some(tr), Some(te), Some(va))) => SplitCounts::new(tr, te, va),
        _ => {
            return Err(usage(
                "give --expected crayfish|plastic or all of --train/--test/--valid",
            ))
        }
    };
    let m = DatasetManifest::load(manifest).map_err(|e| CliError::Usage(e.into()))?;
    let report = dataset::validate_split(&m, expected);
    print_json(&report);
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)
            .with_context(|| out.display().to_string())
            .map_err(runtime)?;
        let p = out.join("split_report.json");
        fs::write(&p, serde_json::to_string_pretty(&report).expect("serializable"))
            .with_context(|| p.display().to_string())
            .map_err(runtime)?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(runtime(anyhow!("split validation failed")))
    }
}

fn augment(cli: &Cli, input: &Path, classes: &ClassArgs) -> CliResult {
    let out = cli.out.as_deref().ok_or_else(|| usage("augment needs --out"))?;
    let mut spec = match &cli.config {
        Some(p) => AugmentationSpec::load(p)?,
        None => AugmentationSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if !input.is_dir() {
        return Err(usage(format!("{} is not a directory", input.display())));
    }
    let sources = dataset::load_labeled_dir(input, &classes.class_map()?).map_err(runtime)?;
    let records = augmentation::augment_dataset(&sources, &spec, out)?;
    log::info!("wrote {} augmented images to {}", records.len(), out.display());
    print_json(&json!({ "sources": sources.len(), "outputs": records.len() }));
    Ok(())
}

fn segment(cli: &Cli, input: &Path, k: &str, min_area: u64) -> CliResult {
    let img = ImageBuffer::load(input).map_err(|e| CliError::Usage(e.into()))?;
    let k = match k {
        "auto" => estimate_component_count(&img),
        n => n
            .parse::<usize>()
            .ok()
            .filter(|k| (1..=255).contains(k))
            .ok_or_else(|| usage(format!("--k must be `auto` or 1..=255, got {n:?}")))?,
    };
    let opts = EmOptions::<f64> {
        seed: cli.seed.unwrap_or(0),
        ..Default::default()
    };
    let fit = fit_gmm_histogram(&gray_histogram(&img), k, &opts).map_err(runtime)?;
    let labels = label_pixels(&img, &fit.params);
    let regions = extract_regions(&labels, min_area, Some(labels.dominant_label()));
    let components: Vec<_> = fit
        .params
        .components
        .iter()
        .map(|c| json!({ "weight": c.weight, "mean": c.mean, "variance": c.variance }))
        .collect();
    let result = json!({
        "image": input.display().to_string(),
        "components": components,
        "degenerate": fit.degenerate,
        "iterations": fit.iterations,
        "log_likelihood": fit.log_likelihood,
        "background_label": labels.dominant_label(),
        "regions": regions,
    });
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)
            .with_context(|| out.display().to_string())
            .map_err(runtime)?;
        labels.save_indexed_png(&out.join("labels.png")).map_err(runtime)?;
        let p = out.join("regions.json");
        fs::write(&p, serde_json::to_string_pretty(&result).expect("serializable"))
            .with_context(|| p.display().to_string())
            .map_err(runtime)?;
    }
    print_json(&result);
    Ok(())
}

fn eval(
    gt: &Path,
    pred: &Path,
    opts: EvalOptions,
    [report_path, pr_path, f1_path]: [&Option<PathBuf>; 3],
    classes: &ClassArgs,
) -> CliResult {
    for (name, v) in [("--iou", opts.iou_threshold), ("--conf", opts.conf_threshold)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(usage(format!("{name} = {v} outside [0, 1]")));
        }
    }
    let classes = classes.class_map()?;
    if !gt.is_dir() {
        return Err(usage(format!("{} is not a directory", gt.display())));
    }
    let truth = dataset::read_label_dir(gt, &classes).map_err(runtime)?;
    let preds = evaluation::read_predictions(pred).map_err(|e| CliError::Usage(e.into()))?;
    let images = evaluation::pair_with_ground_truth(&preds, &truth);
    let (report, f1) = evaluation::evaluate(&images, &classes, &opts).map_err(runtime)?;
    if let Some(p) = report_path {
        fs::write(p, serde_json::to_string_pretty(&report).expect("serializable"))
            .with_context(|| p.display().to_string())
            .map_err(runtime)?;
    }
    if let Some(p) = pr_path {
        let curve =
            evaluation::pooled_pr_curve(&evaluation::match_detections(&images, opts.iou_threshold)).map_err(runtime)?;
        evaluation::write_pr_csv(p, &curve).map_err(runtime)?;
    }
    if let Some(p) = f1_path {
        evaluation::write_f1_csv(p, &f1, &classes).map_err(runtime)?;
    }
    print_json(&report);
    Ok(())
}

fn bench(cli: &Cli, run: &RunArgs, source: Option<&Path>, constant: Option<f64>, period_ms: u64) -> CliResult {
    let csv_out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(pipeline::TELEMETRY_FILE));
    let scratch = tempfile_dir()?;
    let mut cfg = pipeline_config_base(cli, run)?;
    cfg.output = scratch.clone();
    cfg.annotate = false;
    cfg.telemetry_period_ms = period_ms;
    match (source, constant) {
        (Some(p), _) => cfg.telemetry_source = Some(p.to_path_buf()),
        (None, Some(c)) if c.is_finite() && c >= 0.0 => cfg.telemetry_constant_ma = Some(c),
        (None, Some(c)) => return Err(usage(format!("--constant-ma {c} must be a non-negative number"))),
        (None, None) if cfg.telemetry_source.is_some() || cfg.telemetry_constant_ma.is_some() => {}
        (None, None) => return Err(usage("bench needs --telemetry-source or --constant-ma")),
    }
    let result = pipeline::run_batch(&cfg);
    let moved = result.as_ref().ok().map(|_| {
        if let Some(dir) = csv_out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::copy(scratch.join(pipeline::TELEMETRY_FILE), &csv_out)
    });
    let _ = fs::remove_dir_all(&scratch);
    let out = result?;
    if let Some(Err(e)) = moved {
        return Err(runtime(anyhow::Error::new(e).context(csv_out.display().to_string())));
    }
    let s = &out.summary;
    print_json(&json!({
        "images": s.images,
        "failed": s.failed,
        "telemetry_samples": s.telemetry_samples,
        "mean_inference_current_ma": s.mean_inference_current_ma,
        "mean_idle_current_ma": s.mean_idle_current_ma,
        "mean_latency_ms": s.mean_latency_ms,
        "telemetry_csv": csv_out.display().to_string(),
    }));
    if s.mean_inference_current_ma.is_none() {
        log::warn!("no sample landed in the inference phase; try a shorter --period-ms");
    }
    Ok(())
}

fn tempfile_dir() -> Result<PathBuf, CliError> {
    let dir = std::env::temp_dir().join(format!("rivermon-bench-{}", std::process::id()));
    fs::create_dir_all(&dir)
        .with_context(|| dir.display().to_string())
        .map_err(runtime)?;
    Ok(dir)
}

/// Config file (if any) with command-line overrides applied.
fn pipeline_config_base(cli: &Cli, run: &RunArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(i) = &run.input {
        cfg.input = i.clone();
    }
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = &run.fixture {
        cfg.backend = BackendSpec::Mock {
            fixture: Some(f.clone()),
            input_size: None,
        };
    }
    if let Some(c) = &run.command {
        let command: Vec<String> = c.split_whitespace().map(str::to_string).collect();
        if command.is_empty() {
            return Err(usage("--command is empty"));
        }
        cfg.backend = BackendSpec::External {
            command,
            timeout_s: rivermon::detection::DEFAULT_TIMEOUT.as_secs_f64(),
            input_size: Some([416, 416]),
        };
    }
    if let Some(c) = run.conf {
        cfg.conf_threshold = c;
    }
    if let Some(n) = run.nms_iou {
        cfg.nms_iou = n;
    }
    if run.full_frame_also {
        cfg.full_frame_also = true;
    }
    if run.no_segmentation {
        cfg.segmentation = SegmentationConfig {
            enabled: false,
            ..cfg.segmentation
        };
    }
    if run.no_annotate {
        cfg.annotate = false;
    }
    if let ComponentCount::Fixed(0) = cfg.segmentation.components {
        return Err(usage("segmentation components must be positive"));
    }
    Ok(cfg)
}

fn pipeline_config(cli: &Cli, run: &RunArgs) -> Result<PipelineConfig, CliError> {
    let cfg = pipeline_config_base(cli, run)?;
    if cli.out.is_none() && cli.config.is_none() {
        return Err(usage("give --out or a --config that sets `output`"));
    }
    Ok(cfg)
}

fn finish_run(summary: &pipeline::RunSummary) -> CliResult {
    for w in &summary.warnings {
        log::warn!("{w}");
    }
    print_json(&json!({
        "images": summary.images,
        "failed": summary.failed,
        "total_detections": summary.total_detections,
        "detections_per_class": summary.detections_per_class,
        "mean_latency_ms": summary.mean_latency_ms,
        "mean_inference_current_ma": summary.mean_inference_current_ma,
        "map": summary.eval.as_ref().and_then(|e| e.map),
    }));
    Ok(())
}
