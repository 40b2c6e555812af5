//! Command-line front end.
//!
//! Every subcommand reads its settings from flags, then from the matching
//! table of the `--config` TOML file, then from built-in defaults. Config
//! keys are the flag names without the leading dashes.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::ablation::{ablation_grid, GridSpec};
use crate::dataset::{load_dataset_with, DatasetIndex, LoadOptions};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, BoundaryTolerance, EvalOptions, EvalReport};
use crate::pipeline::{build_checker, run_dataset, Backends, BackendSpec, PairStatus, PipelineConfig};
use crate::protocol::{record_transcript, run_conformance, Transcript, DEFAULT_TIMEOUT};
use crate::report::{
    render_ablation, render_ablation_csv, render_leaderboard, render_leaderboard_csv, render_report_csv,
    render_summary,
};
use crate::sampler::{sample, SamplerConfig, Strategy, DEFAULT_BUDGET, DEFAULT_HEAD_FRACTION};
use crate::synth::{generate, Motion, SynthSpec};
use crate::vlc::VideoLanguageChecker;
use crate::worker::{serve, MockWorkerOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURES: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

const DEFAULT_SPLIT: &str = "valid_u";

#[derive(Debug, Parser)]
#[command(name = "rvos", version, about = "Referring video object segmentation: run, evaluate and ablate")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// Seed for dataset probing and synthetic generation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run checking and segmentation over a dataset, writing prediction PNGs.
    Run(RunArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run and score a grid of pipeline configurations.
    Ablate(AblateArgs),
    /// Print the key frames chosen for a video length.
    Sample(SampleArgs),
    /// Ask the checker about one (video, expression) pair.
    Check(CheckArgs),
    /// Generate a synthetic dataset with exact ground truth.
    Synth(SynthArgs),
    /// Render a leaderboard from report files.
    Leaderboard(LeaderboardArgs),
    /// Check a worker against a golden transcript, or record one.
    Conformance(ConformanceArgs),
    #[command(hide = true)]
    MockWorker(MockWorkerOptions),
}

/// Fills unset fields of `$a` from `$b`.
macro_rules! fill_from {
    ($a:expr, $b:expr; $($f:ident),* $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.clone(); } )*
    };
}

macro_rules! default_to {
    ($a:expr; $($f:ident = $v:expr),* $(,)?) => {
        $( if $a.$f.is_none() { $a.$f = Some($v); } )*
    };
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunArgs {
    /// Dataset root (containing meta_expressions.json or a split directory).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Split subdirectory tried when the dataset root has no manifest.
    #[arg(long)]
    pub split: Option<String>,
    /// Output root for predictions and run_manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kfs_strategy: Option<Strategy>,
    /// Key-frame budget per video.
    #[arg(long)]
    pub kfs_number: Option<usize>,
    /// Share of the hybrid budget taken from the head.
    #[arg(long)]
    pub kfs_head_fraction: Option<f64>,
    /// Checker backend; enables the checker when given.
    #[arg(long)]
    pub vlc: Option<String>,
    /// Segmenter backend: worker command, builtin:oracle[=GT], builtin:empty or replay:FILE.
    #[arg(long)]
    pub segmenter: Option<String>,
    /// Concurrent pairs and worker processes per backend.
    #[arg(long)]
    pub pool: Option<usize>,
    /// Abort on checker failure instead of treating it as "yes".
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub vlc_strict: Option<bool>,
    /// Abort on segmentation failure instead of writing empty masks.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub strict: Option<bool>,
    /// Seconds to wait for each worker reply.
    #[arg(long)]
    pub timeout: Option<u64>,
}

impl RunArgs {
    fn resolve(mut self, file: Option<&RunArgs>) -> Self {
        if let Some(file) = file {
            fill_from!(self, file; dataset, split, out, kfs_strategy, kfs_number, kfs_head_fraction,
                vlc, segmenter, pool, vlc_strict, strict, timeout);
        }
        default_to!(self;
            split = DEFAULT_SPLIT.to_string(),
            kfs_strategy = Strategy::Hybrid,
            kfs_number = DEFAULT_BUDGET,
            kfs_head_fraction = DEFAULT_HEAD_FRACTION,
            pool = 1,
            vlc_strict = false,
            strict = false,
            timeout = DEFAULT_TIMEOUT.as_secs(),
        );
        self
    }

    fn pipeline_config(&self) -> Result<PipelineConfig> {
        let segmenter = self.segmenter.as_deref().ok_or_else(|| missing("segmenter"))?.parse()?;
        let out = self.out.clone().ok_or_else(|| missing("out"))?;
        let mut cfg = PipelineConfig::new(segmenter, out);
        cfg.sampler = sampler_config(self.kfs_strategy, self.kfs_number, self.kfs_head_fraction);
        if let Some(vlc) = &self.vlc {
            cfg = cfg.with_vlc(vlc.parse()?);
        }
        cfg.pool_size = self.pool.unwrap_or(1);
        cfg.vlc_strict = self.vlc_strict.unwrap_or(false);
        cfg.strict = self.strict.unwrap_or(false);
        cfg.worker_timeout_secs = self.timeout.unwrap_or(DEFAULT_TIMEOUT.as_secs());
        cfg.validate_specs()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Prediction root in annotation layout.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground-truth root; defaults to the dataset root.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Dataset root.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Split subdirectory tried when the dataset root has no manifest.
    #[arg(long)]
    pub split: Option<String>,
    /// Write the report JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write per-expression scores as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Boundary tolerance: pixels if >= 1, else a fraction of the image diagonal.
    #[arg(long)]
    pub bound_th: Option<f64>,
    /// Score expressions without predictions as zero instead of failing.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub score_missing_zero: Option<bool>,
}

impl EvalArgs {
    fn resolve(mut self, file: Option<&EvalArgs>) -> Self {
        if let Some(file) = file {
            fill_from!(self, file; pred, gt, dataset, split, out, csv, bound_th, score_missing_zero);
        }
        default_to!(self;
            split = DEFAULT_SPLIT.to_string(),
            score_missing_zero = false,
        );
        self
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AblateArgs {
    /// Pipeline settings shared by every cell; read from the `[run]` table.
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunArgs,
    /// Grid file (TOML or JSON), or `table2` for the built-in eight-row grid.
    #[arg(long)]
    pub grid: Option<String>,
    /// Boundary tolerance used when scoring each cell.
    #[arg(long)]
    pub bound_th: Option<f64>,
    /// Write the ablation table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SampleArgs {
    /// Video length in frames.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, value_enum)]
    pub kfs_strategy: Option<Strategy>,
    /// Key-frame budget per video.
    #[arg(long)]
    pub kfs_number: Option<usize>,
    /// Share of the hybrid budget taken from the head.
    #[arg(long)]
    pub kfs_head_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CheckArgs {
    /// Dataset root.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Split subdirectory tried when the dataset root has no manifest.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub video: Option<String>,
    /// Expression id within the video.
    #[arg(long)]
    pub expression: Option<String>,
    #[arg(long)]
    pub vlc: Option<String>,
    #[arg(long, value_enum)]
    pub kfs_strategy: Option<Strategy>,
    /// Key-frame budget per video.
    #[arg(long)]
    pub kfs_number: Option<usize>,
    /// Share of the hybrid budget taken from the head.
    #[arg(long)]
    pub kfs_head_fraction: Option<f64>,
    #[arg(long)]
    pub timeout: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub width: Option<u32>,
    /// Boxes per video (1 to 4).
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long, value_enum)]
    pub motion: Option<Motion>,
    /// Add one checker-rejected expression per video.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub markers: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LeaderboardArgs {
    /// Entries of the form TEAM=REPORT_JSON.
    #[serde(default)]
    pub entries: Vec<String>,
    /// Emit CSV instead of a text table.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub csv: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConformanceArgs {
    /// Worker command line.
    #[arg(long)]
    pub worker: Option<String>,
    /// Golden transcript (JSON lines of {"request","response"}).
    #[arg(long)]
    pub golden: Option<PathBuf>,
    /// Record the worker's replies to this file instead of checking.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Requests to record, one JSON object per line; defaults to the golden requests.
    #[arg(long)]
    pub requests: Option<PathBuf>,
    #[arg(long)]
    pub timeout: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    log_level: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<RunArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eval: Option<EvalArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ablate: Option<AblateArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sample: Option<SampleArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    check: Option<CheckArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    synth: Option<SynthArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    leaderboard: Option<LeaderboardArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    conformance: Option<ConformanceArgs>,
}

impl ConfigFile {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn missing(flag: &str) -> Error {
    Error::Config(format!("--{flag} is required (flag or config file)"))
}

fn sampler_config(strategy: Option<Strategy>, number: Option<usize>, head: Option<f64>) -> SamplerConfig {
    SamplerConfig {
        strategy: strategy.unwrap_or(Strategy::Hybrid),
        budget: number.unwrap_or(DEFAULT_BUDGET),
        head_fraction: head.unwrap_or(DEFAULT_HEAD_FRACTION),
    }
}

fn tolerance(bound_th: Option<f64>) -> Result<BoundaryTolerance> {
    bound_th.map_or(Ok(BoundaryTolerance::default()), BoundaryTolerance::from_bound_th)
}

fn exit_code(e: &Error) -> i32 {
    if e.is_backend_failure() {
        EXIT_BACKEND
    } else {
        EXIT_USAGE
    }
}

/// Appends a per-subcommand flag listing to the top-level help.
fn command_with_flag_index() -> clap::Command {
    let cmd = Cli::command();
    let mut index = String::from("Flags by subcommand:\n");
    for sub in cmd.get_subcommands().filter(|s| !s.is_hide_set()) {
        let flags: Vec<String> = sub
            .get_arguments()
            .filter(|a| !a.is_global_set())
            .map(|a| match a.get_long() {
                Some(l) => format!("--{l}"),
                None => format!("<{}>", a.get_id().as_str().to_uppercase()),
            })
            .collect();
        index.push_str(&format!("  {}: {}\n", sub.get_name(), flags.join(" ")));
    }
    index.push_str("  global: --config --log-level --seed --print-config");
    cmd.after_help(index)
}

fn init_logging(level: Option<&str>) {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if let Some(level) = level {
        builder.parse_filters(level);
    }
    let _ = builder.format_timestamp(None).try_init();
}

/// Parses `args` and runs the selected subcommand. Returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let mut cmd = command_with_flag_index();
    cmd.build();
    let matches = match cmd.clone().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return EXIT_OK;
            }
            let sub = args
                .iter()
                .skip(1)
                .filter_map(|a| a.to_str())
                .find_map(|a| cmd.find_subcommand_mut(a).map(|s| s.render_usage().to_string()));
            let usage = sub.unwrap_or_else(|| cmd.render_usage().to_string());
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{usage}");
            }
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let log_level = cli.log_level.clone().or(file.log_level.clone());
    init_logging(log_level.as_deref());
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let mut resolved = ConfigFile {
        log_level,
        seed: Some(seed),
        ..Default::default()
    };
    let print = cli.print_config;

    macro_rules! maybe_print {
        () => {
            if print {
                let text = toml::to_string(&resolved).map_err(|e| Error::Config(e.to_string()))?;
                write_out(out, &text)?;
                return Ok(EXIT_OK);
            }
        };
    }

    match cli.command {
        Command::Run(args) => {
            let args = args.resolve(file.run.as_ref());
            resolved.run = Some(args.clone());
            maybe_print!();
            cmd_run(&args, seed, out)
        }
        Command::Eval(args) => {
            let args = args.resolve(file.eval.as_ref());
            resolved.eval = Some(args.clone());
            maybe_print!();
            cmd_eval(&args, seed, out)
        }
        Command::Ablate(mut args) => {
            args.run = args.run.resolve(file.run.as_ref());
            if let Some(f) = &file.ablate {
                fill_from!(args, f; grid, bound_th, csv);
            }
            default_to!(args; grid = "table2".to_string());
            resolved.run = Some(args.run.clone());
            resolved.ablate = Some(args.clone());
            maybe_print!();
            cmd_ablate(&args, seed, out)
        }
        Command::Sample(mut args) => {
            if let Some(f) = &file.sample {
                fill_from!(args, f; frames, kfs_strategy, kfs_number, kfs_head_fraction);
            }
            default_to!(args;
                kfs_strategy = Strategy::Hybrid,
                kfs_number = DEFAULT_BUDGET,
                kfs_head_fraction = DEFAULT_HEAD_FRACTION,
            );
            resolved.sample = Some(args.clone());
            maybe_print!();
            cmd_sample(&args, out)
        }
        Command::Check(mut args) => {
            if let Some(f) = &file.check {
                fill_from!(args, f; dataset, split, video, expression, vlc, kfs_strategy, kfs_number,
                    kfs_head_fraction, timeout);
            }
            default_to!(args;
                split = DEFAULT_SPLIT.to_string(),
                kfs_strategy = Strategy::Hybrid,
                kfs_number = DEFAULT_BUDGET,
                kfs_head_fraction = DEFAULT_HEAD_FRACTION,
                timeout = DEFAULT_TIMEOUT.as_secs(),
            );
            resolved.check = Some(args.clone());
            maybe_print!();
            cmd_check(&args, seed, out)
        }
        Command::Synth(mut args) => {
            if let Some(f) = &file.synth {
                fill_from!(args, f; out, videos, min_frames, max_frames, height, width, objects, motion, markers);
            }
            let d = SynthSpec::default();
            default_to!(args;
                videos = d.videos,
                min_frames = d.min_frames,
                max_frames = d.max_frames,
                height = d.height,
                width = d.width,
                objects = d.objects,
                motion = d.motion,
                markers = d.markers,
            );
            resolved.synth = Some(args.clone());
            maybe_print!();
            cmd_synth(&args, seed, out)
        }
        Command::Leaderboard(mut args) => {
            if let Some(f) = &file.leaderboard {
                if args.entries.is_empty() {
                    args.entries = f.entries.clone();
                }
                fill_from!(args, f; csv);
            }
            resolved.leaderboard = Some(args.clone());
            maybe_print!();
            cmd_leaderboard(&args, out)
        }
        Command::Conformance(mut args) => {
            if let Some(f) = &file.conformance {
                fill_from!(args, f; worker, golden, record, requests, timeout);
            }
            default_to!(args; timeout = DEFAULT_TIMEOUT.as_secs());
            resolved.conformance = Some(args.clone());
            maybe_print!();
            cmd_conformance(&args, out)
        }
        Command::MockWorker(opts) => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve(&opts, stdin.lock(), stdout.lock()).map_err(|e| Error::io("<stdio>", e))
        }
    }
}

fn load(dataset: Option<&Path>, split: Option<&str>, seed: u64) -> Result<DatasetIndex> {
    let root = dataset.ok_or_else(|| missing("dataset"))?;
    load_dataset_with(root, split.unwrap_or(DEFAULT_SPLIT), &LoadOptions { seed })
}

fn cmd_run(args: &RunArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let cfg = args.pipeline_config()?;
    let dataset = load(args.dataset.as_deref(), args.split.as_deref(), seed)?;
    let backends = Backends::from_config(&cfg, &dataset.root)?;
    let manifest = run_dataset(&dataset, &cfg, &backends)?;
    write_out(
        out,
        &format!(
            "pairs {}  ok {}  gated {}  errors {}\n",
            manifest.pairs.len(),
            manifest.count(PairStatus::Ok),
            manifest.count(PairStatus::GatedZero),
            manifest.count(PairStatus::BackendError)
        ),
    )?;
    Ok(if manifest.has_failures() { EXIT_FAILURES } else { EXIT_OK })
}

fn cmd_eval(args: &EvalArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let pred = args.pred.as_deref().ok_or_else(|| missing("pred"))?;
    let dataset = load(args.dataset.as_deref(), args.split.as_deref(), seed)?;
    let gt = args.gt.clone().unwrap_or_else(|| dataset.root.clone());
    let opts = EvalOptions {
        tolerance: tolerance(args.bound_th)?,
        score_missing_zero: args.score_missing_zero.unwrap_or(false),
    };
    let outcome = evaluate_dataset(pred, &gt, &dataset, &opts)?;
    for key in &outcome.missing {
        log::warn!("{key}: no prediction, scored as zero");
    }
    if let Some(path) = &args.out {
        outcome.report.save(path)?;
    }
    if let Some(path) = &args.csv {
        let csv = render_report_csv(&outcome.report);
        std::fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    write_out(out, &(render_summary(&outcome.report) + "\n"))?;
    Ok(if outcome.missing.is_empty() { EXIT_OK } else { EXIT_FAILURES })
}

fn cmd_ablate(args: &AblateArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let grid = GridSpec::load(args.grid.as_deref().unwrap_or("table2"))?;
    let mut base = args.run.pipeline_config()?;
    // the grid decides per cell whether the checker runs
    base.vlc_enabled = false;
    let dataset = load(args.run.dataset.as_deref(), args.run.split.as_deref(), seed)?;
    let backends = Backends::from_config(&base, &dataset.root)?;
    let eval = EvalOptions {
        tolerance: tolerance(args.bound_th)?,
        score_missing_zero: false,
    };
    let results = ablation_grid(&dataset, &grid, &base, &backends, &eval)?;
    for r in &results {
        r.report.save(&r.config.output_root.join("report.json"))?;
    }
    let rows: Vec<_> = results.iter().map(|r| r.row()).collect();
    if let Some(path) = &args.csv {
        std::fs::write(path, render_ablation_csv(&rows)).map_err(|e| Error::io(path, e))?;
    }
    write_out(out, &render_ablation(&rows))?;
    let failed = results.iter().any(|r| r.manifest.has_failures());
    Ok(if failed { EXIT_FAILURES } else { EXIT_OK })
}

fn cmd_sample(args: &SampleArgs, out: &mut dyn Write) -> Result<i32> {
    let frames = args.frames.ok_or_else(|| missing("frames"))?;
    let cfg = sampler_config(args.kfs_strategy, args.kfs_number, args.kfs_head_fraction);
    let set = sample(&cfg, frames)?;
    let json = serde_json::to_string(&set).expect("indices serialize");
    write_out(out, &(json + "\n"))?;
    Ok(EXIT_OK)
}

fn cmd_check(args: &CheckArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let spec: BackendSpec = args.vlc.as_deref().ok_or_else(|| missing("vlc"))?.parse()?;
    let video_id = args.video.as_deref().ok_or_else(|| missing("video"))?;
    let expression_id = args.expression.as_deref().ok_or_else(|| missing("expression"))?;
    let dataset = load(args.dataset.as_deref(), args.split.as_deref(), seed)?;
    let video = dataset.video(video_id)?;
    let expr = dataset
        .expressions
        .iter()
        .find(|e| e.video_id == video_id && e.expression_id == expression_id)
        .ok_or_else(|| Error::InvalidInput(format!("no expression {expression_id} in video {video_id}")))?;
    let timeout = Duration::from_secs(args.timeout.unwrap_or(DEFAULT_TIMEOUT.as_secs()).max(1));
    let checker = VideoLanguageChecker::new(build_checker(&spec, 1, timeout)?);
    let sampler = sampler_config(args.kfs_strategy, args.kfs_number, args.kfs_head_fraction);
    sampler.validate()?;
    let verdict = checker.check(video, expr, &sampler)?;
    let json = serde_json::json!({
        "video_id": video_id,
        "expression_id": expression_id,
        "expression": expr.text,
        "matches": verdict.matches,
        "answer": verdict.raw_answer,
        "ambiguous": verdict.ambiguous,
        "backend": verdict.backend_id,
    });
    write_out(out, &(json.to_string() + "\n"))?;
    Ok(EXIT_OK)
}

fn cmd_synth(args: &SynthArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let root = args.out.as_deref().ok_or_else(|| missing("out"))?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        videos: args.videos.unwrap_or(d.videos),
        min_frames: args.min_frames.unwrap_or(d.min_frames),
        max_frames: args.max_frames.unwrap_or(d.max_frames),
        height: args.height.unwrap_or(d.height),
        width: args.width.unwrap_or(d.width),
        objects: args.objects.unwrap_or(d.objects),
        motion: args.motion.unwrap_or(d.motion),
        markers: args.markers.unwrap_or(d.markers),
        seed,
    };
    let summary = generate(root, &spec)?;
    write_out(
        out,
        &format!(
            "videos {}  expressions {}  frames {}\n",
            summary.videos, summary.expressions, summary.frames
        ),
    )?;
    Ok(EXIT_OK)
}

fn cmd_leaderboard(args: &LeaderboardArgs, out: &mut dyn Write) -> Result<i32> {
    if args.entries.is_empty() {
        return Err(Error::Config("leaderboard needs at least one TEAM=REPORT entry".into()));
    }
    let entries = args
        .entries
        .iter()
        .map(|e| {
            let (team, path) = e
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("entry '{e}' is not TEAM=REPORT")))?;
            Ok((team.to_string(), EvalReport::load(Path::new(path))?))
        })
        .collect::<Result<Vec<_>>>()?;
    let text = if args.csv.unwrap_or(false) {
        render_leaderboard_csv(&entries)
    } else {
        render_leaderboard(&entries)
    };
    write_out(out, &text)?;
    Ok(EXIT_OK)
}

fn cmd_conformance(args: &ConformanceArgs, out: &mut dyn Write) -> Result<i32> {
    let worker = args.worker.as_deref().ok_or_else(|| missing("worker"))?;
    let timeout = Duration::from_secs(args.timeout.unwrap_or(DEFAULT_TIMEOUT.as_secs()).max(1));
    if let Some(target) = &args.record {
        let requests: Vec<serde_json::Value> = match (&args.requests, &args.golden) {
            (Some(path), _) => std::fs::read_to_string(path)
                .map_err(|e| Error::io(path, e))?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
                .collect::<Result<_>>()?,
            (None, Some(golden)) => Transcript::load(golden)?.entries.into_iter().map(|e| e.request).collect(),
            (None, None) => return Err(missing("requests")),
        };
        let transcript = record_transcript(worker, &requests, timeout)?;
        transcript.save(target)?;
        write_out(out, &format!("recorded {} exchanges\n", transcript.entries.len()))?;
        return Ok(EXIT_OK);
    }
    let golden = Transcript::load(args.golden.as_deref().ok_or_else(|| missing("golden"))?)?;
    let report = run_conformance(worker, &golden, timeout)?;
    let mut text = String::new();
    for f in &report.failures {
        text.push_str(&format!("FAIL {f}\n"));
    }
    text.push_str(&format!(
        "{} {} exchanges, {} failures\n",
        if report.passed() { "PASS" } else { "FAIL" },
        report.exchanges,
        report.failures.len()
    ));
    write_out(out, &text)?;
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURES })
}
