use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use glyphprompt::cbr::{CbrConfig, DEFAULT_MIN_CONFIDENCE};
use glyphprompt::cgr::{PromptParams, DEFAULT_K_NEG, DEFAULT_K_POS};
use glyphprompt::glyph::{
    build_template_bank, parse_category_spec, DEFAULT_CATEGORIES, DEFAULT_GRID, DEFAULT_TAU,
};
use glyphprompt::pipeline::{
    annotate, evaluate, BackendChoice, BankSource, PipelineConfig, PromptMode, RunConfig,
    REPORT_FILE,
};
use glyphprompt::segmenter::remote::DEFAULT_MAX_IN_FLIGHT;
use glyphprompt::segmenter::{
    Corruptions, MergeConfig, OracleConfig, RecognizerFaults, RetryPolicy,
};
use glyphprompt::synth::{generate_batch, write_dataset, SceneSpec};

#[derive(Parser)]
#[command(
    name = "glyphprompt",
    version,
    about = "Character-level mask annotation from word boxes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn word annotations into character masks.
    Annotate(AnnotateArgs),
    /// Score predicted masks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the full report (with per-image values) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Glyph template banks.
    Glyphs {
        #[command(subcommand)]
        command: GlyphsCommand,
    },
    /// Render a synthetic dataset with exact ground truth.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long)]
        fonts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum GlyphsCommand {
    /// Build a template bank from a font directory.
    Build {
        #[arg(long)]
        fonts: PathBuf,
        /// Categories, e.g. `A-Za-z0-9` or `A-Z&?`.
        #[arg(long, default_value = DEFAULT_CATEGORIES)]
        categories: String,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Oracle,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Corruption {
    FillHoles,
    Truncate,
    BridgeGaps,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory the manifest's image paths are relative to.
    #[arg(long)]
    images: PathBuf,
    /// Template bank file from `glyphs build`.
    #[arg(long, conflicts_with = "fonts", required_unless_present = "fonts")]
    bank: Option<PathBuf>,
    /// Font directory; a bank is built at startup.
    #[arg(long)]
    fonts: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: BackendKind,
    /// Model service base URL (remote backend).
    #[arg(long, required_if_eq("backend", "remote"))]
    endpoint: Option<String>,
    /// Ground-truth directory written by `synth` (oracle backend).
    #[arg(long, required_if_eq("backend", "oracle"))]
    gt: Option<PathBuf>,
    /// Oracle failure modes to simulate.
    #[arg(long, value_enum, value_delimiter = ',')]
    corrupt: Vec<Corruption>,
    /// Oracle detector: probability of merging adjacent characters.
    #[arg(long, default_value_t = 0.0)]
    merge_rate: f64,
    /// Oracle recognizer: probability of an empty reading.
    #[arg(long, default_value_t = 0.0)]
    empty_rate: f64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_K_POS)]
    kpos: usize,
    #[arg(long, default_value_t = DEFAULT_K_NEG)]
    kneg: usize,
    /// Detections below this confidence are ignored.
    #[arg(long, default_value_t = DEFAULT_MIN_CONFIDENCE)]
    min_confidence: f64,
    /// Box prompts only.
    #[arg(long)]
    no_cgr: bool,
    #[arg(long)]
    no_pos: bool,
    #[arg(long)]
    no_neg: bool,
    /// Segment whole words with their word box (no refinement).
    #[arg(long)]
    word_box: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_IN_FLIGHT)]
    max_in_flight: usize,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Seed for the oracle's merge and fault decisions.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run_config(a: AnnotateArgs) -> Result<RunConfig> {
    let bank = match (a.bank, a.fonts) {
        (Some(b), None) => BankSource::File(b),
        (None, Some(f)) => BankSource::Fonts(f),
        _ => bail!("give exactly one of --bank or --fonts"),
    };
    let backend = match a.backend {
        BackendKind::Oracle => {
            let has = |c| a.corrupt.contains(&c);
            BackendChoice::Oracle {
                gt_dir: a.gt.context("--gt is required with the oracle backend")?,
                config: OracleConfig {
                    corruptions: Corruptions {
                        fill_holes: has(Corruption::FillHoles),
                        truncate: has(Corruption::Truncate),
                        bridge_gaps: has(Corruption::BridgeGaps),
                    },
                    merges: MergeConfig {
                        rate: a.merge_rate,
                        seed: a.seed,
                        ..Default::default()
                    },
                    recognizer: RecognizerFaults {
                        empty_rate: a.empty_rate,
                        confidence_scale: 1.0,
                        seed: a.seed,
                    },
                },
            }
        }
        BackendKind::Remote => BackendChoice::Remote {
            endpoint: a
                .endpoint
                .context("--endpoint is required with the remote backend")?,
            retry: RetryPolicy::default(),
            max_in_flight: a.max_in_flight,
        },
    };
    Ok(RunConfig {
        manifest: a.manifest,
        images: a.images,
        bank,
        backend,
        pipeline: PipelineConfig {
            cbr: CbrConfig {
                min_confidence: a.min_confidence,
                ..Default::default()
            },
            prompts: PromptParams {
                tau: a.tau,
                k_pos: a.kpos,
                k_neg: a.kneg,
            },
            mode: PromptMode::from_flags(a.word_box, a.no_cgr, a.no_pos, a.no_neg),
        },
        out: a.out,
        threads: a.threads,
    })
}

fn write_json(path: &Path, value: &glyphprompt::evaluation::EvalReport) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Annotate(args) => {
            let config = run_config(args)?;
            let report = annotate(&config).context("annotation run failed")?;
            let c = report.counts;
            println!(
                "{} images, {} words: {} ok, {} with fallbacks, {} failed; {} characters in {:.1}s",
                report.images,
                report.words,
                c.ok,
                c.fallback_used,
                c.failed,
                report.characters,
                report.wall_time_s
            );
            println!("report: {}", config.out.join(REPORT_FILE).display());
            Ok(if report.has_failures() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Eval { pred, gt, out } => {
            let report = evaluate(&pred, &gt)?;
            let summary = serde_json::json!({
                "images": report.images,
                "fg_iou": report.fg_iou,
                "precision": report.precision,
                "recall": report.recall,
                "f_score": report.f_score,
                "global": report.global,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Glyphs {
            command:
                GlyphsCommand::Build {
                    fonts,
                    categories,
                    grid,
                    out,
                },
        } => {
            let cats = parse_category_spec(&categories)?;
            let (bank, report) = build_template_bank(&fonts, &cats, grid)
                .with_context(|| format!("building templates from {}", fonts.display()))?;
            bank.save(&out)?;
            for (font, err) in &report.font_failures {
                log::warn!("font {font} skipped: {err}");
            }
            println!(
                "{} fonts, {} categories built, {} skipped, {} glyph failures -> {}",
                report.fonts_loaded.len(),
                report.categories_built.len(),
                report.categories_skipped.len(),
                report.glyph_failures.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            seed,
            count,
            fonts,
            out,
        } => {
            let (faces, failures) = glyphprompt::glyph::load_fonts(&fonts)?;
            for (font, err) in &failures {
                log::warn!("font {font} skipped: {err}");
            }
            let scenes = generate_batch(seed, count, &SceneSpec::default(), &faces)?;
            let manifest = write_dataset(&scenes, &out)?;
            let words: usize = manifest.images.iter().map(|i| i.words.len()).sum();
            println!(
                "{} scenes, {words} words -> {}",
                manifest.images.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
