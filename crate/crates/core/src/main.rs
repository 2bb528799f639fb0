use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use chromaset::annotations::DatasetManifest;
use chromaset::chromakey::{self, ChromaParams};
use chromaset::cli::{self, GridJob, Settings};
use chromaset::detmetrics::{self, ApMode};
use chromaset::imagecore;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "chromaset", version, about = "Chroma-key dataset generation and detection scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replace everything outside the mask with the key colour.
    Greenscreen {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Key colour as R,G,B.
        #[arg(long, default_value = "0,100,0")]
        key: String,
    },
    /// Turn green into transparency.
    Keyout {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Offset added to each red/blue-vs-green difference.
        #[arg(long, default_value_t = 0.2)]
        offset: f64,
        /// Raw alpha strictly above this becomes 255.
        #[arg(long, default_value_t = 50.0)]
        threshold: f64,
    },
    /// Compose keyed foregrounds onto every background.
    Compose {
        #[arg(long)]
        foregrounds: PathBuf,
        #[arg(long)]
        backgrounds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "object", env = "CHROMASET_CLASS")]
        class: String,
        #[command(flatten)]
        grid: GridFlags,
    },
    /// Greenscreen, key out and compose in one run.
    Pipeline {
        /// TOML file of key = value settings; flags take precedence.
        #[arg(long, env = "CHROMASET_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        backgrounds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "CHROMASET_CLASS")]
        class: Option<String>,
        #[arg(long)]
        offset: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        key: Option<String>,
        #[command(flatten)]
        grid: GridFlags,
    },
    /// Score prediction files against ground-truth labels.
    Evaluate {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        iou: Option<f64>,
        /// Where to write the JSON report.
        #[arg(long)]
        report: PathBuf,
        /// Sum precision over every rank instead of only TP ranks.
        #[arg(long)]
        all_ranks: bool,
        /// Settings file; only `iou` is read.
        #[arg(long, env = "CHROMASET_CONFIG")]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GridFlags {
    #[arg(long, env = "CHROMASET_SEED")]
    seed: Option<u64>,
    /// Apply the sigmoid tonal curve to RGB.
    #[arg(long)]
    sigmoid: bool,
    /// Blur the left half with this Gaussian sigma.
    #[arg(long, value_name = "SIGMA")]
    blur: Option<f64>,
    /// Fade alpha linearly from right to left.
    #[arg(long)]
    gradient: bool,
    #[arg(long, value_name = "LO:HI")]
    scale: Option<String>,
    #[arg(long, value_name = "LO:HI")]
    rotate: Option<String>,
    /// Write normalized `class_id cx cy w h` labels.
    #[arg(long)]
    normalized: bool,
    #[arg(long, env = "CHROMASET_WORKERS")]
    workers: Option<usize>,
    /// Stop at the first failed cell.
    #[arg(long)]
    strict: bool,
    /// Write a JSON run summary here.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl GridFlags {
    fn settings(&self) -> Settings {
        Settings {
            seed: self.seed,
            sigmoid: self.sigmoid.then_some(true),
            blur: self.blur,
            gradient: self.gradient.then_some(true),
            scale: self.scale.clone(),
            rotate: self.rotate.clone(),
            normalized: self.normalized.then_some(true),
            workers: self.workers,
            strict: self.strict.then_some(true),
            ..Settings::default()
        }
    }
}

enum Failure {
    Usage(String),
    Data(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.to_string())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

#[derive(Serialize)]
struct RunSummary {
    composites: usize,
    failed: usize,
    entries: usize,
    seed: u64,
}

fn finish_run(manifest: &DatasetManifest, seed: u64, report: Option<&Path>) -> Result<u8, Failure> {
    let summary = RunSummary {
        composites: manifest.succeeded().count(),
        failed: manifest.failed().count(),
        entries: manifest.entries.len(),
        seed,
    };
    println!(
        "{} composites written, {} failed",
        summary.composites, summary.failed
    );
    if let Some(p) = report {
        std::fs::write(p, serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(if summary.failed > 0 { EXIT_PARTIAL } else { 0 })
}

fn run(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::Greenscreen {
            image,
            mask,
            out,
            key,
        } => {
            let params = ChromaParams {
                key_color: cli::parse_rgb(&key).map_err(usage)?,
                ..ChromaParams::default()
            };
            let photo = imagecore::load_image(&image)?;
            let mask = imagecore::load_mask(&mask)?;
            let screened = chromakey::apply_greenscreen(&photo, &mask, &params)?;
            imagecore::save_image(&screened, &out)?;
        }
        Command::Keyout {
            input,
            out,
            offset,
            threshold,
        } => {
            let params = ChromaParams {
                dark_offset: offset,
                alpha_threshold: threshold,
                ..ChromaParams::default()
            };
            params.validate().map_err(usage)?;
            let img = imagecore::load_image(&input)?;
            imagecore::save_image(&chromakey::remove_green(&img, &params), &out)?;
        }
        Command::Compose {
            foregrounds,
            backgrounds,
            out,
            class,
            grid,
        } => {
            chromaset::annotations::validate_class(&class).map_err(usage)?;
            let s = grid.settings();
            let compose = s.compose_config().map_err(usage)?;
            let job = GridJob {
                output: &out,
                class_name: &class,
                compose: &compose,
                label_format: s.label_format(),
                options: s.run_options(),
            };
            let manifest = cli::run_compose(&foregrounds, &backgrounds, &job)?;
            return finish_run(&manifest, compose.rng_seed, grid.report.as_deref());
        }
        Command::Pipeline {
            config,
            images,
            masks,
            backgrounds,
            out,
            class,
            offset,
            threshold,
            key,
            grid,
        } => {
            let flags = Settings {
                images,
                masks,
                backgrounds,
                output: out,
                class,
                dark_offset: offset,
                alpha_threshold: threshold,
                key,
                ..grid.settings()
            };
            let cfg = cli::parse_config(config.as_deref(), flags).map_err(usage)?;
            let manifest = cli::run_pipeline(&cfg)?;
            return finish_run(&manifest, cfg.seed(), grid.report.as_deref());
        }
        Command::Evaluate {
            gt,
            pred,
            iou,
            report,
            all_ranks,
            config,
        } => {
            let file_iou = match &config {
                Some(p) => Settings::from_file(p).map_err(usage)?.iou,
                None => None,
            };
            let threshold = iou.or(file_iou).unwrap_or(cli::DEFAULT_IOU);
            if !(0.0..=1.0).contains(&threshold) {
                return Err(usage(format!("--iou {threshold} outside [0, 1]")));
            }
            let mode = if all_ranks {
                ApMode::AllRanks
            } else {
                ApMode::TpRanks
            };
            let r = detmetrics::evaluate_dirs(&gt, &pred, threshold, mode)?;
            detmetrics::write_report(&r, &report)?;
            for (class, c) in &r.per_class {
                println!(
                    "{class}: AP {:.4}  TP {}  FP {}  FN {}  MR {:.4}  LAMR {:.4}",
                    c.ap, c.tp, c.fp, c.fn_count, c.miss_rate, c.lamr
                );
            }
            println!("mAP {:.4}  LAMR {:.4}  frames {}", r.map, r.lamr, r.frames);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
