//! Batch orchestration: mask-driven green-screening and keying of `n`
//! photos, then composition of every keyed object onto each of `m`
//! backgrounds, with labels and a manifest for all `n * m` cells.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::annotations::{
    self, BoundingBox, DatasetManifest, EntryStatus, ManifestEntry,
};
use crate::chromakey::{self, ChromaParams};
use crate::composer::{self, ComposeConfig, Effects, Range};
use crate::imagecore::{self, RgbaImage};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const KEYED_DIR: &str = "keyed";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {reason}", path.display())]
    Parse { path: PathBuf, reason: String },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
    #[error("malformed {key} {value:?}: {reason}")]
    Malformed {
        key: &'static str,
        value: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Optional settings, shared by the config file and command-line flags.
/// Flags win over the file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub images: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub backgrounds: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub class: Option<String>,
    pub seed: Option<u64>,
    /// `LO:HI`
    pub scale: Option<String>,
    /// `LO:HI`, degrees
    pub rotate: Option<String>,
    pub sigmoid: Option<bool>,
    pub sigmoid_cutoff: Option<f64>,
    pub sigmoid_gain: Option<f64>,
    /// Blur sigma; setting it enables the blur.
    pub blur: Option<f64>,
    pub blur_fraction: Option<f64>,
    pub gradient: Option<bool>,
    pub dark_offset: Option<f64>,
    pub alpha_threshold: Option<f64>,
    /// `R,G,B`
    pub key: Option<String>,
    pub iou: Option<f64>,
    pub workers: Option<usize>,
    pub strict: Option<bool>,
    pub normalized: Option<bool>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),* $(,)?) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    /// Reads a TOML `key = value` file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            reason: e.message().to_string(),
        })
    }

    /// `self` with every unset field taken from `base`.
    pub fn over(self, base: Settings) -> Settings {
        let top = self;
        overlay!(base, top; images, masks, backgrounds, output, class, seed, scale, rotate,
            sigmoid, sigmoid_cutoff, sigmoid_gain, blur, blur_fraction, gradient, dark_offset,
            alpha_threshold, key, iou, workers, strict, normalized)
    }

    pub fn chroma_params(&self) -> Result<ChromaParams, ConfigError> {
        let d = ChromaParams::default();
        let p = ChromaParams {
            dark_offset: self.dark_offset.unwrap_or(d.dark_offset),
            alpha_threshold: self.alpha_threshold.unwrap_or(d.alpha_threshold),
            key_color: match &self.key {
                Some(k) => parse_rgb(k)?,
                None => d.key_color,
            },
            ..d
        };
        p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(p)
    }

    pub fn compose_config(&self) -> Result<ComposeConfig, ConfigError> {
        let d = ComposeConfig::default();
        let cfg = ComposeConfig {
            rng_seed: self.seed.unwrap_or(d.rng_seed),
            scale_range: match &self.scale {
                Some(s) => parse_range("scale", s)?,
                None => d.scale_range,
            },
            rotation_range: match &self.rotate {
                Some(s) => parse_range("rotate", s)?,
                None => d.rotation_range,
            },
            effects: Effects {
                sigmoid: self.sigmoid.unwrap_or(false),
                blur: self.blur.is_some(),
                alpha_gradient: self.gradient.unwrap_or(false),
            },
            sigmoid_cutoff: self.sigmoid_cutoff.unwrap_or(d.sigmoid_cutoff),
            sigmoid_gain: self.sigmoid_gain.unwrap_or(d.sigmoid_gain),
            blur_sigma: self.blur.unwrap_or(d.blur_sigma),
            blur_fraction: self.blur_fraction.unwrap_or(d.blur_fraction),
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn label_format(&self) -> LabelFormat {
        if self.normalized.unwrap_or(false) {
            LabelFormat::NormalizedCenter
        } else {
            LabelFormat::Corners
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            strict: self.strict.unwrap_or(false),
        }
    }
}

/// Parses `LO:HI`.
pub fn parse_range(key: &'static str, s: &str) -> Result<Range, ConfigError> {
    let bad = |reason: &str| ConfigError::Malformed {
        key,
        value: s.to_string(),
        reason: reason.to_string(),
    };
    let (lo, hi) = s.split_once(':').ok_or_else(|| bad("expected LO:HI"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad("LO is not a number"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad("HI is not a number"))?;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(bad("need finite LO <= HI"));
    }
    Ok(Range::new(lo, hi))
}

/// Parses `R,G,B`.
pub fn parse_rgb(s: &str) -> Result<[u8; 3], ConfigError> {
    let bad = |reason: &str| ConfigError::Malformed {
        key: "key",
        value: s.to_string(),
        reason: reason.to_string(),
    };
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad("expected R,G,B"));
    }
    let mut rgb = [0u8; 3];
    for (slot, p) in rgb.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|_| bad("channels must be integers in 0..=255"))?;
    }
    Ok(rgb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelFormat {
    /// `class x_min y_min x_max y_max`, absolute inclusive pixels.
    #[default]
    Corners,
    /// `class_id cx cy w h`, normalized; class ids listed in `classes.txt`.
    NormalizedCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// `None` uses the available parallelism.
    pub workers: Option<usize>,
    /// Abort on the first failed cell.
    pub strict: bool,
}

/// Fully resolved settings for a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub images: PathBuf,
    pub masks: PathBuf,
    pub backgrounds: PathBuf,
    pub output: PathBuf,
    pub class_name: String,
    pub compose: ComposeConfig,
    pub chroma: ChromaParams,
    pub iou_threshold: f64,
    pub label_format: LabelFormat,
    pub options: RunOptions,
}

impl PipelineConfig {
    pub fn seed(&self) -> u64 {
        self.compose.rng_seed
    }
}

pub const DEFAULT_IOU: f64 = 0.5;
pub const DEFAULT_CLASS: &str = "object";

/// Resolves a config file (optional) and flag overrides into a
/// [`PipelineConfig`].
pub fn parse_config(file: Option<&Path>, flags: Settings) -> Result<PipelineConfig, ConfigError> {
    let base = match file {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    let s = flags.over(base);
    let class_name = s.class.clone().unwrap_or_else(|| DEFAULT_CLASS.to_string());
    annotations::validate_class(&class_name).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let iou_threshold = s.iou.unwrap_or(DEFAULT_IOU);
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(ConfigError::Invalid(format!("iou {iou_threshold} outside [0, 1]")));
    }
    Ok(PipelineConfig {
        images: s.images.clone().ok_or(ConfigError::Missing("images"))?,
        masks: s.masks.clone().ok_or(ConfigError::Missing("masks"))?,
        backgrounds: s.backgrounds.clone().ok_or(ConfigError::Missing("backgrounds"))?,
        output: s.output.clone().ok_or(ConfigError::Missing("output"))?,
        class_name,
        compose: s.compose_config()?,
        chroma: s.chroma_params()?,
        iou_threshold,
        label_format: s.label_format(),
        options: s.run_options(),
    })
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{} contains no PNG files", .0.display())]
    EmptyDir(PathBuf),
    #[error("no mask for image {stem}: expected {}", expected.display())]
    MissingMask { stem: String, expected: PathBuf },
    #[error("cell {fg} x {bg} failed: {reason}")]
    CellFailed { fg: String, bg: String, reason: String },
    #[error(transparent)]
    Image(#[from] imagecore::ImageError),
    #[error(transparent)]
    Annotation(#[from] annotations::AnnotationError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// A named PNG source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub stem: String,
    pub path: PathBuf,
}

impl Source {
    fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.stem.clone())
    }
}

/// `*.png` files of `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<Source>, PipelineError> {
    let rd = fs::read_dir(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry
            .map_err(|source| PipelineError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(Source {
                    stem: stem.to_string(),
                    path: path.clone(),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(PipelineError::EmptyDir(dir.to_path_buf()));
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Name shared by a composite and its label, without extension.
pub fn cell_stem(fg: &str, bg: &str) -> String {
    format!("{fg}__{bg}")
}

/// Everything `compose_grid` needs besides the sources.
#[derive(Debug, Clone)]
pub struct GridJob<'a> {
    pub output: &'a Path,
    pub class_name: &'a str,
    pub compose: &'a ComposeConfig,
    pub label_format: LabelFormat,
    pub options: RunOptions,
}

fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, PipelineError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| PipelineError::Pool(e.to_string()))
}

/// Composes every foreground onto every background.
///
/// `prepare(i)` yields the keyed foreground for `fgs[i]`. Cells run on a
/// worker pool; each draws from its own generator keyed by
/// `(seed, fg index, bg index)`, so output bytes do not depend on the worker
/// count. The manifest lists cells in (foreground, background) order.
pub fn compose_grid<F>(
    fgs: &[Source],
    bgs: &[Source],
    job: &GridJob<'_>,
    prepare: F,
) -> Result<DatasetManifest, PipelineError>
where
    F: Fn(usize) -> Result<RgbaImage, String> + Sync,
{
    fs::create_dir_all(job.output).map_err(|source| PipelineError::Io {
        path: job.output.to_path_buf(),
        source,
    })?;
    if job.label_format == LabelFormat::NormalizedCenter {
        let p = job.output.join("classes.txt");
        fs::write(&p, format!("{}\n", job.class_name))
            .map_err(|source| PipelineError::Io { path: p, source })?;
    }

    let backgrounds: Vec<Result<RgbaImage, String>> = bgs
        .iter()
        .map(|b| imagecore::load_image(&b.path).map_err(|e| e.to_string()))
        .collect();
    let abort = AtomicBool::new(false);

    let pool = build_pool(job.options.workers)?;
    let rows: Vec<Vec<ManifestEntry>> = pool.install(|| {
        (0..fgs.len())
            .into_par_iter()
            .map(|fi| {
                let fg = if abort.load(Ordering::Relaxed) {
                    Err("aborted".to_string())
                } else {
                    prepare(fi)
                };
                (0..bgs.len())
                    .into_par_iter()
                    .map(|bi| {
                        let outcome = if abort.load(Ordering::Relaxed) {
                            Err("aborted after an earlier failure".to_string())
                        } else {
                            match (&fg, &backgrounds[bi]) {
                                (Err(e), _) => Err(e.clone()),
                                (_, Err(e)) => Err(e.clone()),
                                (Ok(fg), Ok(bg)) => run_cell(fg, bg, fi, bi, fgs, bgs, job),
                            }
                        };
                        if outcome.is_err() && job.options.strict {
                            abort.store(true, Ordering::Relaxed);
                        }
                        manifest_entry(&fgs[fi], &bgs[bi], job, outcome)
                    })
                    .collect()
            })
            .collect()
    });

    let manifest = DatasetManifest {
        entries: rows.into_iter().flatten().collect(),
    };
    if job.options.strict {
        if let Some(e) = manifest.failed().find(|e| {
            e.error.as_deref().is_some_and(|m| !m.starts_with("aborted"))
        }) {
            return Err(PipelineError::CellFailed {
                fg: e.fg_source.clone(),
                bg: e.bg_source.clone(),
                reason: e.error.clone().unwrap_or_default(),
            });
        }
    }
    for e in manifest.failed() {
        log::warn!(
            "{} x {}: {}",
            e.fg_source,
            e.bg_source,
            e.error.as_deref().unwrap_or("failed")
        );
    }
    annotations::write_manifest(&manifest, job.output.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn run_cell(
    fg: &RgbaImage,
    bg: &RgbaImage,
    fi: usize,
    bi: usize,
    fgs: &[Source],
    bgs: &[Source],
    job: &GridJob<'_>,
) -> Result<composer::Transform, String> {
    let mut rng = composer::cell_rng(job.compose.rng_seed, fi as u32, bi as u32);
    let c = composer::compose_pair(fg, bg, job.compose, &mut rng).map_err(|e| e.to_string())?;
    let stem = cell_stem(&fgs[fi].stem, &bgs[bi].stem);
    imagecore::save_image(&c.image, job.output.join(format!("{stem}.png")))
        .map_err(|e| e.to_string())?;
    let label_path = job.output.join(format!("{stem}.txt"));
    match job.label_format {
        LabelFormat::Corners => {
            let b = BoundingBox::new(job.class_name, c.extents).map_err(|e| e.to_string())?;
            annotations::write_label(&[b], &label_path).map_err(|e| e.to_string())?;
        }
        LabelFormat::NormalizedCenter => {
            let (w, h) = c.image.dimensions();
            let line = annotations::normalized_line(&c.extents, 0, w, h);
            fs::write(&label_path, line + "\n").map_err(|e| e.to_string())?;
        }
    }
    Ok(c.transform)
}

fn manifest_entry(
    fg: &Source,
    bg: &Source,
    job: &GridJob<'_>,
    outcome: Result<composer::Transform, String>,
) -> ManifestEntry {
    let stem = cell_stem(&fg.stem, &bg.stem);
    let (transform, status, error) = match outcome {
        Ok(t) => (Some(t.record()), EntryStatus::Ok, None),
        Err(e) => (None, EntryStatus::Failed, Some(e)),
    };
    ManifestEntry {
        image_path: format!("{stem}.png"),
        label_path: format!("{stem}.txt"),
        fg_source: fg.file_name(),
        bg_source: bg.file_name(),
        seed: job.compose.rng_seed,
        transform,
        status,
        error,
    }
}

/// Composes already-keyed foreground PNGs onto backgrounds.
pub fn run_compose(
    fg_dir: &Path,
    bg_dir: &Path,
    job: &GridJob<'_>,
) -> Result<DatasetManifest, PipelineError> {
    let fgs = list_pngs(fg_dir)?;
    let bgs = list_pngs(bg_dir)?;
    compose_grid(&fgs, &bgs, job, |i| {
        imagecore::load_image(&fgs[i].path).map_err(|e| e.to_string())
    })
}

/// Green-screens a photo with its mask and keys the green back out.
pub fn key_foreground(
    photo: &Path,
    mask: &Path,
    params: &ChromaParams,
) -> Result<RgbaImage, String> {
    let photo = imagecore::load_image(photo).map_err(|e| e.to_string())?;
    let mask = imagecore::load_mask(mask).map_err(|e| e.to_string())?;
    let screened = chromakey::apply_greenscreen(&photo, &mask, params).map_err(|e| e.to_string())?;
    Ok(chromakey::remove_green(&screened, params))
}

/// Full run: for each of the `n` photos, green-screen with its same-stem
/// mask and key out the green (saved under `keyed/`); then compose onto each
/// of the `m` backgrounds. Failed cells are recorded in the manifest unless
/// the run is strict.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<DatasetManifest, PipelineError> {
    let images = list_pngs(&cfg.images)?;
    let backgrounds = list_pngs(&cfg.backgrounds)?;
    let masks: Vec<PathBuf> = images
        .iter()
        .map(|img| {
            let expected = cfg.masks.join(format!("{}.png", img.stem));
            if expected.is_file() {
                Ok(expected)
            } else {
                Err(PipelineError::MissingMask {
                    stem: img.stem.clone(),
                    expected,
                })
            }
        })
        .collect::<Result<_, _>>()?;

    let keyed_dir = cfg.output.join(KEYED_DIR);
    fs::create_dir_all(&keyed_dir).map_err(|source| PipelineError::Io {
        path: keyed_dir.clone(),
        source,
    })?;

    let job = GridJob {
        output: &cfg.output,
        class_name: &cfg.class_name,
        compose: &cfg.compose,
        label_format: cfg.label_format,
        options: cfg.options,
    };
    compose_grid(&images, &backgrounds, &job, |i| {
        let keyed = key_foreground(&images[i].path, &masks[i], &cfg.chroma)?;
        imagecore::save_image(&keyed, keyed_dir.join(format!("{}.png", images[i].stem)))
            .map_err(|e| e.to_string())?;
        Ok(keyed)
    })
}

/// Row-major list of `(fg index, bg index)` cells for an `n x m` grid.
pub fn grid_cells(n: usize, m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |f| (0..m).map(move |b| (f, b)))
}
