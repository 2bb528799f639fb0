//! Label and prediction TXT files, and the dataset manifest.
//!
//! A label line is `class x_min y_min x_max y_max` with absolute, inclusive
//! pixel corners. A prediction line inserts a confidence after the class:
//! `class confidence x_min y_min x_max y_max`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}:{line}: manifest schema mismatch: {reason}", path.display())]
    Schema {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("invalid box: {0}")]
    InvalidBox(String),
}

/// Inclusive pixel corners, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Extents {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl Extents {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, AnnotationError> {
        if x_min > x_max || y_min > y_max {
            return Err(AnnotationError::InvalidBox(format!(
                "inverted extent ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> u64 {
        u64::from(self.x_max - self.x_min) + 1
    }

    pub fn height(&self) -> u64 {
        u64::from(self.y_max - self.y_min) + 1
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: u32, dy: u32) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// A labelled ground-truth box.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub class_name: String,
    pub extents: Extents,
}

impl BoundingBox {
    pub fn new(class_name: impl Into<String>, extents: Extents) -> Result<Self, AnnotationError> {
        let class_name = class_name.into();
        validate_class(&class_name)?;
        Ok(Self {
            class_name,
            extents,
        })
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.extents;
        write!(
            f,
            "{} {} {} {} {}",
            self.class_name, e.x_min, e.y_min, e.x_max, e.y_max
        )
    }
}

/// A predicted box with its detector score.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Result<Self, AnnotationError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(AnnotationError::InvalidBox(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self { bbox, confidence })
    }
}

pub fn validate_class(name: &str) -> Result<(), AnnotationError> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(AnnotationError::InvalidBox(format!(
            "class name {name:?} must be a non-empty token without whitespace"
        )));
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnnotationError + '_ {
    move |source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one `class x_min y_min x_max y_max` line per box.
pub fn write_label(boxes: &[BoundingBox], path: impl AsRef<Path>) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    let mut out = String::new();
    for b in boxes {
        out.push_str(&b.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Normalized centre-format line: `class_id cx cy w h`, each in [0, 1]
/// relative to the image size. Inclusive extents map to the pixel span
/// `[x_min, x_max + 1)`.
pub fn normalized_line(extents: &Extents, class_id: usize, image_w: u32, image_h: u32) -> String {
    let (iw, ih) = (f64::from(image_w), f64::from(image_h));
    let w = extents.width() as f64;
    let h = extents.height() as f64;
    let cx = f64::from(extents.x_min) + w / 2.0;
    let cy = f64::from(extents.y_min) + h / 2.0;
    format!(
        "{class_id} {:.6} {:.6} {:.6} {:.6}",
        cx / iw,
        cy / ih,
        w / iw,
        h / ih
    )
}

fn parse_coord(tok: &str, what: &str) -> Result<u32, String> {
    tok.parse::<u32>()
        .map_err(|_| format!("{what} {tok:?} is not a non-negative integer"))
}

fn parse_extents(toks: &[&str]) -> Result<Extents, String> {
    let x_min = parse_coord(toks[0], "x_min")?;
    let y_min = parse_coord(toks[1], "y_min")?;
    let x_max = parse_coord(toks[2], "x_max")?;
    let y_max = parse_coord(toks[3], "y_max")?;
    if x_min > x_max {
        return Err(format!("x_min {x_min} > x_max {x_max}"));
    }
    if y_min > y_max {
        return Err(format!("y_min {y_min} > y_max {y_max}"));
    }
    Ok(Extents {
        x_min,
        y_min,
        x_max,
        y_max,
    })
}

fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &[&str]) -> Result<(), String>,
) -> Result<(), AnnotationError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        f(i + 1, &toks).map_err(|reason| AnnotationError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        })?;
    }
    Ok(())
}

/// Reads a label file. Blank lines are skipped.
pub fn parse_label(path: impl AsRef<Path>) -> Result<Vec<BoundingBox>, AnnotationError> {
    let mut boxes = Vec::new();
    for_each_line(path.as_ref(), |_, toks| {
        if toks.len() != 5 {
            return Err(format!("expected 5 fields, found {}", toks.len()));
        }
        boxes.push(BoundingBox {
            class_name: toks[0].to_string(),
            extents: parse_extents(&toks[1..])?,
        });
        Ok(())
    })?;
    Ok(boxes)
}

/// Reads a prediction file. Line order is preserved; ranking happens later.
pub fn parse_prediction(path: impl AsRef<Path>) -> Result<Vec<Detection>, AnnotationError> {
    let mut dets = Vec::new();
    for_each_line(path.as_ref(), |_, toks| {
        if toks.len() != 6 {
            return Err(format!("expected 6 fields, found {}", toks.len()));
        }
        let confidence: f64 = toks[1]
            .parse()
            .map_err(|_| format!("confidence {:?} is not a number", toks[1]))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(format!("confidence {confidence} outside [0, 1]"));
        }
        dets.push(Detection {
            bbox: BoundingBox {
                class_name: toks[0].to_string(),
                extents: parse_extents(&toks[2..])?,
            },
            confidence,
        });
        Ok(())
    })?;
    Ok(dets)
}

/// Geometry applied to a foreground before pasting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRecord {
    pub rotation_deg: f64,
    pub scale: f64,
    pub translate: [u32; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Ok,
    Failed,
}

/// One generated composite (or a failed attempt at one).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_path: String,
    pub label_path: String,
    pub fg_source: String,
    pub bg_source: String,
    pub seed: u64,
    pub transform: Option<TransformRecord>,
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn succeeded(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.status == EntryStatus::Ok)
    }

    pub fn failed(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.status == EntryStatus::Failed)
    }
}

/// Writes the manifest as JSON Lines, one entry per line.
pub fn write_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for e in &m.entries {
        let line = serde_json::to_string(e).expect("manifest entries always serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, AnnotationError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| AnnotationError::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        entries.push(entry);
    }
    Ok(DatasetManifest { entries })
}
