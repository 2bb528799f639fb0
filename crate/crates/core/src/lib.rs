//! Synthetic object-detection datasets by chroma-key compositing, and the
//! accuracy metrics used to score detectors trained on them.
//!
//! The generation path is: segmentation mask -> green screen
//! ([`chromakey::apply_greenscreen`]) -> alpha from green distance
//! ([`chromakey::remove_green`]) -> transform, effects and paste onto a
//! cluttered background ([`composer::compose_pair`]) -> label file
//! ([`annotations::write_label`]). [`cli::run_pipeline`] drives it over an
//! `n x m` grid of foregrounds and backgrounds. [`detmetrics`] scores
//! prediction files against labels.

pub mod annotations;
pub mod chromakey;
pub mod cli;
pub mod composer;
pub mod detmetrics;
pub mod imagecore;

pub use annotations::{BoundingBox, DatasetManifest, Detection, Extents};
pub use chromakey::ChromaParams;
pub use composer::{ComposeConfig, Transform};
pub use detmetrics::EvalReport;
pub use imagecore::{MaskImage, RgbaImage};
