//! Images, fixation records and their conversion into patch sequences.

mod fixation;
mod image;
mod io;
mod sequence;
mod synth;

pub use fixation::{parse_fixation_file, parse_fixation_jsonl, Fixation, FixationRecord};
pub use image::{parse_pgm, write_pgm, ImageGray};
pub use io::{load_dataset, save_dataset};
pub use sequence::{assign_patches, dedup_first_visit, unvisited_set, FixationSequence, GridSpec};
pub use synth::{
    brightest_cell, gaze_order, left_half_label, split_dataset, synth_world, synth_world_with, BlobLayout, OrderRule,
    SynthParams, SyntheticDataset,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("not a PGM file: magic {0:?}")]
    PgmMagic(String),
    #[error("malformed PGM header: {0}")]
    PgmHeader(String),
    #[error("PGM pixel data truncated: expected {expected} values, found {got}")]
    PgmTruncated { expected: usize, got: usize },
    #[error("PGM pixel count mismatch: header declares {expected}, data holds {got}")]
    PgmPixelCount { expected: usize, got: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("{width}x{height} image does not tile a {rows}x{cols} grid")]
    GridMismatch {
        width: usize,
        height: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid grid {rows}x{cols}")]
    InvalidGrid { rows: usize, cols: usize },
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("missing key {0:?}")]
    MissingKey(&'static str),
    #[error("fixation {index}: {axis} = {value} outside [0, 1]")]
    CoordinateOutOfRange {
        index: usize,
        axis: &'static str,
        value: f64,
    },
    #[error("fixation {index}: duration {value} is not positive")]
    NonPositiveDuration { index: usize, value: f64 },
    #[error("record {0:?} has no fixations")]
    EmptyRecord(String),
    #[error("fixation sequence is empty")]
    EmptySequence,
    #[error("invalid fixation sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("line {line}: {source}")]
    AtLine { line: usize, source: Box<DataError> },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("I/O error: {0}")]
    Io(String),
}
