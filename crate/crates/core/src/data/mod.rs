//! Hyperspectral scenes: file formats, normalization, PCA, patch sampling,
//! dataset splits, stochastic augmentation and a synthetic scene generator.

mod augment;
mod cube;
mod io;
mod pca;
mod sample;
mod split;
mod synthetic;

pub use augment::{augment, augment_into};
pub use cube::{normalize, HsiCube, LabelMap};
pub use io::{load_cube, load_labels, read_cube, read_labels, save_cube, save_labels, write_cube, write_labels};
pub use pca::{pca_reduce, symmetric_eigen, ReducedCube};
pub use sample::{extract_sample, mirror_index, Sample};
pub use split::{sample_unlabeled, split_dataset, SplitSpec, UnlabeledPool};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticScene};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },
    #[error("label file line {line}: {detail}")]
    LabelFormat { line: usize, detail: String },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("pixel ({row}, {col}) outside {rows}x{cols} image")]
    Bounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
