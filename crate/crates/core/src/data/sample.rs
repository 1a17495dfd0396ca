use super::{DataError, HsiCube, ReducedCube, Result};
use crate::tensor::Tensor;

/// Network input for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub row: usize,
    pub col: usize,
    /// Band vector of the normalized cube, shape `[bands]`.
    pub spectral: Tensor,
    /// Window of PCA scores, shape `[w, w, components]`.
    pub patch: Tensor,
    /// Class id in `1..=k`.
    pub label: Option<u32>,
}

/// Folds an out-of-range index back into `0..len` by mirroring about the
/// image edge, repeating the edge pixel (`-1 -> 0`, `len -> len - 1`).
pub fn mirror_index(i: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let m = i.rem_euclid(period) as usize;
    if m < len {
        m
    } else {
        2 * len - 1 - m
    }
}

/// Builds the sample for pixel `(row, col)`.
///
/// The pixel sits at window position `(w / 2, w / 2)`.
pub fn extract_sample(
    cube: &HsiCube,
    reduced: &ReducedCube,
    row: usize,
    col: usize,
    window: usize,
    label: Option<u32>,
) -> Result<Sample> {
    let (rows, cols) = (cube.rows(), cube.cols());
    if row >= rows || col >= cols {
        return Err(DataError::Bounds {
            row,
            col,
            rows,
            cols,
        });
    }
    if reduced.rows() != rows || reduced.cols() != cols {
        return Err(DataError::Param(format!(
            "reduced cube {}x{} does not match cube {rows}x{cols}",
            reduced.rows(),
            reduced.cols()
        )));
    }
    if window == 0 {
        return Err(DataError::Param("window size must be positive".into()));
    }
    let p = reduced.components();
    let half = (window / 2) as isize;
    let mut patch = Vec::with_capacity(window * window * p);
    for dy in 0..window as isize {
        let r = mirror_index(row as isize - half + dy, rows);
        for dx in 0..window as isize {
            let c = mirror_index(col as isize - half + dx, cols);
            patch.extend_from_slice(reduced.pixel_scores(r, c));
        }
    }
    Ok(Sample {
        row,
        col,
        spectral: Tensor::vector(cube.pixel_f64(row, col)),
        patch: Tensor::new(vec![window, window, p], patch).expect("patch shape"),
        label,
    })
}
