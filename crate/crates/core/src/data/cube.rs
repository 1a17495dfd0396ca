use super::{DataError, Result};

/// Hyperspectral raster in band-interleaved-by-pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    rows: usize,
    cols: usize,
    bands: usize,
    values: Vec<f32>,
}

impl HsiCube {
    pub fn new(rows: usize, cols: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(DataError::Param(format!(
                "cube dimensions must be positive, got {rows}x{cols}x{bands}"
            )));
        }
        if values.len() != rows * cols * bands {
            return Err(DataError::Param(format!(
                "{rows}x{cols}x{bands} cube needs {} values, got {}",
                rows * cols * bands,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Param(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            rows,
            cols,
            bands,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Spectrum of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.cols + col) * self.bands;
        &self.values[start..start + self.bands]
    }

    pub fn pixel_f64(&self, row: usize, col: usize) -> Vec<f64> {
        self.pixel(row, col).iter().map(|&v| v as f64).collect()
    }
}

/// Per-pixel class ids; `0` marks unlabeled background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    rows: usize,
    cols: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(rows: usize, cols: usize, labels: Vec<u32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(DataError::Param(format!(
                "label map dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if labels.len() != rows * cols {
            return Err(DataError::Param(format!(
                "{rows}x{cols} label map needs {} labels, got {}",
                rows * cols,
                labels.len()
            )));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.cols + col]
    }

    /// Largest class id present.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Linear indices of every pixel with a non-zero label, in raster order.
    pub fn reference_pixels(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] != 0).collect()
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.rows == cube.rows() && self.cols == cube.cols()
    }
}

/// Maps every band independently onto `[0, 1]` by its min and max.
/// Constant bands become all zeros.
pub fn normalize(cube: &HsiCube) -> HsiCube {
    let bands = cube.bands;
    let mut lo = vec![f64::INFINITY; bands];
    let mut hi = vec![f64::NEG_INFINITY; bands];
    for px in cube.values.chunks_exact(bands) {
        for (b, &v) in px.iter().enumerate() {
            lo[b] = lo[b].min(v as f64);
            hi[b] = hi[b].max(v as f64);
        }
    }
    let values = cube
        .values
        .chunks_exact(bands)
        .flat_map(|px| {
            px.iter().enumerate().map(|(b, &v)| {
                let range = hi[b] - lo[b];
                if range > 0.0 {
                    ((v as f64 - lo[b]) / range) as f32
                } else {
                    0.0
                }
            })
        })
        .collect();
    HsiCube {
        rows: cube.rows,
        cols: cube.cols,
        bands,
        values,
    }
}
