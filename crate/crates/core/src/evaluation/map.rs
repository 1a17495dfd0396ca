use std::io::Write;
use std::path::Path;

use super::{EvalError, Result};
use crate::data::LabelMap;

/// Colour of class `c` is entry `c`; entry 0 is the background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette(pub Vec<[u8; 3]>);

/// Fixed 16-entry table: black background followed by 15 distinct colours.
pub const DEFAULT_PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 160, 0],
    [0, 0, 255],
    [255, 255, 0],
    [255, 0, 255],
    [0, 255, 255],
    [255, 128, 0],
    [128, 0, 255],
    [128, 64, 0],
    [0, 128, 128],
    [255, 160, 192],
    [128, 128, 128],
    [128, 255, 0],
    [0, 64, 128],
    [255, 255, 255],
];

impl Default for Palette {
    fn default() -> Self {
        Self(DEFAULT_PALETTE.to_vec())
    }
}

impl Palette {
    /// Class ids past the end cycle through the non-background entries.
    pub fn color(&self, class: u32) -> [u8; 3] {
        let n = self.0.len();
        if class == 0 || n <= 1 {
            return self.0.first().copied().unwrap_or([0; 3]);
        }
        self.0[1 + (class as usize - 1) % (n - 1)]
    }
}

/// Writes a binary PPM of `predictions` (raster order). With
/// `mask_background`, pixels whose reference label is 0 are drawn black.
pub fn render_map(
    predictions: &[u32],
    labels: &LabelMap,
    palette: &Palette,
    mask_background: bool,
    mut out: impl Write,
) -> Result<()> {
    let (rows, cols) = (labels.rows(), labels.cols());
    if predictions.len() != rows * cols {
        return Err(EvalError::Input(format!(
            "{} predictions for a {rows}x{cols} scene",
            predictions.len()
        )));
    }
    let mut buf = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    buf.reserve(rows * cols * 3);
    for (&p, &truth) in predictions.iter().zip(labels.labels()) {
        let rgb = if mask_background && truth == 0 { [0; 3] } else { palette.color(p) };
        buf.extend_from_slice(&rgb);
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_map(
    predictions: &[u32],
    labels: &LabelMap,
    palette: &Palette,
    mask_background: bool,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    render_map(predictions, labels, palette, mask_background, &mut file)?;
    file.flush()?;
    Ok(())
}
