//! HSC1 cube files and plain-text label maps.
//!
//! HSC1 layout: `b"HSC1"`, then `rows`, `cols`, `bands` as little-endian
//! `u32`, then `rows * cols * bands` little-endian `f32` in
//! band-interleaved-by-pixel order.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, HsiCube, LabelMap, Result};

const MAGIC: &[u8; 4] = b"HSC1";
const HEADER_LEN: usize = 16;

pub fn write_cube<W: Write>(cube: &HsiCube, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    for dim in [cube.rows(), cube.cols(), cube.bands()] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    for v in cube.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_cube(cube, BufWriter::new(file))
}

fn format_err(offset: usize, detail: impl Into<String>) -> DataError {
    DataError::Format {
        offset,
        detail: detail.into(),
    }
}

pub fn read_cube<R: Read>(mut input: R) -> Result<HsiCube> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "file shorter than the 16-byte header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (rows, cols, bands) = (dim(0), dim(1), dim(2));
    if rows == 0 || cols == 0 || bands == 0 {
        return Err(format_err(4, format!("zero dimension in {rows}x{cols}x{bands}")));
    }
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(bands))
        .ok_or_else(|| format_err(4, "dimensions overflow"))?;
    let expected = HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!(
                "truncated payload: header declares {count} floats ({rows}x{cols}x{bands}), found {} bytes of payload",
                bytes.len() - HEADER_LEN
            ),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, "trailing bytes after payload"));
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(format_err(HEADER_LEN + 4 * i, format!("non-finite value {v}")));
        }
        values.push(v);
    }
    HsiCube::new(rows, cols, bands, values)
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    read_cube(fs::File::open(path)?)
}

/// First line `rows cols`, then one line of space-separated labels per row.
pub fn write_labels<W: Write>(map: &LabelMap, mut out: W) -> Result<()> {
    writeln!(out, "{} {}", map.rows(), map.cols())?;
    for row in map.labels().chunks_exact(map.cols()) {
        let line: Vec<String> = row.iter().map(u32::to_string).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_labels(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_labels(map, BufWriter::new(file))
}

pub fn read_labels<R: Read>(mut input: R) -> Result<LabelMap> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, detail: String| DataError::LabelFormat {
        line: line + 1,
        detail,
    };
    let (hline, header) = lines.next().ok_or_else(|| bad(0, "empty label file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(hline, format!("bad dimension {t:?}"))))
        .collect::<Result<_>>()?;
    let [rows, cols] = dims[..] else {
        return Err(bad(hline, format!("expected `rows cols`, got {header:?}")));
    };
    let mut labels = Vec::with_capacity(rows * cols);
    let mut seen_rows = 0;
    for (ln, line) in lines {
        let row: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(ln, format!("bad label {t:?}"))))
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(bad(ln, format!("expected {cols} labels, got {}", row.len())));
        }
        labels.extend(row);
        seen_rows += 1;
    }
    if seen_rows != rows {
        return Err(bad(hline, format!("header declares {rows} rows, found {seen_rows}")));
    }
    LabelMap::new(rows, cols, labels)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    read_labels(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_of(cube: &HsiCube) -> Vec<u8> {
        let mut buf = Vec::new();
        write_cube(cube, &mut buf).unwrap();
        buf
    }

    #[test]
    fn single_value_round_trip() {
        let cube = HsiCube::new(1, 1, 1, vec![7.0]).unwrap();
        let buf = bytes_of(&cube);
        assert_eq!(buf.len(), 20);
        assert_eq!(&buf[..4], b"HSC1");
        assert_eq!(read_cube(&buf[..]).unwrap(), cube);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let cube = HsiCube::new(2, 2, 3, (0..12).map(|i| i as f32).collect()).unwrap();
        let buf = bytes_of(&cube);
        // 11 floats where the header promises 12
        let err = read_cube(&buf[..buf.len() - 4]).unwrap_err();
        assert!(matches!(err, DataError::Format { offset: 60, .. }), "{err}");
        let err = read_cube(&buf[..30]).unwrap_err();
        assert!(matches!(err, DataError::Format { .. }));
    }

    #[test]
    fn bad_magic_and_nan() {
        let cube = HsiCube::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let mut buf = bytes_of(&cube);
        buf[0] = b'X';
        assert!(matches!(read_cube(&buf[..]).unwrap_err(), DataError::Format { offset: 0, .. }));

        let mut buf = bytes_of(&cube);
        buf[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_cube(&buf[..]).unwrap_err(), DataError::Format { offset: 20, .. }));
    }

    #[test]
    fn labels_round_trip_and_errors() {
        let map = LabelMap::new(2, 3, vec![0, 1, 2, 3, 0, 1]).unwrap();
        let mut buf = Vec::new();
        write_labels(&map, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "2 3\n0 1 2\n3 0 1\n");
        assert_eq!(read_labels(&buf[..]).unwrap(), map);

        assert!(read_labels("2 2\n1 1\n".as_bytes()).is_err());
        assert!(read_labels("1 2\n1 x\n".as_bytes()).is_err());
        assert!(read_labels("1 2\n1 1 1\n".as_bytes()).is_err());
    }
}
