//! Plain-text and image outputs: row-major CSV grids that round-trip
//! exactly, binary 16-bit PGM previews, and SHA-256 file checksums.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lensless_core::{ImageGrid, Shape};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// CSV text for a row-major grid. The first line carries the dimensions;
/// values use the shortest representation that parses back bit-exactly.
pub fn grid_csv(shape: Shape, values: &[f64]) -> String {
    let mut out = format!("# width={} height={}\n", shape.width, shape.height);
    for row in values.chunks(shape.width) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").expect("write to String");
        }
        out.push('\n');
    }
    out
}

pub fn write_grid_csv(path: &Path, shape: Shape, values: &[f64]) -> Result<()> {
    write_file(path, grid_csv(shape, values).as_bytes())
}

/// Parse a grid written by [`grid_csv`].
pub fn parse_grid_csv(text: &str) -> Result<(Shape, Vec<f64>)> {
    let bad = |m: &str| CliError::Config(format!("malformed grid CSV: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    let mut width = None;
    let mut height = None;
    for field in header.trim_start_matches('#').split_whitespace() {
        match field.split_once('=') {
            Some(("width", w)) => width = w.parse().ok(),
            Some(("height", h)) => height = h.parse().ok(),
            _ => {}
        }
    }
    let shape = match (width, height) {
        (Some(w), Some(h)) => Shape::new(w, h),
        _ => return Err(bad("header must give width and height")),
    };
    let mut values = Vec::with_capacity(shape.len());
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| bad(&e.to_string())))
            .collect::<Result<_>>()?;
        if row.len() != shape.width {
            return Err(bad("row length does not match width"));
        }
        values.extend(row);
    }
    if values.len() != shape.len() {
        return Err(bad("row count does not match height"));
    }
    Ok((shape, values))
}

pub fn read_grid_csv(path: &Path) -> Result<ImageGrid> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (shape, values) = parse_grid_csv(&text)?;
    Ok(ImageGrid::new(shape.width, shape.height, values)?)
}

/// Binary P5 PGM with 16-bit big-endian samples, linearly scaled so the
/// maximum maps to 65535. Returns the image bytes and the intensity per
/// grey level (0 for an all-zero grid).
pub fn pgm16(shape: Shape, values: &[f64]) -> (Vec<u8>, f64) {
    let max = values.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{} {}\n65535\n", shape.width, shape.height).into_bytes();
    out.reserve(values.len() * 2);
    for &v in values {
        let level = if max > 0.0 {
            (v.max(0.0) / max * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    let per_level = if max > 0.0 { max / 65535.0 } else { 0.0 };
    (out, per_level)
}

pub fn write_pgm(path: &Path, shape: Shape, values: &[f64]) -> Result<f64> {
    let (bytes, scale) = pgm16(shape, values);
    write_file(path, &bytes)?;
    Ok(scale)
}

pub fn cross_section_csv(values: &[f64]) -> String {
    let mut out = String::from("column,value\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v:?}").expect("write to String");
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_exactly() {
        let values = vec![
            0.1,
            1.0 / 3.0,
            1e-300,
            12345.678901234567,
            0.0,
            f64::MIN_POSITIVE,
        ];
        let shape = Shape::new(3, 2);
        let text = grid_csv(shape, &values);
        assert!(text.starts_with("# width=3 height=2\n"));
        let (s, parsed) = parse_grid_csv(&text).unwrap();
        assert_eq!(s, shape);
        assert_eq!(
            parsed.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_grid_csv("").is_err());
        assert!(parse_grid_csv("# width=2 height=1\n1.0\n").is_err());
        assert!(parse_grid_csv("# width=1 height=2\n1.0\n").is_err());
        assert!(parse_grid_csv("# width=1 height=1\nabc\n").is_err());
    }

    #[test]
    fn pgm_layout() {
        let (bytes, scale) = pgm16(Shape::new(2, 1), &[0.5, 2.0]);
        let header = b"P5\n2 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let body = &bytes[header.len()..];
        assert_eq!(body, &[0x40, 0x00, 0xff, 0xff]);
        assert_eq!(scale, 2.0 / 65535.0);
        let (bytes, scale) = pgm16(Shape::new(1, 1), &[0.0]);
        assert_eq!(&bytes[bytes.len() - 2..], &[0, 0]);
        assert_eq!(scale, 0.0);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
