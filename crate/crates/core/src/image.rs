//! 8-bit grayscale image files. Binary PGM (P5) is the exact format; PNG is
//! written alongside on request.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// `round(255·v)` with halves rounded up, clamped to `[0, 255]`.
pub fn to_byte(v: f64) -> u8 {
    if !(v > 0.0) {
        return 0;
    }
    (255.0 * v + 0.5).floor().min(255.0) as u8
}

pub fn from_byte(b: u8) -> f64 {
    f64::from(b) / 255.0
}

/// Snaps every value to the nearest `k/255`.
pub fn quantize(grid: &Grid) -> Grid {
    let values = grid.values().iter().map(|&v| from_byte(to_byte(v))).collect();
    Grid::from_values(grid.width(), grid.height(), values).expect("same shape")
}

pub fn encode_pgm(grid: &Grid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(grid.values().iter().map(|&v| to_byte(v)));
    out
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Parses a binary 8-bit PGM. The error string says what is wrong.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Grid, String> {
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some(b"P5".as_slice()) {
        return Err("not a binary PGM (P5)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let tok = header_token(bytes, &mut pos).ok_or_else(|| format!("missing {what}"))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {what}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != need {
        return Err(format!("expected {need} pixel bytes, found {}", raster.len()));
    }
    let values = raster.iter().map(|&b| from_byte(b)).collect();
    Grid::from_values(width, height, values).map_err(|e| e.to_string())
}

pub fn write_pgm(grid: &Grid, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|reason| Error::Dataset(format!("{}: {reason}", path.display())))
}

pub fn write_png(grid: &Grid, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), grid.width() as u32, grid.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = grid.values().iter().map(|&v| to_byte(v)).collect();
    let io_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut w = enc.write_header().map_err(io_err)?;
    w.write_image_data(&bytes).map_err(io_err)?;
    w.finish().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_examples() {
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(-0.2), 0);
        assert_eq!(to_byte(7.0), 255);
        assert_eq!(to_byte(f64::NAN), 0);
    }

    #[test]
    fn quantized_grids_round_trip_bit_exact() {
        let g = quantize(&Grid::from_fn(9, 7, |i, j| ((i * 7 + j * 13) % 23) as f64 / 22.0));
        let back = decode_pgm(&encode_pgm(&g)).unwrap();
        assert_eq!(back, g);
        for k in 0..=255u8 {
            assert_eq!(to_byte(from_byte(k)), k);
        }
    }

    #[test]
    fn header_comments_and_truncation() {
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend([0, 255, 128, 1]);
        let g = decode_pgm(&bytes).unwrap();
        assert_eq!(g.get(1, 0), 1.0);
        bytes.pop();
        assert!(decode_pgm(&bytes).is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
