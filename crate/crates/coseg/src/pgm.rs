//! Binary PGM (P5) images, used for ground-truth masks and rendered
//! overlays. Masks are 8-bit: 0 is background, any nonzero value is
//! foreground. 16-bit files (maxval > 255) are rejected.

use std::fs;
use std::path::Path;

use coseg_core::tensor::Mask;

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

/// Grayscale 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height);
        Self {
            width,
            height,
            pixels,
        }
    }
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|(offset, msg)| Error::parse_offset(path, offset, msg))
}

/// Reads a P5 file as a binary mask (nonzero is foreground).
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = read_pgm(path)?;
    let bits: Vec<bool> = img.pixels.iter().map(|&p| p != 0).collect();
    Ok(Mask::new(img.width, img.height, bits).expect("image dims consistent"))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, (u64, String)> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err((0, "bad magic, expected \"P5\"".into()));
    }
    pos += 2;
    let width = read_header_number(bytes, &mut pos)?;
    let height = read_header_number(bytes, &mut pos)?;
    let maxval = read_header_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err((
            pos as u64,
            format!("unsupported maxval {maxval}; need 1..=255"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err((pos as u64, "missing whitespace before raster".into()));
    }
    pos += 1;
    let need = width * height;
    if bytes.len() - pos != need {
        return Err((
            pos as u64,
            format!(
                "expected {need} raster bytes for {width}x{height}, found {}",
                bytes.len() - pos
            ),
        ));
    }
    Ok(GrayImage {
        width,
        height,
        pixels: bytes[pos..].to_vec(),
    })
}

/// Parses one whitespace-delimited decimal, skipping `#` comments.
fn read_header_number(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, (u64, String)> {
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
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err((start as u64, "expected a decimal header field".into()));
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).expect("ascii digits");
    text.parse::<usize>()
        .map_err(|e| (start as u64, format!("bad header number: {e}")))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    write_atomic(path, &encode_pgm(img))
}

/// Writes a mask as 0/255 pixels.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let pixels: Vec<u8> = mask
        .pixels()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    write_pgm(path, &GrayImage::new(mask.width, mask.height, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_example() {
        // P5 2x2 with bytes [0,255,0,255] -> mask [[0,1],[0,1]].
        let bytes = b"P5\n2 2\n255\n\x00\xff\x00\xff";
        let img = parse_pgm(bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        let bits: Vec<bool> = img.pixels.iter().map(|&p| p != 0).collect();
        assert_eq!(bits, vec![false, true, false, true]);
    }

    #[test]
    fn nonzero_values_are_foreground() {
        let bytes = b"P5\n2 1\n255\n\x01\x7f";
        let img = parse_pgm(bytes).unwrap();
        assert!(img.pixels.iter().all(|&p| p != 0));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let bytes = b"P5\n# made by a test\n2 1\n255\n\x00\xff";
        let img = parse_pgm(bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
    }

    #[test]
    fn sixteen_bit_maxval_is_rejected() {
        let bytes = b"P5\n1 1\n65535\n\x00\x00";
        let err = parse_pgm(bytes).unwrap_err();
        assert!(err.1.contains("65535"));
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let err = parse_pgm(b"P6\n1 1\n255\n\x00").unwrap_err();
        assert_eq!(err.0, 0);
    }

    #[test]
    fn truncated_raster_reports_counts() {
        let err = parse_pgm(b"P5\n2 2\n255\n\x00\xff").unwrap_err();
        assert!(err.1.contains("expected 4 raster bytes"), "msg: {}", err.1);
    }

    #[test]
    fn encode_parse_round_trip() {
        let img = GrayImage::new(3, 2, vec![0, 10, 255, 7, 0, 128]);
        assert_eq!(parse_pgm(&encode_pgm(&img)).unwrap(), img);
    }
}
