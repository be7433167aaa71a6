//! 8-bit binary PGM (P5).

use std::fs;
use std::path::Path;

use cervreg_core::GrayImage;

use crate::error::{Error, Result};

/// Encodes an image with intensities mapped linearly onto `0..=255`.
pub fn encode(img: &GrayImage) -> Vec<u8> {
    let (w, h) = img.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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

/// Decodes a P5 image with `maxval <= 255`.
pub fn decode(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0;
    if next_token(bytes, &mut pos) != Some(b"P5".as_slice()) {
        return Err("missing P5 magic".into());
    }
    let mut number = |what: &str| -> std::result::Result<usize, String> {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| format!("missing {what}"))?;
        std::str::from_utf8(tok).ok().and_then(|s| s.parse().ok()).ok_or_else(|| format!("invalid {what}"))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes.get(pos..pos + w * h).ok_or("truncated raster")?;
    let scale = maxval as f32;
    GrayImage::new(w, h, raster.iter().map(|&b| (b as f32 / scale).min(1.0)).collect()).map_err(|e| e.to_string())
}

pub fn read(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::format(path, msg))
}

pub fn write(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

/// Every `*.pgm` file in `dir`, sorted by file name.
pub fn list(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact_on_byte_levels() {
        let img = GrayImage::from_fn(7, 3, |x, y| ((x * 31 + y * 17) % 256) as f32 / 255.0);
        let back = decode(&encode(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn header_comments_and_maxval() {
        let mut bytes = b"P5\n# made by hand\n2 1\n# max\n100\n".to_vec();
        bytes.extend([0u8, 100]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }
}
