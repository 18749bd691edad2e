//! CIFAR binary files and PPM images.

use std::fs;
use std::io::Write;
use std::path::Path;

use refaug_core::data::{decode_records, encode_records, Dataset, Image};

use crate::error::{CliError, CliResult};

/// Reads a CIFAR-style binary file (1 label byte + 3x32x32 pixel bytes per
/// record).
pub fn load_cifar_binary(path: &Path, num_classes: usize) -> CliResult<Dataset> {
    load_cifar_files(&[path], num_classes, &path.display().to_string())
}

/// Concatenates several CIFAR binary files into one dataset.
pub fn load_cifar_files<P: AsRef<Path>>(
    paths: &[P],
    num_classes: usize,
    name: &str,
) -> CliResult<Dataset> {
    let mut samples = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
        let part = decode_records(&bytes, num_classes, (3, 32, 32), name)
            .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        samples.extend(part.samples().iter().cloned());
    }
    Ok(Dataset::new(name, num_classes, samples)?)
}

pub fn write_cifar_binary(path: &Path, dataset: &Dataset) -> CliResult<()> {
    let bytes = encode_records(dataset)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Binary PPM (P6). Single-channel images are written as gray RGB.
pub fn ppm_bytes(image: &Image) -> Vec<u8> {
    let (c, h, w) = image.shape();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    let byte = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out.push(byte(image.get(if c == 1 { 0 } else { ch }, y, x)));
            }
        }
    }
    out
}

pub fn write_ppm(path: &Path, image: &Image) -> CliResult<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&ppm_bytes(image))
        .map_err(|e| CliError::io(path, e))
}

/// Parses a P6 file as written by [`ppm_bytes`] (no comments, maxval 255).
pub fn parse_ppm(bytes: &[u8]) -> Option<Image> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return None;
    }
    let w: usize = fields[1].parse().ok()?;
    let h: usize = fields[2].parse().ok()?;
    let data = bytes.get(pos..pos + w * h * 3)?;
    let mut pixels = vec![0.0f32; 3 * h * w];
    for (i, px) in data.chunks(3).enumerate() {
        for c in 0..3 {
            pixels[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Image::new(3, h, w, pixels).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let px: Vec<f32> = (0..3 * 2 * 3).map(|i| i as f32 / 17.0).collect();
        let img = Image::new(3, 2, 3, px).unwrap();
        let bytes = ppm_bytes(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 18);
        let back = parse_ppm(&bytes).unwrap();
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn gray_is_replicated() {
        let img = Image::filled(1, 1, 2, 1.0);
        assert_eq!(&ppm_bytes(&img)[11..], &[255u8; 6]);
    }
}
