//! CIFAR-10 binary record codec.
//!
//! A record is one label byte followed by the image bytes in planar order
//! (all red, then all green, then all blue; row-major inside a plane). CIFAR
//! itself is 3x32x32, giving 3073-byte records; the same layout is used for
//! other image shapes when exporting synthetic data.

use alloc::format;
use alloc::vec::Vec;

use super::{one_hot, Dataset, Image, Sample};
use crate::{Error, Result};

pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;

/// Decodes CIFAR-10 binary records (3x32x32 images).
pub fn decode_cifar(bytes: &[u8], num_classes: usize, name: &str) -> Result<Dataset> {
    decode_records(bytes, num_classes, (3, 32, 32), name)
}

/// Decodes records of `1 + c*h*w` bytes; pixel value = byte / 255.
pub fn decode_records(
    bytes: &[u8],
    num_classes: usize,
    shape: (usize, usize, usize),
    name: &str,
) -> Result<Dataset> {
    let (c, h, w) = shape;
    let record_len = 1 + c * h * w;
    if bytes.is_empty() {
        return Err(Error::Format {
            offset: 0,
            message: "file holds no records".into(),
        });
    }
    let whole = bytes.len() / record_len * record_len;
    if whole != bytes.len() {
        return Err(Error::Format {
            offset: whole,
            message: format!(
                "truncated record: {} trailing bytes, records are {record_len} bytes",
                bytes.len() - whole
            ),
        });
    }
    let samples = bytes
        .chunks_exact(record_len)
        .enumerate()
        .map(|(record, chunk)| {
            let label = chunk[0];
            if label as usize >= num_classes {
                return Err(Error::LabelOutOfRange {
                    record,
                    label,
                    num_classes,
                });
            }
            let pixels = chunk[1..].iter().map(|&b| b as f32 / 255.0).collect();
            Ok(Sample {
                image: Image::new(c, h, w, pixels)?,
                label: one_hot(label as usize, num_classes)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, num_classes, samples)
}

/// Encodes a hard-labelled dataset in the record layout. Pixels are rounded to
/// the nearest of 256 levels.
pub fn encode_records(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.num_classes() > 256 {
        return Err(Error::Parameter(
            "more than 256 classes cannot be stored in a label byte".into(),
        ));
    }
    let (c, h, w) = dataset.image_shape();
    let mut out = Vec::with_capacity(dataset.len() * (1 + c * h * w));
    for (i, s) in dataset.samples().iter().enumerate() {
        let class = s.label.argmax();
        if s.label.probs()[class] != 1.0 {
            return Err(Error::Parameter(format!("sample {i} has a soft label")));
        }
        out.push(class as u8);
        out.extend(
            s.image
                .pixels()
                .iter()
                .map(|&v| libm::roundf(v * 255.0) as u8),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_white_record() {
        let mut bytes = vec![255u8; CIFAR_RECORD_LEN];
        bytes[0] = 0;
        let ds = decode_cifar(&bytes, 10, "t").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.image_shape(), (3, 32, 32));
        assert!(ds.get(0).image.pixels().iter().all(|&v| v == 1.0));
        assert_eq!(ds.get(0).label, one_hot(0, 10).unwrap());
    }

    #[test]
    fn two_records() {
        let bytes = vec![1u8; 2 * CIFAR_RECORD_LEN];
        assert_eq!(decode_cifar(&bytes, 10, "t").unwrap().len(), 2);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = vec![0u8; CIFAR_RECORD_LEN + 100];
        match decode_cifar(&bytes, 10, "t") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, CIFAR_RECORD_LEN),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_out_of_range_reports_record() {
        let mut bytes = vec![0u8; 3 * CIFAR_RECORD_LEN];
        bytes[2 * CIFAR_RECORD_LEN] = 10;
        match decode_cifar(&bytes, 10, "t") {
            Err(Error::LabelOutOfRange { record, label, .. }) => {
                assert_eq!((record, label), (2, 10));
            }
            other => panic!("{other:?}"),
        }
    }
}
