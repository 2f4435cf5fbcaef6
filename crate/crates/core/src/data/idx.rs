//! IDX files (the MNIST container): big-endian magic `0x00000803` for
//! `u8` image tensors and `0x00000801` for `u8` label vectors.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};

use crate::{DprError, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(BigEndian::read_u32)
        .ok_or_else(|| DprError::Format {
            offset: offset as u64,
            reason: format!("truncated {what}"),
        })
}

fn expect_magic(bytes: &[u8], magic: u32) -> Result<()> {
    let found = be_u32(bytes, 0, "magic number")?;
    if found != magic {
        return Err(DprError::Format {
            offset: 0,
            reason: format!("bad magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize) -> Result<&'a [u8]> {
    bytes.get(header..header + len).ok_or_else(|| DprError::Format {
        offset: bytes.len() as u64,
        reason: format!("data ends early, expected {} bytes", header + len),
    })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    expect_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let pixels = payload(bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    expect_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4, "label count")? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_idx_images(&fs::read(path)?)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?)
}

pub fn write_idx_images<W: Write>(images: &IdxImages, mut w: W) -> Result<()> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(DprError::shape("pixel buffer does not match the image dimensions"));
    }
    w.write_u32::<BigEndian>(IMAGES_MAGIC)?;
    for d in [images.count, images.rows, images.cols] {
        w.write_u32::<BigEndian>(d as u32)?;
    }
    w.write_all(&images.pixels)?;
    Ok(())
}

pub fn write_idx_labels<W: Write>(labels: &[u8], mut w: W) -> Result<()> {
    w.write_u32::<BigEndian>(LABELS_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    w.write_all(labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_two_by_two_images_round_trip() {
        let pixels: Vec<u8> = (0..40).map(|i| (i * 37 % 256) as u8).collect();
        let images = IdxImages {
            count: 10,
            rows: 2,
            cols: 2,
            pixels: pixels.clone(),
        };
        let mut buf = Vec::new();
        write_idx_images(&images, &mut buf).unwrap();
        assert_eq!(&buf[..4], &[0, 0, 8, 3]);
        assert_eq!(buf.len(), 16 + 40);
        let back = parse_idx_images(&buf).unwrap();
        assert_eq!(back.pixels, pixels);
        assert_eq!((back.count, back.rows, back.cols), (10, 2, 2));
    }

    #[test]
    fn labels_round_trip() {
        let mut buf = Vec::new();
        write_idx_labels(&[3, 1, 4, 1, 5], &mut buf).unwrap();
        assert_eq!(parse_idx_labels(&buf).unwrap(), vec![3, 1, 4, 1, 5]);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut buf = Vec::new();
        write_idx_labels(&[0], &mut buf).unwrap();
        assert!(matches!(
            parse_idx_images(&buf),
            Err(DprError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let images = IdxImages {
            count: 2,
            rows: 3,
            cols: 3,
            pixels: vec![9; 18],
        };
        let mut buf = Vec::new();
        write_idx_images(&images, &mut buf).unwrap();
        buf.truncate(20);
        match parse_idx_images(&buf) {
            Err(DprError::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_idx_images(&buf[..6]),
            Err(DprError::Format { offset: 4, .. })
        ));
    }
}
