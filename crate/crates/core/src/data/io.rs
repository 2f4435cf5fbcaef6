//! Native dataset files.
//!
//! Layout (little-endian): magic `DPRD`, version `u16`, `K u16`, `M u16`,
//! `rho f64`, `n u64`, then per example: feature count `u32`, `f64` features,
//! `y u16`, and `M` pairs of (`bias label u16`, `aligned u8`).
//! The generation seed is not stored; loaded datasets report seed 0 and an
//! inferred [`FeatureLayout`].

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{BiasedDataset, BiasedExample, FeatureLayout};
use crate::{DprError, Result, Scalar};

const MAGIC: &[u8; 4] = b"DPRD";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 2 + 8 + 8;

/// Exact encoded size of a dataset in bytes.
pub fn encoded_len<S: Scalar>(dataset: &BiasedDataset<S>) -> usize {
    let m = dataset.num_bias_attrs();
    HEADER_LEN
        + dataset
            .examples()
            .iter()
            .map(|e| 4 + 8 * e.features.len() + 2 + 3 * m)
            .sum::<usize>()
}

pub fn write_dataset<S: Scalar, W: Write>(dataset: &BiasedDataset<S>, mut w: W) -> Result<()> {
    let narrow = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| DprError::param(format!("{what} {v} does not fit in u16")))
    };
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u16::<LittleEndian>(narrow(dataset.num_classes(), "class count")?)?;
    w.write_u16::<LittleEndian>(narrow(dataset.num_bias_attrs(), "attribute count")?)?;
    w.write_f64::<LittleEndian>(dataset.rho())?;
    w.write_u64::<LittleEndian>(dataset.len() as u64)?;
    for e in dataset.examples() {
        w.write_u32::<LittleEndian>(e.features.len() as u32)?;
        for v in &e.features {
            w.write_f64::<LittleEndian>(v.to_f64_lossy())?;
        }
        w.write_u16::<LittleEndian>(e.y as u16)?;
        for (b, a) in e.bias_labels.iter().zip(&e.aligned) {
            w.write_u16::<LittleEndian>(*b as u16)?;
            w.write_u8(u8::from(*a))?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn take<T>(&mut self, width: u64, what: &str, f: impl FnOnce(&mut R) -> std::io::Result<T>) -> Result<T> {
        match f(&mut self.inner) {
            Ok(v) => {
                self.offset += width;
                Ok(v)
            }
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => Err(DprError::Format {
                offset: self.offset,
                reason: format!("truncated {what}"),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn fail(&self, reason: impl Into<String>) -> DprError {
        DprError::Format {
            offset: self.offset,
            reason: reason.into(),
        }
    }
}

pub fn read_dataset<S: Scalar, R: Read>(r: R) -> Result<BiasedDataset<S>> {
    let mut c = Cursor { inner: r, offset: 0 };
    let magic = c.take(4, "magic", |r| {
        let mut m = [0u8; 4];
        r.read_exact(&mut m).map(|_| m)
    })?;
    if &magic != MAGIC {
        return Err(DprError::Format {
            offset: 0,
            reason: "bad magic, expected DPRD".into(),
        });
    }
    let version = c.take(2, "version", |r| r.read_u16::<LittleEndian>())?;
    if version != VERSION {
        return Err(c.fail(format!("unsupported dataset version {version}")));
    }
    let k = c.take(2, "class count", |r| r.read_u16::<LittleEndian>())? as usize;
    let m = c.take(2, "attribute count", |r| r.read_u16::<LittleEndian>())? as usize;
    let rho = c.take(8, "rho", |r| r.read_f64::<LittleEndian>())?;
    let n = c.take(8, "example count", |r| r.read_u64::<LittleEndian>())? as usize;
    let mut examples = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = c.take(4, "feature count", |r| r.read_u32::<LittleEndian>())? as usize;
        let mut features = Vec::with_capacity(len);
        for _ in 0..len {
            features.push(S::lit(c.take(8, "feature", |r| r.read_f64::<LittleEndian>())?));
        }
        let y = c.take(2, "label", |r| r.read_u16::<LittleEndian>())? as usize;
        let mut bias_labels = Vec::with_capacity(m);
        let mut aligned = Vec::with_capacity(m);
        for _ in 0..m {
            bias_labels.push(c.take(2, "bias label", |r| r.read_u16::<LittleEndian>())? as usize);
            let flag = c.take(1, "alignment flag", |r| r.read_u8())?;
            if flag > 1 {
                return Err(c.fail(format!("alignment flag {flag} is not 0 or 1")));
            }
            aligned.push(flag == 1);
        }
        examples.push(BiasedExample {
            features,
            y,
            bias_labels,
            aligned,
        });
    }
    let layout = FeatureLayout::infer(examples.first().map_or(0, |e| e.features.len()));
    let end = c.offset;
    BiasedDataset::new(examples, k, m, rho, 0, layout).map_err(|e| DprError::Format {
        offset: end,
        reason: e.to_string(),
    })
}

pub fn save_dataset<S: Scalar>(dataset: &BiasedDataset<S>, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

pub fn load_dataset<S: Scalar>(path: impl AsRef<Path>) -> Result<BiasedDataset<S>> {
    read_dataset(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_colored, generate_multibias, GenConfig};

    #[test]
    fn colored_round_trip_and_size() {
        let d: BiasedDataset<f64> = generate_colored(&GenConfig::colored(10).with_rho(0.1), 40, 6).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        // 26 header bytes + 40 * (4 + 8 * 432 + 2 + 3)
        assert_eq!(buf.len(), 26 + 40 * (4 + 8 * 432 + 5));
        assert_eq!(buf.len(), encoded_len(&d));
        let back: BiasedDataset<f64> = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.examples(), d.examples());
        assert_eq!(back.layout(), d.layout());
        assert_eq!((back.num_classes(), back.num_bias_attrs(), back.rho()), (10, 1, 0.1));
    }

    #[test]
    fn multibias_round_trip() {
        let d: BiasedDataset<f64> = generate_multibias(&GenConfig::multibias(4, 3).with_rho(0.3), 25, 1).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back: BiasedDataset<f64> = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.examples(), d.examples());
    }

    #[test]
    fn truncated_file_reports_offset() {
        let d: BiasedDataset<f64> = generate_colored(&GenConfig::colored(3), 3, 0).unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        buf.truncate(30);
        match read_dataset::<f64, _>(buf.as_slice()) {
            Err(DprError::Format { offset, .. }) => assert_eq!(offset, 30),
            other => panic!("unexpected {other:?}"),
        }
    }
}
