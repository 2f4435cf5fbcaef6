//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `DPRM`, format version `u16`, layer count
//! `u32`, then per layer `rows u32`, `cols u32`, `rows*cols` row-major `f64`
//! weights followed by `rows` `f64` biases. Activation is always ReLU between
//! layers.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Activation, ClassifierModel, DenseLayer};
use crate::{DprError, Result, Scalar};

const MAGIC: &[u8; 4] = b"DPRM";
const VERSION: u16 = 1;

pub fn write_checkpoint<S: Scalar, W: Write>(model: &ClassifierModel<S>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(model.layers().len() as u32)?;
    for layer in model.layers() {
        w.write_u32::<LittleEndian>(layer.rows() as u32)?;
        w.write_u32::<LittleEndian>(layer.cols() as u32)?;
        for v in layer.weights().iter().chain(layer.bias()) {
            w.write_f64::<LittleEndian>(v.to_f64_lossy())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Counts consumed bytes so format errors can report an offset.
struct Tracked<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Tracked<R> {
    fn fail(&self, reason: impl Into<String>) -> DprError {
        DprError::Format {
            offset: self.offset,
            reason: reason.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let v = self
            .inner
            .read_u32::<LittleEndian>()
            .map_err(|_| self.fail(format!("truncated while reading {what}")))?;
        self.offset += 4;
        Ok(v)
    }

    fn f64(&mut self) -> Result<f64> {
        let v = self
            .inner
            .read_f64::<LittleEndian>()
            .map_err(|_| self.fail("truncated parameter block"))?;
        self.offset += 8;
        Ok(v)
    }
}

pub fn read_checkpoint<S: Scalar, R: Read>(r: R) -> Result<ClassifierModel<S>> {
    let mut r = Tracked { inner: r, offset: 0 };
    let mut magic = [0u8; 4];
    r.inner
        .read_exact(&mut magic)
        .map_err(|_| r.fail("truncated magic"))?;
    if &magic != MAGIC {
        return Err(r.fail("bad magic, expected DPRM"));
    }
    r.offset = 4;
    let version = r
        .inner
        .read_u16::<LittleEndian>()
        .map_err(|_| r.fail("truncated version"))?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    r.offset += 2;
    let count = r.u32("layer count")? as usize;
    if count == 0 {
        return Err(r.fail("checkpoint has no layers"));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        let start = r.offset;
        let mut weights = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            weights.push(S::lit(r.f64()?));
        }
        let mut bias = Vec::with_capacity(rows);
        for _ in 0..rows {
            bias.push(S::lit(r.f64()?));
        }
        layers.push(DenseLayer::new(rows, cols, weights, bias).map_err(|e| DprError::Format {
            offset: start,
            reason: e.to_string(),
        })?);
    }
    ClassifierModel::new(layers, Activation::Relu).map_err(|e| DprError::Format {
        offset: r.offset,
        reason: e.to_string(),
    })
}

pub fn save_checkpoint<S: Scalar>(model: &ClassifierModel<S>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<ClassifierModel<S>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let model = ClassifierModel::<f64>::mlp(7, &[5], 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DPRM");
        // header + per-layer dims + parameters
        assert_eq!(buf.len(), 4 + 2 + 4 + 2 * 8 + 8 * model.param_count());
        let back: ClassifierModel<f64> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn truncation_reports_offset() {
        let model = ClassifierModel::<f64>::zeros(&[2, 2]).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        match read_checkpoint::<f64, _>(buf.as_slice()) {
            Err(DprError::Format { offset, .. }) => assert!(offset > 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        let r = read_checkpoint::<f64, _>(&b"NOPE\x01\x00"[..]);
        assert!(matches!(r, Err(DprError::Format { offset: 0, .. })));
    }
}
