//! Binary checkpoint holding the student and teacher weights.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "RSEN" | version | bands | components | window | classes
//!        | spectral_width | conv_channels | hidden | set count (2)
//! per set (student, then teacher):
//!     tensor count (12)
//!     per tensor, in `Param::ALL` order: rank | dims... | f64 LE values
//! ```

use std::io::{Read, Write};

use super::{Arch, BaseNetError, BaseNetParams, Param, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RSEN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub student: BaseNetParams,
    pub teacher: BaseNetParams,
}

impl Checkpoint {
    pub fn arch(&self) -> &Arch {
        self.teacher.arch()
    }
}

fn put(out: &mut impl Write, v: u32) -> std::io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

pub fn write_checkpoint(ckpt: &Checkpoint, mut out: impl Write) -> Result<()> {
    ckpt.student.check_same_shape(&ckpt.teacher)?;
    let a = ckpt.arch();
    out.write_all(MAGIC)?;
    put(&mut out, CHECKPOINT_VERSION)?;
    for d in [
        a.bands,
        a.components,
        a.window,
        a.classes,
        a.spectral_width,
        a.conv_channels,
        a.hidden,
    ] {
        put(&mut out, d as u32)?;
    }
    put(&mut out, 2)?;
    for set in [&ckpt.student, &ckpt.teacher] {
        put(&mut out, set.tensors().len() as u32)?;
        for t in set.tensors() {
            put(&mut out, t.shape().len() as u32)?;
            for &d in t.shape() {
                put(&mut out, d as u32)?;
            }
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(BaseNetError::Checkpoint(format!(
                "truncated at byte {} (needed {n} more bytes)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(BaseNetError::Checkpoint("bad magic, not an RSEN checkpoint".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(BaseNetError::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let arch = Arch::new(dims[0], dims[1], dims[2], dims[3])?.with_widths(dims[4], dims[5], dims[6])?;
    let sets = cur.u32()?;
    if sets != 2 {
        return Err(BaseNetError::Checkpoint(format!("expected 2 parameter sets, found {sets}")));
    }
    let read_set = |cur: &mut Cursor| -> Result<BaseNetParams> {
        let count = cur.u32()? as usize;
        if count != Param::ALL.len() {
            return Err(BaseNetError::Checkpoint(format!(
                "expected {} tensors per set, found {count}",
                Param::ALL.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for &p in &Param::ALL {
            let rank = cur.u32()? as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != arch.shape_of(p) {
                return Err(BaseNetError::Checkpoint(format!(
                    "{} stored with shape {shape:?}, header implies {:?}",
                    p.name(),
                    arch.shape_of(p)
                )));
            }
            let len = shape.iter().product();
            let data = (0..len).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(shape, data)?);
        }
        BaseNetParams::from_tensors(arch, tensors)
    };
    let student = read_set(&mut cur)?;
    let teacher = read_set(&mut cur)?;
    if cur.pos != bytes.len() {
        return Err(BaseNetError::Checkpoint(format!(
            "{} trailing bytes after teacher parameters",
            bytes.len() - cur.pos
        )));
    }
    Ok(Checkpoint { student, teacher })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basenet::init_params;

    #[test]
    fn round_trip() {
        let arch = Arch::new(6, 2, 4, 3).unwrap().with_widths(4, 3, 5).unwrap();
        let ckpt = Checkpoint {
            student: init_params(1, arch).unwrap(),
            teacher: init_params(2, arch).unwrap(),
        };
        let mut buf = Vec::new();
        write_checkpoint(&ckpt, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"RSEN");
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), ckpt);

        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_checkpoint(&bad[..]).is_err());
    }
}
