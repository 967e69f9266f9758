//! Weight file layout, all integers little-endian:
//!
//! ```text
//! "WNDC"                      magic, 4 bytes
//! u32                         format version
//! u32 len, bytes              model kind name
//! u32 × 3                     input shape (C, T, F)
//! u32                         target count
//! u32                         record count
//! per record:
//!   u32 len, bytes            parameter name
//!   u32 rank, u32 × rank      shape
//!   f64 × numel               values
//! u32                         CRC32 of every preceding byte
//! ```
//!
//! Records cover every tensor in the parameter store, buffers included, in
//! registration order.

use crate::error::{Error, Result};
use crate::model::{Model, ModelKind, ModelSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WNDC";
pub const VERSION: u32 = 1;

/// The spec header of a weight file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightsDescriptor {
    pub kind: ModelKind,
    pub input_shape: [usize; 3],
    pub targets: usize,
}

impl WeightsDescriptor {
    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.kind, self.input_shape, self.targets)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn save_weights(model: &Model) -> Result<Vec<u8>> {
    use crate::model::Forecaster;
    let spec = model.spec();
    let store = model.store();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, spec.kind.as_str())?;
    for e in spec.input_shape {
        put_u32(&mut out, e)?;
    }
    put_u32(&mut out, spec.targets)?;
    put_u32(&mut out, store.len())?;
    for id in store.ids() {
        let t = store.get(id);
        put_str(&mut out, store.name(id))?;
        put_u32(&mut out, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// CRC32 trailer of a weight file, as lowercase hex.
pub fn weights_checksum(bytes: &[u8]) -> Result<String> {
    verify(bytes)?;
    let tail: [u8; 4] = bytes[bytes.len() - 4..].try_into().expect("4 bytes");
    Ok(format!("{:08x}", u32::from_le_bytes(tail)))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("weight file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn str(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::format("name is not UTF-8"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Checks length, magic, version and checksum; returns the payload.
fn verify(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::format("weight file truncated"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("not a weight file (bad magic)"));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::format(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported weight format version {version}"
        )));
    }
    Ok(payload)
}

fn read_header(r: &mut Reader) -> Result<WeightsDescriptor> {
    r.take(8)?;
    let kind = r
        .str()?
        .parse()
        .map_err(|e: Error| Error::format(e.to_string()))?;
    let input_shape = [r.u32()?, r.u32()?, r.u32()?];
    let targets = r.u32()?;
    Ok(WeightsDescriptor {
        kind,
        input_shape,
        targets,
    })
}

pub fn read_descriptor(bytes: &[u8]) -> Result<WeightsDescriptor> {
    let payload = verify(bytes)?;
    read_header(&mut Reader {
        bytes: payload,
        pos: 0,
    })
}

/// Replaces every tensor of `model` with the file's values. The model is
/// untouched on any error.
pub fn load_weights(model: &mut Model, bytes: &[u8]) -> Result<()> {
    use crate::model::Forecaster;
    let payload = verify(bytes)?;
    let mut r = Reader {
        bytes: payload,
        pos: 0,
    };
    let desc = read_header(&mut r)?;
    let spec = model.spec();
    if desc.kind != spec.kind
        || desc.input_shape != spec.input_shape
        || desc.targets != spec.targets
    {
        return Err(Error::format(format!(
            "weight file is for {} {:?} → {}, model is {} {:?} → {}",
            desc.kind, desc.input_shape, desc.targets, spec.kind, spec.input_shape, spec.targets
        )));
    }
    let store = model.store();
    let count = r.u32()?;
    if count != store.len() {
        return Err(Error::format(format!(
            "weight file has {count} records, model has {}",
            store.len()
        )));
    }
    let mut staged = Vec::with_capacity(count);
    for id in store.ids() {
        let name = r.str()?;
        if name != store.name(id) {
            return Err(Error::format(format!(
                "record `{name}` where `{}` was expected",
                store.name(id)
            )));
        }
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if shape != store.get(id).shape() {
            return Err(Error::format(format!(
                "record `{name}` has shape {shape:?}, expected {:?}",
                store.get(id).shape()
            )));
        }
        let data = (0..shape.iter().product::<usize>())
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        staged.push((
            id,
            Tensor::new(shape, data).map_err(|e| Error::format(e.to_string()))?,
        ));
    }
    if r.pos != payload.len() {
        return Err(Error::format("trailing bytes after the last record"));
    }
    let store = model.store_mut();
    for (id, t) in staged {
        store.assign(id, t)?;
    }
    Ok(())
}
