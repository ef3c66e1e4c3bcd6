//! Binary weight files.
//!
//! Layout (little-endian): magic `EADW`, `u32` version, `u32` tensor count,
//! then per tensor a `u32` name length, UTF-8 name, `u32` rank, `u32` dims
//! and the `f32` payload. Tensors are written with rank 4; ranks below 4
//! are accepted on read and left-padded with 1s.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autograd::{ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"EADW";
pub const VERSION: u32 = 1;

pub fn encode_weights<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, entry) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&4u32.to_le_bytes());
        for d in entry.value.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in entry.value.data() {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    out
}

pub fn save_weights<T: Scalar>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_weights(store))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Parse(format!("weight file truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a complete weight file into `(name, tensor)` pairs in file order.
pub fn decode_weights(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Parse("not a weight file: bad magic".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported weight file version {version}")));
    }
    let count = cur.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| Error::Parse("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32("rank")? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Parse(format!("tensor `{name}` has unsupported rank {rank}")));
        }
        let mut dims = [1usize; 4];
        for d in &mut dims[4 - rank..] {
            *d = cur.u32("dims")? as usize;
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Parse(format!("tensor `{name}` is too large")))?;
        let payload = cur.take(numel, &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - cur.pos
        )));
    }
    Ok(out)
}

/// Reads a weight file into a fresh store, inferring kinds from names.
pub fn load_weights(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let mut store = ParamStore::new();
    for (name, t) in decode_weights(&fs::read(path)?)? {
        let kind = ParamKind::from_name(&name)
            .ok_or_else(|| Error::Parse(format!("cannot infer the role of tensor `{name}`")))?;
        store.insert(name, t, kind)?;
    }
    Ok(store)
}

/// Replaces every value of `template` with the tensor of the same name from
/// `bytes`. Nothing is modified unless the whole file matches.
pub fn load_into<T: Scalar>(template: &mut ParamStore<T>, bytes: &[u8]) -> Result<()> {
    let tensors = decode_weights(bytes)?;
    let by_name: std::collections::HashMap<&str, &Tensor<f32>> =
        tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for (name, entry) in template.iter() {
        let t = by_name.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        if t.dims() != entry.value.dims() {
            return Err(Error::Shape(format!(
                "tensor `{name}` has dims {:?} in file but {:?} in the model",
                t.dims(),
                entry.value.dims()
            )));
        }
    }
    if let Some((extra, _)) = tensors.iter().find(|(n, _)| !template.contains(n)) {
        return Err(Error::Parse(format!("file contains unexpected tensor `{extra}`")));
    }
    for (name, t) in tensors {
        template.set(&name, t.cast())?;
    }
    Ok(())
}

pub fn load_weights_into<T: Scalar>(template: &mut ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    load_into(template, &fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("a.weight", Tensor::from_fn([2, 1, 3, 1], |n, _, h, _| (n * 3 + h) as f32 - 2.5), ParamKind::ConvWeight)
            .unwrap();
        s.insert("a_act.slope", Tensor::full([1, 2, 1, 1], 0.25), ParamKind::PReluSlope).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let bytes = encode_weights(&s);
        let mut t = store();
        t.value_mut("a.weight").unwrap().data_mut().fill(0.0);
        load_into(&mut t, &bytes).unwrap();
        assert_eq!(t.get("a.weight").unwrap(), s.get("a.weight").unwrap());
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = encode_weights(&store());
        for cut in [0, 3, 11, 20, bytes.len() - 1] {
            assert!(matches!(decode_weights(&bytes[..cut]), Err(Error::Parse(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad).is_err());
    }

    #[test]
    fn lower_rank_is_left_padded() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'v');
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2f32).to_le_bytes());
        let t = decode_weights(&bytes).unwrap();
        assert_eq!(t[0].1.dims(), [1, 1, 1, 2]);
    }

    #[test]
    fn renamed_tensor_is_reported() {
        let mut s = ParamStore::<f32>::new();
        s.insert("b.weight", Tensor::zeros([2, 1, 3, 1]), ParamKind::ConvWeight).unwrap();
        s.insert("a_act.slope", Tensor::zeros([1, 2, 1, 1]), ParamKind::PReluSlope).unwrap();
        let mut t = store();
        let before = t.get("a_act.slope").unwrap().clone();
        let err = load_into(&mut t, &encode_weights(&s)).unwrap_err();
        assert!(matches!(err, Error::MissingParameter(ref n) if n == "a.weight"), "{err}");
        assert_eq!(t.get("a_act.slope").unwrap(), &before);
    }
}
