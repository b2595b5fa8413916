//! Binary checkpoints.
//!
//! ```text
//! "LMCK" | u32 version | u32 tensor count | u64 step
//! per tensor: u16 name length | name | u8 rank | u64 dims[rank] | f64 values
//! u8 mask present | u32 prunable count
//! per prunable tensor: u16 name length | name | u8 rank | u64 dims[rank] | keep bits
//! u64 checksum
//! ```
//!
//! Integers and floats are little-endian. Keep bits are packed eight to a
//! byte, least significant bit first. When no mask is stored the prunable
//! section still lists every prunable tensor (all bits set) so the prunable
//! flags survive the round trip. The checksum is the first eight bytes of the
//! SHA-256 digest of everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::engine::{ParamEntry, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::pruning::Mask;

pub const MAGIC: [u8; 4] = *b"LMCK";
pub const VERSION: u32 = 1;

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::InvalidArgument(format!("tensor name `{name}` is too long")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) -> Result<()> {
    let rank = u8::try_from(shape.len()).map_err(|_| Error::InvalidArgument(format!("rank {} is too large", shape.len())))?;
    out.push(rank);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(())
}

/// Serializes `params` and an optional mask.
pub fn encode_checkpoint(params: &ParamSet, mask: Option<&Mask>) -> Result<Vec<u8>> {
    if let Some(m) = mask {
        m.check_congruent(params)?;
    }
    let mut out = Vec::with_capacity(8 * params.num_params() + 1024);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.entries().len() as u32).to_le_bytes());
    out.extend_from_slice(&params.step().to_le_bytes());
    for e in params.entries() {
        put_name(&mut out, &e.name)?;
        put_shape(&mut out, e.tensor.shape())?;
        for v in e.tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.push(u8::from(mask.is_some()));
    out.extend_from_slice(&(params.prunable().count() as u32).to_le_bytes());
    let mut mask_tensors = mask.map(|m| m.tensors().iter());
    for e in params.prunable() {
        put_name(&mut out, &e.name)?;
        put_shape(&mut out, e.tensor.shape())?;
        let keep = mask_tensors.as_mut().and_then(|t| t.next()).map(|t| t.keep());
        let mut bytes = vec![0u8; e.tensor.len().div_ceil(8)];
        for i in 0..e.tensor.len() {
            if keep.is_none_or(|k| k[i]) {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bytes);
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated(format!("checkpoint ends inside {what}")));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u16("a name length")? as usize;
        String::from_utf8(self.take(len, "a name")?.to_vec()).map_err(|_| Error::InvalidArgument("tensor name is not UTF-8".into()))
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8("a rank")?;
        (0..rank)
            .map(|_| {
                let d = self.u64("a dimension")?;
                usize::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} does not fit in memory")))
            })
            .collect()
    }
}

/// Parses a checkpoint produced by [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamSet, Option<Mask>)> {
    if bytes.len() < 4 {
        return Err(Error::Truncated("checkpoint shorter than its magic".into()));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: u32::from_be_bytes(MAGIC),
            found: u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")),
        });
    }
    if bytes.len() < 4 + 8 {
        return Err(Error::Checksum("file too short to hold a checksum".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let actual = checksum(body);
    if stored != actual {
        return Err(Error::Checksum(format!("stored {stored:#018x}, computed {actual:#018x}")));
    }

    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32("the version")?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let count = r.u32("the tensor count")? as usize;
    let step = r.u64("the step")?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.name()?;
        let shape = r.shape()?;
        let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = len
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::InvalidArgument(format!("tensor `{name}` is too large")))?;
        let values = r
            .take(n, "tensor values")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.push(ParamEntry {
            name,
            tensor: Tensor::new(shape, values)?,
            prunable: false,
        });
    }

    let has_mask = match r.u8("the mask flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::InvalidArgument(format!("mask flag {other} is neither 0 nor 1"))),
    };
    let prunable = r.u32("the prunable count")? as usize;
    let mut tensors = Vec::with_capacity(prunable);
    let mut next_entry = 0;
    for _ in 0..prunable {
        let name = r.name()?;
        let shape = r.shape()?;
        let offset = entries[next_entry..]
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| Error::Incongruent(format!("mask tensor `{name}` is not a parameter (or is out of order)")))?;
        let entry = &mut entries[next_entry + offset];
        if entry.tensor.shape() != shape.as_slice() {
            return Err(Error::Incongruent(format!("mask tensor `{name}` has the wrong shape")));
        }
        entry.prunable = true;
        next_entry += offset + 1;
        let n = entry.tensor.len();
        let bits = r.take(n.div_ceil(8), "mask bits")?;
        let keep: Vec<bool> = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        tensors.push((name, shape, keep));
    }
    if r.pos != body.len() {
        return Err(Error::CountMismatch(format!("{} unexpected bytes before the checksum", body.len() - r.pos)));
    }
    let params = ParamSet::new(entries, step)?;
    let mask = if has_mask { Some(Mask::from_tensors(tensors)?) } else { None };
    Ok((params, mask))
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(params: &ParamSet, mask: Option<&Mask>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params, mask)?;
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, Option<Mask>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{init_params, Architecture};

    fn sample() -> (ParamSet, Mask) {
        let mut p = init_params(&Architecture::new("t", 3, vec![5], 2), 4).unwrap();
        p.set_step(17);
        let keep = p.prunable().map(|e| (0..e.tensor.len()).map(|i| i % 3 != 0).collect()).collect();
        let m = Mask::from_keep(&p, keep).unwrap();
        (p, m)
    }

    #[test]
    fn round_trip_with_and_without_mask() {
        let (p, m) = sample();
        for mask in [None, Some(&m)] {
            let bytes = encode_checkpoint(&p, mask).unwrap();
            let (q, back) = decode_checkpoint(&bytes).unwrap();
            assert_eq!(q, p);
            assert_eq!(back.as_ref(), mask);
        }
    }

    #[test]
    fn header_layout() {
        let (p, _) = sample();
        let bytes = encode_checkpoint(&p, None).unwrap();
        assert_eq!(&bytes[..4], b"LMCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 17);
        assert_eq!(u16::from_le_bytes(bytes[20..22].try_into().unwrap()), 10);
        assert_eq!(&bytes[22..32], b"fc1.weight");
        assert_eq!(bytes[32], 2);
    }

    #[test]
    fn corruption_is_detected() {
        let (p, m) = sample();
        let bytes = encode_checkpoint(&p, Some(&m)).unwrap();
        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(decode_checkpoint(truncated), Err(Error::Checksum(_))));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0, 0, 0]);
        assert!(decode_checkpoint(&extra).is_err());
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checksum(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn other_versions_are_refused() {
        let (p, _) = sample();
        let mut bytes = encode_checkpoint(&p, None).unwrap();
        bytes.truncate(bytes.len() - 8);
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let sum = checksum(&bytes);
        bytes.extend_from_slice(&sum.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Version(2))));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b.lmck");
        let (p, m) = sample();
        save_checkpoint(&p, Some(&m), &path).unwrap();
        let (q, back) = load_checkpoint(&path).unwrap();
        assert_eq!((q, back), (p, Some(m)));
    }
}
