//! Binary weight files.
//!
//! Layout: magic `DVNN`, format version (u32 LE), header length (u32 LE), the
//! header as canonical JSON, then for every parameter in declaration order
//! its values, Adam first and second moments (f64 LE each) and Adam step
//! count (u64 LE), and finally a CRC32 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::nets::{ArchConfig, Model};

pub const MAGIC: &[u8; 4] = b"DVNN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchConfig,
    /// Training steps taken so far.
    step: u64,
    /// Number of parameter tensors, as a sanity check.
    tensors: usize,
}

pub fn encode_weights(model: &Model, step: u64) -> Vec<u8> {
    let params = model.params();
    let header = Header {
        arch: model.arch.clone(),
        step,
        tensors: params.len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for blob in [&p.data, &p.adam.m, &p.adam.v] {
            for v in blob.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&p.adam.t.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NeuralError::Corrupt("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, dst: &mut [f64]) -> Result<()> {
        let raw = self.take(dst.len() * 8)?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

/// First field whose value differs between two architectures.
fn arch_diff(found: &ArchConfig, expected: &ArchConfig) -> Option<NeuralError> {
    let a = serde_json::to_value(found).expect("serializes");
    let b = serde_json::to_value(expected).expect("serializes");
    let (a, b) = (a.as_object()?, b.as_object()?);
    b.iter().find(|(k, v)| a.get(*k) != Some(*v)).map(|(k, v)| NeuralError::ArchMismatch {
        field: k.clone(),
        found: a.get(k).map(|x| x.to_string()).unwrap_or_default(),
        expected: v.to_string(),
    })
}

/// Decodes a weight file. When `expected` is given the stored architecture
/// must equal it. Returns the model and its training step.
pub fn decode_weights(bytes: &[u8], expected: Option<&ArchConfig>) -> Result<(Model, u64)> {
    if bytes.len() < 16 {
        return Err(NeuralError::Corrupt("truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if &body[..4] != MAGIC {
        return Err(NeuralError::Corrupt("bad magic".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(NeuralError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != crc {
        return Err(NeuralError::Corrupt("checksum mismatch (truncated or damaged file)".into()));
    }
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)
        .map_err(|e| NeuralError::Corrupt(format!("header: {e}")))?;
    if let Some(exp) = expected {
        if let Some(err) = arch_diff(&header.arch, exp) {
            return Err(err);
        }
    }
    // the seed is irrelevant: every parameter is overwritten below
    let mut model = Model::new(header.arch, 0)?;
    let mut params = model.params_mut();
    if params.len() != header.tensors {
        return Err(NeuralError::Corrupt(format!(
            "file lists {} tensors, architecture has {}",
            header.tensors,
            params.len()
        )));
    }
    for p in params.iter_mut() {
        r.f64s(&mut p.data)?;
        r.f64s(&mut p.adam.m)?;
        r.f64s(&mut p.adam.v)?;
        p.adam.t = r.u64()?;
    }
    if r.pos != body.len() {
        return Err(NeuralError::Corrupt("trailing bytes".into()));
    }
    Ok((model, header.step))
}

pub fn save_weights(path: &Path, model: &Model, step: u64) -> Result<()> {
    fs::write(path, encode_weights(model, step))?;
    Ok(())
}

pub fn load_weights(path: &Path, expected: Option<&ArchConfig>) -> Result<(Model, u64)> {
    decode_weights(&fs::read(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::uniform_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> ArchConfig {
        ArchConfig {
            gen_base: 4,
            gen_depth: 2,
            disc_base: 4,
            ..ArchConfig::desk(16)
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = Model::new(arch(), 3).unwrap();
        for (i, p) in model.params_mut().into_iter().enumerate() {
            p.adam.t = i as u64;
            p.adam.m.iter_mut().for_each(|v| *v = 0.1 * i as f64);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.dvnn");
        save_weights(&path, &model, 42).unwrap();
        let (loaded, step) = load_weights(&path, Some(&arch())).unwrap();
        assert_eq!(step, 42);
        assert_eq!(loaded, model);
        let x = uniform_tensor([1, 1, 16, 16], &mut ChaCha8Rng::seed_from_u64(0));
        let a = model.synthesize(&x).unwrap();
        let b = loaded.synthesize(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode_weights(&Model::new(arch(), 0).unwrap(), 0);
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_weights(&bytes[..cut], None).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn corrupted_byte_is_rejected() {
        let mut bytes = encode_weights(&Model::new(arch(), 0).unwrap(), 0);
        let n = bytes.len();
        bytes[n - 100] ^= 0x40;
        let err = decode_weights(&bytes, None).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = encode_weights(&Model::new(arch(), 0).unwrap(), 0);
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            decode_weights(&bytes, None),
            Err(NeuralError::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn architecture_mismatch_names_field() {
        let bytes = encode_weights(&Model::new(arch(), 0).unwrap(), 0);
        let other = ArchConfig {
            refiner_width: 5,
            ..arch()
        };
        let err = decode_weights(&bytes, Some(&other)).unwrap_err();
        assert!(matches!(&err, NeuralError::ArchMismatch { field, .. } if field == "refiner_width"), "{err}");
        assert!(err.to_string().contains("refiner_width"));
    }
}
