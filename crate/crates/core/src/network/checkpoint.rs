//! Binary checkpoints: `"DNMB"`, format version (u32), config JSON length
//! (u32) and bytes, parameter count (u64), parameters as little-endian f64 in
//! enumeration order, then an FNV-1a 64 checksum of everything before it.

use std::path::Path;

use crate::error::{Error, Result};
use crate::network::config::ModelConfig;
use crate::network::model::DenoMambaModel;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DNMB";
pub const CHECKPOINT_VERSION: u32 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Little-endian reader over a byte slice.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Integrity("file is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Integrity("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub(crate) fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Splits off and verifies the trailing checksum.
pub(crate) fn verify_checksum(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 8 {
        return Err(Error::Integrity("file too short for a checksum".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let actual = fnv1a64(body);
    if stored != actual {
        return Err(Error::Integrity(format!("checksum mismatch (stored {stored:016x}, computed {actual:016x})")));
    }
    Ok(body)
}

pub(crate) fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let sum = fnv1a64(&body);
    body.extend_from_slice(&sum.to_le_bytes());
    body
}

impl DenoMambaModel {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_string(self.config()).expect("config serialises");
        let params = self.store.flatten();
        let mut out = Vec::with_capacity(24 + json.len() + params.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        seal(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Integrity("not a checkpoint (bad magic)".into()));
        }
        let body = verify_checksum(bytes)?;
        let mut r = Reader::new(body);
        r.take(4)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let json = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Integrity("config is not UTF-8".into()))?;
        let config: ModelConfig =
            serde_json::from_str(json).map_err(|e| Error::Integrity(format!("unreadable config: {e}")))?;
        config.validate().map_err(|e| Error::Integrity(format!("stored config is invalid: {e}")))?;
        let count = r.u64()? as usize;
        let expected = DenoMambaModel::count_params(&config)?;
        if count != expected {
            return Err(Error::Integrity(format!(
                "checkpoint holds {count} parameters, its config needs {expected}"
            )));
        }
        let values = r.f64s(count)?;
        if !r.finished() {
            return Err(Error::Integrity("trailing bytes after parameters".into()));
        }
        let mut model = DenoMambaModel::build(&config)?;
        model.store.load_flat(&values)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn round_trip_and_corruption() {
        let mut cfg = ModelConfig::scaled(2, 4, 1, 2);
        cfg.seed = 3;
        let model = DenoMambaModel::build(&cfg).unwrap();
        let bytes = model.to_checkpoint_bytes();
        let back = DenoMambaModel::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.config(), model.config());
        assert_eq!(back.store.flatten(), model.store.flatten());

        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(DenoMambaModel::from_checkpoint_bytes(&bad), Err(Error::Integrity(_))));
        assert!(matches!(
            DenoMambaModel::from_checkpoint_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Integrity(_))
        ));
        let mut wrong_version = bytes[..bytes.len() - 8].to_vec();
        wrong_version[4] = 9;
        assert!(DenoMambaModel::from_checkpoint_bytes(&seal(wrong_version))
            .unwrap_err()
            .to_string()
            .contains("version"));
    }
}
