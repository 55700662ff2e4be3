//! Binary tensor archives and checkpoint directories.
//!
//! Archive layout (little-endian):
//! `magic[8] | version u32 | count u32 | { name_len u32 | name | rank u32 | dims u64* | values f64* }* | sha256[32]`
//! The trailing digest covers every preceding byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 8] = b"PIPGANT\0";
pub const ARCHIVE_VERSION: u32 = 1;
/// Version of the `meta.json` layout.
pub const META_SCHEMA: u32 = 1;
pub const PARAMS_FILE: &str = "params.bin";
pub const META_FILE: &str = "meta.json";

/// `(name, shape, values)`
pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

pub fn encode_archive(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(ARCHIVE_MAGIC);
    buf.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in tensors {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::CorruptArchive { path: self.path.to_path_buf(), message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_archive(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    let corrupt = |m: &str| Error::CorruptArchive { path: path.to_path_buf(), message: m.into() };
    if bytes.len() < ARCHIVE_MAGIC.len() + 8 + 32 || &bytes[..8] != ARCHIVE_MAGIC {
        return Err(corrupt("not a tensor archive"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != ARCHIVE_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: ARCHIVE_VERSION });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 12, path };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.corrupt("tensor name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.corrupt("shape overflow"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| r.corrupt("shape overflow"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, shape, data));
    }
    if r.pos != body.len() {
        return Err(r.corrupt("trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn write_archive(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_archive(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Vec<NamedTensor>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes, path)
}

/// One evaluation snapshot recorded during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub step: u64,
    /// Mean absolute error over the evaluation records.
    pub l1: f64,
    pub psnr_db: f64,
    pub mse: f64,
    pub rmse: f64,
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema: u32,
    pub crate_version: String,
    /// SHA-256 of the canonical JSON of the run configuration.
    pub config_hash: String,
    pub stage: String,
    pub step: u64,
    pub seed: u64,
    /// Model description needed to rebuild the networks before loading weights.
    pub model: serde_json::Value,
    pub metrics: Vec<MetricSnapshot>,
    /// Trainer RNG state (ChaCha word position and stream) for resumption.
    pub rng: Option<serde_json::Value>,
}

/// Writes `params.bin` and `meta.json` into `dir`.
pub fn save_checkpoint(dir: &Path, meta: &CheckpointMeta, tensors: &[NamedTensor]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_archive(&dir.join(PARAMS_FILE), tensors)?;
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&meta_path, e))
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let meta_path: PathBuf = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(Error::MissingFile(meta_path));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let schema = value.get("schema").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if schema != META_SCHEMA {
        return Err(Error::VersionMismatch { found: schema, expected: META_SCHEMA });
    }
    serde_json::from_value(value).map_err(|e| Error::SchemaMismatch(format!("{}: {e}", meta_path.display())))
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointMeta, Vec<NamedTensor>)> {
    let meta = read_meta(dir)?;
    let tensors = read_archive(&dir.join(PARAMS_FILE))?;
    Ok((meta, tensors))
}

/// Tensors whose name starts with `prefix`, with the prefix stripped.
pub fn with_prefix(tensors: &[NamedTensor], prefix: &str) -> Vec<NamedTensor> {
    tensors
        .iter()
        .filter_map(|(n, s, d)| n.strip_prefix(prefix).map(|rest| (rest.to_string(), s.clone(), d.clone())))
        .collect()
}

pub fn prefixed(prefix: &str, tensors: Vec<NamedTensor>) -> impl Iterator<Item = NamedTensor> + '_ {
    tensors.into_iter().map(move |(n, s, d)| (format!("{prefix}{n}"), s, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedTensor> {
        vec![
            ("a.weight".into(), vec![2, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, -0.0]),
            ("b".into(), vec![], vec![7.0]),
            ("empty".into(), vec![0, 4], vec![]),
        ]
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_archive(&p, &sample()).unwrap();
        let back = read_archive(&p).unwrap();
        assert_eq!(back.len(), 3);
        for ((n1, s1, d1), (n2, s2, d2)) in sample().iter().zip(&back) {
            assert_eq!((n1, s1), (n2, s2));
            let b1: Vec<u64> = d1.iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = d2.iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let mut bytes = encode_archive(&sample());
        bytes[30] ^= 0x40;
        assert!(matches!(decode_archive(&bytes, Path::new("x")), Err(Error::CorruptArchive { .. })));
        let bytes = encode_archive(&sample());
        assert!(matches!(decode_archive(&bytes[..bytes.len() - 5], Path::new("x")), Err(Error::CorruptArchive { .. })));
        assert!(matches!(decode_archive(b"garbage", Path::new("x")), Err(Error::CorruptArchive { .. })));
    }

    #[test]
    fn unknown_version_is_named() {
        let mut bytes = encode_archive(&sample());
        bytes[8] = 9;
        assert!(matches!(decode_archive(&bytes, Path::new("x")), Err(Error::VersionMismatch { found: 9, expected: 1 })));
    }

    #[test]
    fn meta_schema_checked() {
        let dir = tempfile::tempdir().unwrap();
        let meta = CheckpointMeta {
            schema: META_SCHEMA,
            crate_version: "0".into(),
            config_hash: "h".into(),
            stage: "pose".into(),
            step: 3,
            seed: 1,
            model: serde_json::json!({}),
            metrics: vec![],
            rng: None,
        };
        save_checkpoint(dir.path(), &meta, &sample()).unwrap();
        let (m, t) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(m, meta);
        assert_eq!(t.len(), 3);
        let mut bad = meta.clone();
        bad.schema = 7;
        fs::write(dir.path().join(META_FILE), serde_json::to_string(&bad).unwrap()).unwrap();
        assert!(matches!(read_meta(dir.path()), Err(Error::VersionMismatch { found: 7, .. })));
    }
}
