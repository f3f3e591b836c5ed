//! Parameter snapshots: a JSON manifest listing `{name, shape, dtype}` plus a
//! raw little-endian `f64` buffer with the tensors concatenated in manifest
//! order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{DiffError, ParamStore, Result, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUFFER_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

pub fn manifest(store: &ParamStore) -> Vec<ManifestEntry> {
    store
        .iter()
        .map(|(name, t)| ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f64".to_string(),
        })
        .collect()
}

/// Serializes a store into `(manifest JSON, buffer)`.
pub fn encode(store: &ParamStore) -> Result<(Vec<u8>, Vec<u8>)> {
    let entries = manifest(store);
    let json = serde_json::to_vec_pretty(&entries).map_err(|e| DiffError::Snapshot(e.to_string()))?;
    let mut buf = Vec::with_capacity(store.numel() * 8);
    for (_, t) in store.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok((json, buf))
}

/// Parses a manifest and buffer back into a store.
pub fn decode(manifest_json: &[u8], buffer: &[u8]) -> Result<ParamStore> {
    let entries: Vec<ManifestEntry> =
        serde_json::from_slice(manifest_json).map_err(|e| DiffError::Snapshot(format!("corrupt manifest: {e}")))?;
    let mut store = ParamStore::new();
    let mut offset = 0usize;
    for entry in entries {
        if entry.dtype != "f64" {
            return Err(DiffError::Snapshot(format!("{}: unsupported dtype {}", entry.name, entry.dtype)));
        }
        let n: usize = entry.shape.iter().product();
        let end = offset + n * 8;
        if end > buffer.len() {
            return Err(DiffError::Snapshot(format!(
                "buffer truncated at byte offset {} while reading `{}` (needs bytes {offset}..{end})",
                buffer.len(),
                entry.name
            )));
        }
        let data = buffer[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(entry.name, Tensor::new(entry.shape, data)?)?;
        offset = end;
    }
    if offset != buffer.len() {
        return Err(DiffError::Snapshot(format!(
            "{} trailing bytes after byte offset {offset}",
            buffer.len() - offset
        )));
    }
    Ok(store)
}

pub fn save(store: &ParamStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (json, buf) = encode(store)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    fs::write(dir.join(BUFFER_FILE), buf)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ParamStore> {
    let json = fs::read(dir.join(MANIFEST_FILE))?;
    let buf = fs::read(dir.join(BUFFER_FILE))?;
    decode(&json, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("b/x", Tensor::vector(vec![1.0, -0.0, f64::MIN_POSITIVE])).unwrap();
        s.insert("a/w", Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 1e300]).unwrap()).unwrap();
        s.insert("c", Tensor::scalar(std::f64::consts::PI)).unwrap();
        s
    }

    #[test]
    fn manifest_is_in_store_order_with_f64_dtype() {
        let m = manifest(&sample());
        let names: Vec<_> = m.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["a/w", "b/x", "c"]);
        assert!(m.iter().all(|e| e.dtype == "f64"));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let (json, buf) = encode(&s).unwrap();
        let back = decode(&json, &buf).unwrap();
        for ((_, a), (_, b)) in s.iter().zip(back.iter()) {
            let abits: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bbits: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(abits, bbits);
            assert_eq!(a.shape(), b.shape());
        }
    }

    #[test]
    fn truncated_buffer_names_the_offset() {
        let (json, buf) = encode(&sample()).unwrap();
        let err = decode(&json, &buf[..37]).unwrap_err().to_string();
        assert!(err.contains("byte offset 37"), "{err}");
    }

    #[test]
    fn corrupt_manifest_is_reported() {
        let (_, buf) = encode(&sample()).unwrap();
        assert!(decode(b"{not json", &buf).is_err());
    }

    #[test]
    fn save_and_load_through_files() {
        let dir = tempfile::tempdir().unwrap();
        save(&sample(), dir.path()).unwrap();
        assert_eq!(load(dir.path()).unwrap(), sample());
    }
}
