//! JSON-lines dataset manifest.
//!
//! `manifest.jsonl` holds one record per line with the fixed field names
//! `id, imp, seed_id, seed_distort, seed_texture, path, sha256`; paths are
//! relative to the manifest's directory. The generator digest lives in a
//! sidecar `<stem>.meta.json` so the record stream stays homogeneous.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::sha256_file;
use super::noise::NoiseTriple;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: u64,
    pub imp: u64,
    pub seed_id: u64,
    pub seed_distort: u64,
    pub seed_texture: u64,
    pub path: String,
    pub sha256: String,
}

impl ManifestRecord {
    pub fn noise(&self) -> NoiseTriple {
        NoiseTriple::from_seeds(self.seed_id, self.seed_distort, self.seed_texture)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestMeta {
    generator_config_hash: String,
    records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub generator_config_hash: String,
    /// Directory the record paths are relative to. Not serialized.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, generator_config_hash: impl Into<String>) -> Self {
        Self {
            records: Vec::new(),
            generator_config_hash: generator_config_hash.into(),
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    /// Distinct identity indices in first-seen order.
    pub fn identities(&self) -> Vec<u64> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.id))
            .map(|r| r.id)
            .collect()
    }

    /// Records grouped by identity, identities in ascending order, impressions ascending.
    pub fn by_identity(&self) -> Vec<(u64, Vec<&ManifestRecord>)> {
        let mut map: std::collections::BTreeMap<u64, Vec<&ManifestRecord>> = Default::default();
        for r in &self.records {
            map.entry(r.id).or_default().push(r);
        }
        map.into_iter()
            .map(|(k, mut v)| {
                v.sort_by_key(|r| r.imp);
                (k, v)
            })
            .collect()
    }

    /// Subset sharing the same root and digest.
    pub fn filtered(&self, mut keep: impl FnMut(&ManifestRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            generator_config_hash: self.generator_config_hash.clone(),
            root: self.root.clone(),
        }
    }

    fn check_unique(records: &[ManifestRecord]) -> Result<()> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in records {
            if !seen.insert((r.id, r.imp)) {
                return Err(Error::DuplicateKey { id: r.id, imp: r.imp });
            }
        }
        Ok(())
    }

    /// Verifies that every file exists and matches its recorded digest.
    pub fn verify_files(&self) -> Result<()> {
        for r in &self.records {
            let p = self.resolve(r);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
            let actual = sha256_file(&p)?;
            if actual != r.sha256 {
                return Err(Error::HashMismatch {
                    path: p,
                    expected: r.sha256.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }
}

pub fn meta_path(manifest_path: &Path) -> PathBuf {
    let stem = manifest_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    manifest_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    DatasetManifest::check_unique(&manifest.records)?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut out = Vec::new();
    for r in &manifest.records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    let meta = ManifestMeta {
        generator_config_hash: manifest.generator_config_hash.clone(),
        records: manifest.records.len(),
    };
    let mp = meta_path(path);
    std::fs::write(&mp, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&mp, e))?;
    Ok(())
}

/// Parses the records and sidecar without touching the referenced images.
pub fn read_manifest_unverified(path: &Path) -> Result<DatasetManifest> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::ManifestParse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        records.push(rec);
    }
    DatasetManifest::check_unique(&records)?;
    let mp = meta_path(path);
    let generator_config_hash = match std::fs::read(&mp) {
        Ok(bytes) => {
            let meta: ManifestMeta =
                serde_json::from_slice(&bytes).map_err(|e| Error::ManifestParse {
                    line: 0,
                    reason: format!("{}: {e}", mp.display()),
                })?;
            if meta.records != records.len() {
                return Err(Error::ManifestParse {
                    line: 0,
                    reason: format!(
                        "sidecar declares {} records, file has {}",
                        meta.records,
                        records.len()
                    ),
                });
            }
            meta.generator_config_hash
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(&mp, e)),
    };
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(DatasetManifest {
        records,
        generator_config_hash,
        root,
    })
}

/// Reads and fully validates a manifest (unique keys, files present, digests match).
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = read_manifest_unverified(path)?;
    m.verify_files()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::io::{sha256_hex, write_bytes};

    fn record(dir: &Path, id: u64, imp: u64) -> ManifestRecord {
        let rel = format!("id_{id:06}/imp_{imp:02}.png");
        let bytes = format!("payload {id} {imp}").into_bytes();
        write_bytes(&dir.join(&rel), &bytes).unwrap();
        ManifestRecord {
            id,
            imp,
            seed_id: u64::MAX - id,
            seed_distort: (id << 32) | imp,
            seed_texture: 0x8000_0000_0000_0001,
            path: rel,
            sha256: sha256_hex(&bytes),
        }
    }

    #[test]
    fn empty_manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let m = DatasetManifest::new(dir.path(), "abc");
        write_manifest(&m, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.generator_config_hash, "abc");
    }

    #[test]
    fn six_records_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut m = DatasetManifest::new(dir.path(), "digest");
        for id in 0..2 {
            for imp in 0..3 {
                m.records.push(record(dir.path(), id, imp));
            }
        }
        write_manifest(&m, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn tampered_byte_is_hash_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut m = DatasetManifest::new(dir.path(), "");
        m.records.push(record(dir.path(), 0, 0));
        write_manifest(&m, &path).unwrap();
        let file = dir.path().join(&m.records[0].path);
        let mut bytes = std::fs::read(&file).unwrap();
        bytes[0] ^= 0x01;
        std::fs::write(&file, &bytes).unwrap();
        // Oracle: digest of the flipped bytes differs from the recorded one.
        assert_ne!(sha256_hex(&bytes), m.records[0].sha256);
        let err = read_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::HashMismatch { .. }), "{err}");
        assert_eq!(err.code(), 11);
    }

    #[test]
    fn missing_file_and_duplicates_have_distinct_codes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut m = DatasetManifest::new(dir.path(), "");
        m.records.push(record(dir.path(), 0, 0));
        write_manifest(&m, &path).unwrap();
        std::fs::remove_file(dir.path().join(&m.records[0].path)).unwrap();
        let missing = read_manifest(&path).unwrap_err();
        assert!(matches!(missing, Error::MissingFile(_)));

        let dup = m.records[0].clone();
        m.records.push(dup);
        let err = write_manifest(&m, &path).unwrap_err();
        assert!(matches!(err, Error::DuplicateKey { id: 0, imp: 0 }));
        assert_ne!(missing.code(), err.code());
    }
}
