//! Content-addressed on-disk embedding cache.
//!
//! Key: SHA-256 of `encoder_id ‖ 0x00 ‖ text`. Entries live at
//! `<root>/<hex[0..2]>/<hex[2..4]>/<hex>.emb`. Entry layout, little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `RDSC` |
//! | 1 | format version |
//! | 3 | reserved, zero |
//! | 32 | key |
//! | 4 | dim (u32) |
//! | 8 | created_at, unix seconds (i64) |
//! | 8·dim | payload (f64) |
//! | 8 | first 8 bytes of SHA-256 over everything above |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CACHE_MAGIC: [u8; 4] = *b"RDSC";
pub const CACHE_FORMAT_VERSION: u8 = 1;
pub const CACHE_DIR_ENV: &str = "RDSKIT_CACHE_DIR";
const HEADER_LEN: usize = 4 + 1 + 3 + 32 + 4 + 8;
const CHECKSUM_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("refusing to cache an invalid vector: {0}")]
    InvalidVector(String),
    #[error("cache I/O at {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CacheKey = [u8; 32];

pub fn cache_key(encoder_id: &str, text: &str) -> CacheKey {
    let mut h = Sha256::new();
    h.update(encoder_id.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    h.finalize().into()
}

/// `$RDSKIT_CACHE_DIR`, else `$XDG_CACHE_HOME/rdskit`, else `~/.cache/rdskit`.
pub fn default_cache_dir() -> PathBuf {
    match std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
        Some(dir) => PathBuf::from(dir),
        None => user_cache_dir(),
    }
}

/// `$XDG_CACHE_HOME/rdskit`, else `~/.cache/rdskit`.
pub fn user_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir).join("rdskit");
    }
    match std::env::var_os("HOME").filter(|d| !d.is_empty()) {
        Some(home) => PathBuf::from(home).join(".cache").join("rdskit"),
        None => PathBuf::from(".rdskit-cache"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub vector: Vec<f64>,
    pub created_at: i64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    root: PathBuf,
}

impl EmbeddingCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn from_env() -> Self {
        Self::new(default_cache_dir())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let hex = hex::encode(key);
        self.root.join(&hex[0..2]).join(&hex[2..4]).join(format!("{hex}.emb"))
    }

    pub fn lookup(&self, encoder_id: &str, text: &str) -> Option<Vec<f64>> {
        self.entry(encoder_id, text).map(|e| e.vector)
    }

    /// Reads an entry. Corrupt or unreadable entries are reported and
    /// treated as absent.
    pub fn entry(&self, encoder_id: &str, text: &str) -> Option<CacheEntry> {
        let key = cache_key(encoder_id, text);
        let path = self.path_for(&key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cache entry {} unreadable: {e}", path.display());
                return None;
            }
        };
        match decode_entry(&bytes, &key) {
            Ok(entry) => Some(entry),
            Err(why) => {
                log::warn!("cache entry {} ignored: {why}", path.display());
                None
            }
        }
    }

    /// Stores a vector. Re-storing an identical vector leaves the entry as is.
    pub fn store(&self, encoder_id: &str, text: &str, vector: &[f64]) -> Result<(), CacheError> {
        if vector.is_empty() {
            return Err(CacheError::InvalidVector("empty".into()));
        }
        if let Some(i) = vector.iter().position(|x| !x.is_finite()) {
            return Err(CacheError::InvalidVector(format!("value {i} is not finite")));
        }
        if let Some(existing) = self.entry(encoder_id, text) {
            let same = existing.vector.len() == vector.len()
                && existing
                    .vector
                    .iter()
                    .zip(vector)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if same {
                return Ok(());
            }
        }
        let key = cache_key(encoder_id, text);
        let path = self.path_for(&key);
        let dir = path.parent().expect("entry path has a parent");
        let io_err = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(io_err)?;
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as i64);
        let bytes = encode_entry(&key, vector, created_at);
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
        tmp.write_all(&bytes).map_err(io_err)?;
        tmp.as_file().sync_all().map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        Ok(())
    }

    /// Number of entry files under the root.
    pub fn len(&self) -> usize {
        let Ok(level1) = fs::read_dir(&self.root) else {
            return 0;
        };
        level1
            .flatten()
            .filter_map(|a| fs::read_dir(a.path()).ok())
            .flat_map(|l2| l2.flatten())
            .filter_map(|b| fs::read_dir(b.path()).ok())
            .flat_map(|l3| l3.flatten())
            .filter(|f| f.path().extension().is_some_and(|x| x == "emb"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn checksum(bytes: &[u8]) -> [u8; CHECKSUM_LEN] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; CHECKSUM_LEN];
    out.copy_from_slice(&digest[..CHECKSUM_LEN]);
    out
}

fn encode_entry(key: &CacheKey, vector: &[f64], created_at: i64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * vector.len() + CHECKSUM_LEN);
    out.extend_from_slice(&CACHE_MAGIC);
    out.push(CACHE_FORMAT_VERSION);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(key);
    out.extend_from_slice(&(vector.len() as u32).to_le_bytes());
    out.extend_from_slice(&created_at.to_le_bytes());
    for x in vector {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let sum = checksum(&out);
    out.extend_from_slice(&sum);
    out
}

fn decode_entry(bytes: &[u8], expected: &CacheKey) -> Result<CacheEntry, String> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err("truncated".into());
    }
    let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if checksum(body) != sum {
        return Err("checksum mismatch".into());
    }
    if body[..4] != CACHE_MAGIC {
        return Err("bad magic".into());
    }
    if body[4] != CACHE_FORMAT_VERSION {
        return Err(format!("unsupported format version {}", body[4]));
    }
    let key: CacheKey = body[8..40].try_into().expect("32 bytes");
    if &key != expected {
        return Err("key mismatch".into());
    }
    let dim = u32::from_le_bytes(body[40..44].try_into().expect("4 bytes")) as usize;
    let created_at = i64::from_le_bytes(body[44..52].try_into().expect("8 bytes"));
    let payload = &body[HEADER_LEN..];
    if dim == 0 || payload.len() != dim * 8 {
        return Err("payload length does not match dimension".into());
    }
    let vector: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if vector.iter().any(|x| !x.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(CacheEntry {
        key,
        vector,
        created_at,
    })
}
