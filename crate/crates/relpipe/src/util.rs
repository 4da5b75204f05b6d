//! Small shared helpers: stable hashing for reproducible keyed draws, seed
//! derivation, and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// FNV-1a 64-bit accumulator with a splitmix64 finalizer.
///
/// Used wherever the pipeline needs a hash that is stable across runs,
/// platforms, and library versions (per-candidate sampling keys, per-scene
/// seeds). `std`'s hashers make no such guarantee.
#[derive(Clone, Copy)]
pub struct StableHasher(u64);

impl StableHasher {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        StableHasher(Self::OFFSET)
    }

    pub fn write_bytes(mut self, bytes: &[u8]) -> Self {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
        self
    }

    pub fn write_u32(self, v: u32) -> Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn write_u64(self, v: u64) -> Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn write_str(self, s: &str) -> Self {
        // Length prefix keeps concatenated strings unambiguous.
        self.write_u64(s.len() as u64).write_bytes(s.as_bytes())
    }

    pub fn finish(self) -> u64 {
        splitmix64(self.0)
    }
}

impl Default for StableHasher {
    fn default() -> Self {
        Self::new()
    }
}

/// One splitmix64 step; also suitable for deriving independent sub-seeds
/// from a master seed and a stream index.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed for an independent random stream.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

/// Maps a 64-bit hash to a uniform double in [0, 1).
pub fn unit_f64(hash: u64) -> f64 {
    (hash >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Writes `bytes` to `path` atomically: a sibling temp file is written, synced,
/// then renamed over the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}
