//! Binary gram-matrix cache.
//!
//! Layout: a 16-byte header (8-byte magic, u32 LE version, 4 reserved
//! bytes), the graph count as u64 LE, the 32-byte architecture fingerprint,
//! then `n²` f64 LE values in row-major order. Only raw (unnormalized)
//! matrices are cached; the loader rejects fingerprint mismatches so a
//! stale file can never masquerade as a different architecture's kernel.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{ArchConfig, GramMatrix};
use crate::error::KernelError;

const MAGIC: &[u8; 8] = b"GNTKGRM\0";
const VERSION: u32 = 1;

/// Serializes a raw gram matrix to `path`.
pub fn write_gram(path: impl AsRef<Path>, gram: &GramMatrix) -> Result<(), KernelError> {
    if gram.normalized() {
        return Err(KernelError::Cache(
            "refusing to cache a normalized gram matrix".into(),
        ));
    }
    let n = gram.len();
    let mut out = Vec::with_capacity(16 + 8 + 32 + n * n * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&gram.arch().fingerprint());
    for v in gram.values().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Loads a cached gram matrix, verifying the header and that the stored
/// fingerprint matches `arch`.
pub fn read_gram(
    path: impl AsRef<Path>,
    arch: &ArchConfig,
    dataset_name: &str,
) -> Result<GramMatrix, KernelError> {
    let mut f = std::fs::File::open(path)?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf)?;
    if buf.len() < 16 + 8 + 32 {
        return Err(KernelError::Cache("file too short".into()));
    }
    if &buf[0..8] != MAGIC {
        return Err(KernelError::Cache("bad magic".into()));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(KernelError::Cache(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let n = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
    let stored_fp: [u8; 32] = buf[24..56].try_into().unwrap();
    if stored_fp != arch.fingerprint() {
        return Err(KernelError::Cache(
            "architecture fingerprint mismatch".into(),
        ));
    }
    let body = &buf[56..];
    let expected = n
        .checked_mul(n)
        .and_then(|e| e.checked_mul(8))
        .ok_or_else(|| KernelError::Cache("graph count overflow".into()))?;
    if body.len() != expected {
        return Err(KernelError::Cache(format!(
            "expected {expected} value bytes, found {}",
            body.len()
        )));
    }
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let off = (i * n + j) * 8;
            values[[i, j]] = f64::from_le_bytes(body[off..off + 8].try_into().unwrap());
        }
    }
    Ok(GramMatrix::from_parts(
        values,
        arch.clone(),
        dataset_name.to_string(),
        false,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Scaling;

    fn sample() -> GramMatrix {
        let arch = ArchConfig::new(2, 1, Scaling::Average, false, 2.0).unwrap();
        let values = ndarray::array![[2.0, 0.5], [0.5, 3.0]];
        GramMatrix::from_parts(values, arch, "sample".into(), false)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gram.bin");
        let gram = sample();
        write_gram(&path, &gram).unwrap();
        let loaded = read_gram(&path, gram.arch(), "sample").unwrap();
        assert_eq!(gram.values(), loaded.values());
        assert!(!loaded.normalized());
    }

    #[test]
    fn rejects_fingerprint_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gram.bin");
        let gram = sample();
        write_gram(&path, &gram).unwrap();
        let other = ArchConfig::new(3, 1, Scaling::Average, false, 2.0).unwrap();
        let err = read_gram(&path, &other, "sample").unwrap_err();
        assert!(matches!(err, KernelError::Cache(_)), "{err}");
    }

    #[test]
    fn rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gram.bin");
        let gram = sample();
        write_gram(&path, &gram).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_gram(&path, gram.arch(), "sample").is_err());
    }

    #[test]
    fn refuses_normalized_matrices() {
        let gram = crate::kernel::normalize_gram(&sample()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(write_gram(dir.path().join("g.bin"), &gram).is_err());
    }
}
