//! Canonical on-disk record format and corpus import.
//!
//! A record file is little-endian binary: magic `VIB1`, u32 sample count,
//! f64 sample rate in Hz, then f32 samples. One record per file. A corpus is
//! a directory of record files plus a CSV manifest with header
//! `file,label,condition` mapping each file to its class label and operating
//! condition.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::signal::RawRecord;

const MAGIC: &[u8; 4] = b"VIB1";

/// Write one record file.
pub fn write_record(path: &Path, samples: &[f64], sample_rate_hz: f64) -> Result<()> {
    if samples.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "record too long for format: {} samples",
            samples.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(samples.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&sample_rate_hz.to_le_bytes()).map_err(io_err)?;
    for &s in samples {
        w.write_all(&(s as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read one record file, returning its samples and sample rate.
pub fn read_record(path: &Path) -> Result<(Vec<f64>, f64)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let malformed = |what: &str| Error::MalformedRecord {
        path: path.display().to_string(),
        reason: what.to_string(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| malformed("truncated header"))?;
    if &magic != MAGIC {
        return Err(malformed("bad magic (expected VIB1)"));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)
        .map_err(|_| malformed("truncated sample count"))?;
    let count = u32::from_le_bytes(buf4) as usize;
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)
        .map_err(|_| malformed("truncated sample rate"))?;
    let rate = f64::from_le_bytes(buf8);
    if !(rate.is_finite() && rate > 0.0) {
        return Err(malformed("sample rate must be positive and finite"));
    }

    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)
        .map_err(|_| malformed("truncated samples"))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(malformed("trailing bytes after samples"));
    }
    let samples = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((samples, rate))
}

/// One manifest row.
#[derive(Debug, Clone, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub label: usize,
    pub condition: String,
}

/// Parse a `file,label,condition` manifest CSV.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let headers = rdr
        .headers()
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["file", "label", "condition"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Manifest(format!(
            "{}: header must be 'file,label,condition', got '{}'",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for row in rdr.deserialize() {
        let entry: ManifestEntry =
            row.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Manifest(format!("{}: empty manifest", path.display())));
    }
    Ok(entries)
}

/// Load every record a manifest names, attaching labels and condition tags.
/// Record paths are resolved relative to `dir`.
pub fn import_corpus(dir: &Path, manifest: &Path) -> Result<Vec<RawRecord>> {
    let entries = read_manifest(manifest)?;
    let mut records = Vec::with_capacity(entries.len());
    for entry in entries {
        let path = dir.join(&entry.file);
        let (samples, sample_rate_hz) = read_record(&path)?;
        records.push(RawRecord {
            samples,
            sample_rate_hz,
            class_label: entry.label,
            condition_tag: entry.condition,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vib");
        let samples: Vec<f64> = (0..100).map(|i| (i as f64) * 0.25 - 10.0).collect();
        write_record(&path, &samples, 12_000.0).unwrap();
        let (back, rate) = read_record(&path).unwrap();
        assert_eq!(rate, 12_000.0);
        assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            // f32 payload: quarter-steps in this range are exact.
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.vib");
        std::fs::write(&bad, b"NOPE").unwrap();
        assert!(matches!(
            read_record(&bad),
            Err(Error::MalformedRecord { .. })
        ));

        let trunc = dir.path().join("trunc.vib");
        let mut f = File::create(&trunc).unwrap();
        f.write_all(b"VIB1").unwrap();
        f.write_all(&10u32.to_le_bytes()).unwrap();
        f.write_all(&12_000.0f64.to_le_bytes()).unwrap();
        f.write_all(&[0u8; 8]).unwrap(); // only 2 of 10 samples
        drop(f);
        assert!(matches!(
            read_record(&trunc),
            Err(Error::MalformedRecord { .. })
        ));
    }

    #[test]
    fn manifest_roundtrip_and_import() {
        let dir = tempfile::tempdir().unwrap();
        for (name, label, cond) in [("x0.vib", 0usize, "0hp"), ("x1.vib", 1usize, "1hp")] {
            let samples: Vec<f64> = (0..50).map(|i| i as f64).collect();
            write_record(&dir.path().join(name), &samples, 48_000.0).unwrap();
            let _ = (label, cond);
        }
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(
            &manifest,
            "file,label,condition\nx0.vib,0,0hp\nx1.vib,1,1hp\n",
        )
        .unwrap();

        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].label, 1);

        let corpus = import_corpus(dir.path(), &manifest).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].class_label, 0);
        assert_eq!(corpus[1].condition_tag, "1hp");
        assert_eq!(corpus[0].samples.len(), 50);
    }

    #[test]
    fn manifest_missing_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, "file,label,condition\nghost.vib,0,0hp\n").unwrap();
        assert!(matches!(
            import_corpus(dir.path(), &manifest),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn manifest_bad_header_fails() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, "path,cls,tag\na.vib,0,0hp\n").unwrap();
        assert!(matches!(
            read_manifest(&manifest),
            Err(Error::Manifest(_))
        ));
    }
}
