use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::HasParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSCK";
const VERSION: u32 = 1;

/// Write every parameter and buffer of `model` to a versioned checkpoint:
/// magic, version, config hash, seed, then `path -> shape + f64 LE payload`
/// entries in visit order. Values are stored at full precision so a resumed
/// run is bit-identical to an uninterrupted one.
pub fn save_checkpoint(
    path: &Path,
    model: &mut dyn HasParams,
    config_hash: u64,
    seed: u64,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let mut io_err: Option<std::io::Error> = None;
    {
        let mut write_all = |bytes: &[u8]| {
            if io_err.is_none() {
                if let Err(e) = w.write_all(bytes) {
                    io_err = Some(e);
                }
            }
        };
        write_all(MAGIC);
        write_all(&VERSION.to_le_bytes());
        write_all(&config_hash.to_le_bytes());
        write_all(&seed.to_le_bytes());

        let mut count: u32 = 0;
        model.visit_all(&mut |_, _| count += 1);
        write_all(&count.to_le_bytes());

        model.visit_all(&mut |name, p| {
            let name_bytes = name.as_bytes();
            write_all(&(name_bytes.len() as u32).to_le_bytes());
            write_all(name_bytes);
            let shape = p.value.shape();
            write_all(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                write_all(&(d as u32).to_le_bytes());
            }
            for &v in p.value.iter() {
                write_all(&v.to_le_bytes());
            }
        });
    }
    if let Some(e) = io_err {
        return Err(Error::io(path.display().to_string(), e));
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`] into `model`, verifying
/// parameter names and shapes. Returns `(config_hash, seed)`.
pub fn load_checkpoint(path: &Path, model: &mut dyn HasParams) -> Result<(u64, u64)> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::Checkpoint(format!("{}: {reason}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let config_hash = read_u64(&mut r, path)?;
    let seed = read_u64(&mut r, path)?;
    let count = read_u32(&mut r, path)? as usize;

    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad("non-utf8 parameter name"))?;
        let ndim = read_u32(&mut r, path)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(&mut r, path)? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push((name, dims, data));
    }

    let mut idx = 0usize;
    let mut mismatch: Option<String> = None;
    model.visit_all(&mut |name, p| {
        if mismatch.is_some() {
            return;
        }
        if idx >= entries.len() {
            mismatch = Some(format!("missing entry for `{name}`"));
            return;
        }
        let (ename, edims, edata) = &entries[idx];
        if ename != name {
            mismatch = Some(format!("expected `{name}`, found `{ename}`"));
            return;
        }
        if edims.as_slice() != p.value.shape() {
            mismatch = Some(format!(
                "shape mismatch for `{name}`: {:?} vs {:?}",
                edims,
                p.value.shape()
            ));
            return;
        }
        for (dst, src) in p.value.iter_mut().zip(edata.iter()) {
            *dst = *src;
        }
        idx += 1;
    });
    if let Some(m) = mismatch {
        return Err(bad(&m));
    }
    if idx != entries.len() {
        return Err(bad("extra entries in checkpoint"));
    }
    Ok((config_hash, seed))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(u64::from_le_bytes(buf))
}
