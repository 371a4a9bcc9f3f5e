//! `AFGC` parameter checkpoints.
//!
//! Layout (little-endian): magic `AFGC`, `u16` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u32` rank, `rank` x `u32`
//! dims, and the row-major `f32` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::params::ParamStore;
use super::{NnError, Real, Result};

pub const MAGIC: &[u8; 4] = b"AFGC";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_checkpoint<F: Real, W: Write>(store: &ParamStore<F>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&2u32.to_le_bytes())?;
        for d in p.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in p.value.iter() {
            w.write_all(&(v.f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(store, &mut w)?;
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => bad(format!("truncated while reading {what}")),
        _ => NnError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads raw entries without any shape expectations.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<CheckpointEntry>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut v = [0u8; 2];
    read_exact(&mut r, &mut v, "version")?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = read_u32(&mut r, "entry count")? as usize;
    let mut entries = Vec::with_capacity(n.min(4096));
    for i in 0..n {
        let len = read_u32(&mut r, "name length")? as usize;
        let mut name = vec![0u8; len];
        read_exact(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| bad(format!("entry {i}: name is not UTF-8")))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        if rank > 8 {
            return Err(bad(format!("entry {name}: rank {rank} unsupported")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, "shape")? as usize);
        }
        let count: usize = shape.iter().product();
        let mut bytes = vec![0u8; count * 4];
        read_exact(&mut r, &mut bytes, &format!("payload of {name}"))?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("entry {name}: non-finite payload")));
        }
        entries.push(CheckpointEntry { name, shape, values });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after last entry"));
    }
    Ok(entries)
}

/// Loads values into `store`, validating every name and shape against it.
pub fn load_checkpoint<F: Real>(store: &mut ParamStore<F>, path: &Path) -> Result<()> {
    let entries = read_checkpoint(BufReader::new(File::open(path)?))?;
    apply_entries(store, &entries)
}

pub fn apply_entries<F: Real>(store: &mut ParamStore<F>, entries: &[CheckpointEntry]) -> Result<()> {
    if entries.len() != store.len() {
        return Err(bad(format!(
            "expected {} entries, found {}",
            store.len(),
            entries.len()
        )));
    }
    for (p, e) in store.iter_mut().zip(entries) {
        if p.name != e.name {
            return Err(bad(format!("expected entry {}, found {}", p.name, e.name)));
        }
        if e.shape != p.shape() {
            return Err(bad(format!(
                "entry {}: expected shape {:?}, found {:?}",
                p.name,
                p.shape(),
                e.shape
            )));
        }
        p.value = Array2::from_shape_vec((e.shape[0], e.shape[1]), e.values.iter().map(|&v| F::of(v as f64)).collect())
            .expect("validated shape");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.w", array![[1.0, 2.0], [3.0, -4.5]]);
        s.add("a.b", array![[0.25, 0.0]]);
        s
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&store(), &mut buf).unwrap();
        let entries = read_checkpoint(&buf[..]).unwrap();
        let mut other = ParamStore::<f32>::new();
        other.add("a.w", Array2::zeros((2, 3)));
        other.add("a.b", Array2::zeros((1, 2)));
        assert!(apply_entries(&mut other, &entries).is_err());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut buf = Vec::new();
        write_checkpoint(&store(), &mut buf).unwrap();
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(read_checkpoint(&corrupt[..]).unwrap_err().to_string().contains("bad magic"));
        let short = &buf[..buf.len() - 3];
        assert!(read_checkpoint(short).unwrap_err().to_string().contains("truncated"));
    }
}
