//! `AFD1` dataset files (little-endian):
//!
//! ```text
//! magic "AFD1" | u16 version = 1 | u32 state_dim | u32 n_trajectories
//! per trajectory: u32 T | T x state_dim f32 states (row-major) | T f32 rewards
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{ActionFreeDataset, DatasetError, Result, Trajectory};

pub const MAGIC: &[u8; 4] = b"AFD1";
pub const VERSION: u16 = 1;

pub fn write_dataset<W: Write>(dataset: &ActionFreeDataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.state_dim() as u32).to_le_bytes())?;
    w.write_all(&(dataset.len() as u32).to_le_bytes())?;
    for t in dataset.trajectories() {
        w.write_all(&(t.len() as u32).to_le_bytes())?;
        for v in t.states().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for r in t.rewards() {
            w.write_all(&r.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save(dataset: &ActionFreeDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8], on_eof: DatasetError) -> Result<()> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(on_eof),
        Err(e) => Err(e.into()),
    }
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<ActionFreeDataset> {
    let mut magic = [0u8; 4];
    fill(&mut r, &mut magic, DatasetError::TruncatedHeader)?;
    if &magic != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let mut b2 = [0u8; 2];
    fill(&mut r, &mut b2, DatasetError::TruncatedHeader)?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let mut b4 = [0u8; 4];
    fill(&mut r, &mut b4, DatasetError::TruncatedHeader)?;
    let state_dim = u32::from_le_bytes(b4) as usize;
    fill(&mut r, &mut b4, DatasetError::TruncatedHeader)?;
    let n = u32::from_le_bytes(b4) as usize;
    if state_dim == 0 {
        return Err(DatasetError::InvalidTrajectory {
            index: 0,
            reason: "state_dim is zero".into(),
        });
    }

    let mut trajectories = Vec::with_capacity(n.min(1 << 16));
    for index in 0..n {
        fill(&mut r, &mut b4, DatasetError::TruncatedPayload(index))?;
        let len = u32::from_le_bytes(b4) as usize;
        let mut states = vec![0u8; len * state_dim * 4];
        fill(&mut r, &mut states, DatasetError::TruncatedPayload(index))?;
        let mut rewards = vec![0u8; len * 4];
        fill(&mut r, &mut rewards, DatasetError::TruncatedPayload(index))?;
        let states = f32s(&states);
        let rewards = f32s(&rewards);
        if !states.iter().chain(&rewards).all(|v| v.is_finite()) {
            return Err(DatasetError::NonFinite(index));
        }
        let states = Array2::from_shape_vec((len, state_dim), states).expect("sized buffer");
        let t = Trajectory::new(states, rewards).map_err(|reason| DatasetError::InvalidTrajectory { index, reason })?;
        trajectories.push(t);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DatasetError::TrailingBytes(n.saturating_sub(1)));
    }
    ActionFreeDataset::new(trajectories)
}

pub fn load(path: &Path) -> Result<ActionFreeDataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
