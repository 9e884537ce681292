//! Binary persistence of path ensembles.
//!
//! Fixed little-endian layout, magic "NRPB", version 1:
//!
//! ```text
//! magic    4 bytes        "NRPB"
//! version  u32
//! n_paths  u64
//! n_points u64
//! d        u32
//! reserved u32            zero
//! epsilon  f64
//! times    n_points f64
//! per path:
//!   x      n_points f64
//!   y      n_points * d f64
//!   x_qv   (n_points - 1) f64
//! ```

use super::Ensemble;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"NRPB";
const VERSION: u32 = 1;
/// Refuses to allocate for obviously corrupt headers.
const MAX_ELEMENTS: u64 = 1 << 33;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an ensemble file (bad magic)")]
    BadMagic,
    #[error("unsupported ensemble file version {0}")]
    BadVersion(u32),
    #[error("corrupt ensemble file: {0}")]
    Corrupt(&'static str),
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn write_ensemble(path: &Path, e: &Ensemble) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(e.n_paths() as u64).to_le_bytes())?;
    w.write_all(&(e.n_points() as u64).to_le_bytes())?;
    w.write_all(&(e.d as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&e.epsilon.to_le_bytes())?;
    write_f64s(&mut w, &e.times)?;
    for p in 0..e.n_paths() {
        write_f64s(&mut w, &e.x[p])?;
        write_f64s(&mut w, &e.y[p])?;
        write_f64s(&mut w, &e.x_qv[p])?;
    }
    w.flush()
}

pub fn read_ensemble(path: &Path) -> Result<Ensemble, PersistError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PersistError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(PersistError::BadVersion(version));
    }
    let n_paths = read_u64(&mut r)?;
    let n_points = read_u64(&mut r)?;
    let d = read_u32(&mut r)? as u64;
    let _reserved = read_u32(&mut r)?;
    if n_paths == 0 || n_points < 2 || d == 0 {
        return Err(PersistError::Corrupt("empty dimensions"));
    }
    if n_paths
        .saturating_mul(n_points)
        .saturating_mul(d.max(1))
        .saturating_add(n_points)
        > MAX_ELEMENTS
    {
        return Err(PersistError::Corrupt("implausible size"));
    }
    let epsilon = f64::from_le_bytes({
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        b
    });
    let n_points = n_points as usize;
    let d = d as usize;
    let times = read_f64s(&mut r, n_points)?;
    let mut e = Ensemble {
        epsilon,
        d,
        times,
        x: Vec::with_capacity(n_paths as usize),
        y: Vec::with_capacity(n_paths as usize),
        x_qv: Vec::with_capacity(n_paths as usize),
    };
    for _ in 0..n_paths {
        e.x.push(read_f64s(&mut r, n_points)?);
        e.y.push(read_f64s(&mut r, n_points * d)?);
        e.x_qv.push(read_f64s(&mut r, n_points - 1)?);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(PersistError::Corrupt("trailing bytes"));
    }
    Ok(e)
}
