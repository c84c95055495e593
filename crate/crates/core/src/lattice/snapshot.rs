//! YMF1 binary snapshots of a gauge potential.
//!
//! Layout (little-endian): magic `YMF1`, `m: u32`, `n: u32`, `extents: [u32; m]`,
//! `h: f64`, `origin: [f64; m]`, `tau: f64`, then the potential's entries
//! site-major, component-major, each `n x n` block row-major as `(re, im)` pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;

use super::{GaugePotential, Grid, LieField};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"YMF1";

pub fn write_snapshot<W: Write>(mut w: W, a: &GaugePotential, tau: f64) -> Result<()> {
    let g = a.grid();
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(g.m() as u32)?;
    w.write_u32::<LittleEndian>(a.n() as u32)?;
    for &e in g.extents() {
        w.write_u32::<LittleEndian>(e as u32)?;
    }
    w.write_f64::<LittleEndian>(g.h())?;
    for &o in g.origin() {
        w.write_f64::<LittleEndian>(o)?;
    }
    w.write_f64::<LittleEndian>(tau)?;
    for z in a.as_field().data() {
        w.write_f64::<LittleEndian>(z.re)?;
        w.write_f64::<LittleEndian>(z.im)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<(GaugePotential, f64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let m = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u32::<LittleEndian>()? as usize;
    if !(2..=64).contains(&m) || n == 0 || n > 64 {
        return Err(Error::Format(format!("implausible header m={m} n={n}")));
    }
    let extents = (0..m)
        .map(|_| r.read_u32::<LittleEndian>().map(|e| e as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let h = r.read_f64::<LittleEndian>()?;
    let origin = (0..m)
        .map(|_| r.read_f64::<LittleEndian>())
        .collect::<std::io::Result<Vec<_>>>()?;
    let tau = r.read_f64::<LittleEndian>()?;
    let grid = Grid::new(extents, h, origin)?;
    let len = grid.sites() * m * n * n;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let re = r.read_f64::<LittleEndian>()?;
        let im = r.read_f64::<LittleEndian>()?;
        data.push(Complex64::new(re, im));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after field data".into()));
    }
    let field = LieField::from_data(&grid, n, m, data)?;
    Ok((GaugePotential::from_field(field)?, tau))
}

pub fn save(path: &Path, a: &GaugePotential, tau: f64) -> Result<()> {
    write_snapshot(BufWriter::new(File::create(path)?), a, tau)
}

pub fn load(path: &Path) -> Result<(GaugePotential, f64)> {
    read_snapshot(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::random_lie;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let g = Grid::new(vec![4, 5], 0.3, vec![0.1, -0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = GaugePotential::from_fn(&g, 2, |_, _| random_lie(2, &mut rng)).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &a, 0.125).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 8 + 16 + 8 + 20 * 2 * 4 * 16);
        assert_eq!(&buf[..4], b"YMF1");
        let (b, tau) = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(tau, 0.125);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corrupt_input() {
        let g = Grid::cubic(2, 4, 1.0).unwrap();
        let a = GaugePotential::zeros(&g, 1);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &a, 0.0).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_snapshot(bad.as_slice()), Err(Error::Format(_))));
        assert!(read_snapshot(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_snapshot(long.as_slice()).is_err());
    }
}
