//! The released artifact `(U, XU + V)` and its on-disk format.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | offset | type      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | `[u8; 4]` | magic `b"SLCB"`               |
//! | 4      | `u32`     | format version (currently 1)  |
//! | 8      | `u64`     | `d`                           |
//! | 16     | `u64`     | `k`                           |
//! | 24     | `u64`     | `m`                           |
//! | 32     | `u64`     | `n` (released rows)           |
//! | 40     | `f64`     | `sigma`                       |
//! | 48     | `u64`     | master seed                   |
//! | 56     | `f64` × d·m′ | `U`, row-major             |
//! | …      | `f64` × n·m′ | `O = XU + V`, row-major    |

use std::io::{Read, Write};
use std::path::Path;

use crate::accounting::MechanismDims;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const BUNDLE_MAGIC: &[u8; 4] = b"SLCB";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SliceBundle {
    u: Matrix,
    o: Matrix,
    sigma: f64,
    dims: MechanismDims,
    seed: u64,
}

/// One slice: directions `theta_s` (d×k) and noisy projections `o_s` (n×k).
#[derive(Debug, Clone, PartialEq)]
pub struct SliceView {
    pub theta: Matrix,
    pub projections: Matrix,
}

impl SliceBundle {
    pub fn new(u: Matrix, o: Matrix, sigma: f64, dims: MechanismDims, seed: u64) -> Result<Self> {
        let mp = dims.m_prime();
        if u.rows() != dims.d || u.cols() != mp || o.cols() != mp {
            return Err(Error::DimensionMismatch(format!(
                "U is {}x{}, O is {}x{}, expected U {}x{mp} and O n x {mp}",
                u.rows(),
                u.cols(),
                o.rows(),
                o.cols(),
                dims.d
            )));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::domain("sigma", sigma, "(0, inf)"));
        }
        Ok(SliceBundle {
            u,
            o,
            sigma,
            dims,
            seed,
        })
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn o(&self) -> &Matrix {
        &self.o
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dims(&self) -> MechanismDims {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_rows(&self) -> usize {
        self.o.rows()
    }

    /// Splits `(U, O)` into `m` consecutive column blocks of width `k`.
    pub fn slices_view(&self) -> Vec<SliceView> {
        let k = self.dims.k;
        (0..self.dims.m)
            .map(|s| SliceView {
                theta: self.u.columns(s * k, (s + 1) * k),
                projections: self.o.columns(s * k, (s + 1) * k),
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&BUNDLE_VERSION.to_le_bytes())?;
        for v in [self.dims.d, self.dims.k, self.dims.m, self.o.rows()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.sigma.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        write_f64s(&mut w, self.u.as_slice())?;
        write_f64s(&mut w, self.o.as_slice())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Format("not a slice bundle (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != BUNDLE_VERSION {
            return Err(Error::Format(format!("unsupported bundle version {version}")));
        }
        let d = read_u64(&mut r)? as usize;
        let k = read_u64(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let sigma = read_f64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let dims = MechanismDims::new(d, k, m)?;
        let mp = dims.m_prime();
        let u = Matrix::from_vec(d, mp, read_f64s(&mut r, d * mp)?)?;
        let o = Matrix::from_vec(n, mp, read_f64s(&mut r, n * mp)?)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after bundle payload".into()));
        }
        SliceBundle::new(u, o, sigma, dims, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format("payload shorter than header promises".into()))?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bundle(d: usize, k: usize, m: usize, n: usize, salt: f64) -> SliceBundle {
        let dims = MechanismDims::new(d, k, m).unwrap();
        let u = Matrix::from_fn(d, k * m, |i, j| (i as f64 + salt) * 0.5 - j as f64);
        let o = Matrix::from_fn(n, k * m, |i, j| (i * j) as f64 / 7.0 + salt);
        SliceBundle::new(u, o, 0.75, dims, 42).unwrap()
    }

    #[test]
    fn views_partition_columns() {
        let b = bundle(4, 2, 3, 5, 0.1);
        let views = b.slices_view();
        assert_eq!(views.len(), 3);
        for (s, v) in views.iter().enumerate() {
            for i in 0..4 {
                for c in 0..2 {
                    assert_eq!(v.theta.get(i, c), b.u().get(i, s * 2 + c));
                }
            }
            for i in 0..5 {
                for c in 0..2 {
                    assert_eq!(v.projections.get(i, c), b.o().get(i, s * 2 + c));
                }
            }
        }
        let single = bundle(4, 4, 1, 2, 0.0);
        let v = single.slices_view();
        assert_eq!(v.len(), 1);
        assert_eq!(&v[0].theta, single.u());
        assert_eq!(&v[0].projections, single.o());
        let lines = bundle(3, 1, 3, 2, 0.0).slices_view();
        assert!(lines.iter().all(|v| v.theta.cols() == 1));
    }

    #[test]
    fn rejects_corrupt_input() {
        let b = bundle(2, 1, 2, 3, 1.0);
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(SliceBundle::read_from(bad.as_slice()).is_err());
        assert!(SliceBundle::read_from(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(SliceBundle::read_from(long.as_slice()).is_err());
        let mut ver = buf;
        ver[4] = 9;
        assert!(SliceBundle::read_from(ver.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip(d in 1usize..6, k_frac in 0.0f64..1.0, m in 1usize..4, n in 0usize..6, salt in -3.0f64..3.0) {
            let k = 1 + ((d - 1) as f64 * k_frac) as usize;
            let b = bundle(d, k, m, n, salt);
            let mut buf = Vec::new();
            b.write_to(&mut buf).unwrap();
            prop_assert_eq!(buf.len(), 56 + 8 * (d + n) * k * m);
            let back = SliceBundle::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back, b);
        }
    }
}
