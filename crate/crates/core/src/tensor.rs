//! Dense row-major tensors and the `TGU1` binary tensor format.
//!
//! Values live in memory as `f64`. On disk they are stored as little-endian
//! `f32`:
//!
//! ```text
//! magic    4 bytes   "TGU1"
//! dtype    u32 LE    0 = f32
//! rank     u32 LE
//! dims     rank x u64 LE
//! payload  product(dims) x f32 LE, row-major
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TGU1";
pub const DTYPE_F32: u32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that every dim is positive and that the
    /// value count matches. Finiteness is checked separately by
    /// [`Tensor::check_finite`] so that intermediate results can be built
    /// without paying for a scan.
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("rank must be at least 1".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("dims {dims:?} contain a zero size")));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("dims {dims:?} overflow")))?;
        if count != values.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {count} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(vec![n], values)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero rows".into()))?;
        let cols = first.as_ref().len();
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: format!("row {i} of stacked matrix"),
                    expected: cols,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, values)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Number of rows when viewed as a matrix (first dim).
    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    /// Row width when viewed as a matrix (product of trailing dims).
    pub fn cols(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { what: what.into() })
        }
    }

    /// Rounds every value through `f32`, matching what a save/load cycle
    /// produces.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = *v as f32 as f64;
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(DTYPE_F32).unwrap();
        out.write_u32::<LittleEndian>(self.dims.len() as u32).unwrap();
        for &d in &self.dims {
            out.write_u64::<LittleEndian>(d as u64).unwrap();
        }
        for &v in &self.values {
            out.write_f32::<LittleEndian>(v as f32).unwrap();
        }
        out
    }

    /// Decodes the binary format. `origin` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let truncated = |expected: u64| Error::Truncated {
            path: origin.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated(4));
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        if &magic != MAGIC {
            return Err(Error::BadMagic {
                path: origin.to_path_buf(),
                found: magic,
            });
        }
        let mut cur = Cursor::new(&bytes[4..]);
        let dtype = cur.read_u32::<LittleEndian>().map_err(|_| truncated(8))?;
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype {
                path: origin.to_path_buf(),
                code: dtype,
            });
        }
        let rank = cur.read_u32::<LittleEndian>().map_err(|_| truncated(12))? as usize;
        let header = 12u64 + 8 * rank as u64;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            let d = cur.read_u64::<LittleEndian>().map_err(|_| truncated(header))?;
            dims.push(usize::try_from(d).map_err(|_| Error::Shape(format!("dim {d} too large")))?);
        }
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::Shape(format!("dims {dims:?} overflow")))?;
        let expected = header + 4 * count;
        if (bytes.len() as u64) < expected {
            return Err(truncated(expected));
        }
        let mut values = vec![0f32; count as usize];
        cur.read_f32_into::<LittleEndian>(&mut values)
            .map_err(|_| truncated(expected))?;
        let mut rest = Vec::new();
        cur.read_to_end(&mut rest).ok();
        if !rest.is_empty() {
            return Err(Error::Shape(format!(
                "{}: {} trailing bytes after payload",
                origin.display(),
                rest.len()
            )));
        }
        let t = Tensor::new(dims, values.into_iter().map(f64::from).collect())?;
        t.check_finite(&origin.display().to_string())?;
        Ok(t)
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn origin() -> PathBuf {
        PathBuf::from("mem.bin")
    }

    #[test]
    fn identity_round_trip() {
        let t = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let back = Tensor::from_bytes(&t.to_bytes(), &origin()).unwrap();
        assert_eq!(back.dims(), &[2, 2]);
        assert_eq!(back, Tensor::identity(2));
    }

    #[test]
    fn exact_layout() {
        let t = Tensor::vector(vec![1.5]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"TGU1");
        assert_eq!(&b[4..8], &[0, 0, 0, 0]);
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..20], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[20..24], &1.5f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn bad_magic() {
        let mut b = Tensor::identity(2).to_bytes();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            Tensor::from_bytes(&b, &origin()),
            Err(Error::BadMagic { found, .. }) if &found == b"XXXX"
        ));
    }

    #[test]
    fn truncated_dims() {
        // header declares rank 3 but only two dims and no payload follow
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&2u64.to_le_bytes());
        b.extend_from_slice(&2u64.to_le_bytes());
        assert!(matches!(
            Tensor::from_bytes(&b, &origin()),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn truncated_payload() {
        let b = Tensor::identity(3).to_bytes();
        let cut = &b[..b.len() - 4];
        assert!(matches!(
            Tensor::from_bytes(cut, &origin()),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let t = Tensor::vector(vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(
            Tensor::from_bytes(&t.to_bytes(), &origin()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn unsupported_dtype() {
        let mut b = Tensor::identity(2).to_bytes();
        b[4] = 7;
        assert!(matches!(
            Tensor::from_bytes(&b, &origin()),
            Err(Error::UnsupportedDtype { code: 7, .. })
        ));
    }

    #[test]
    fn shape_checks() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
