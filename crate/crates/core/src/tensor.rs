//! Dense row-major f32 tensor with axis-role metadata and a bit-exact binary
//! file format.
//!
//! The on-disk format ("TNSR") is deliberately minimal so that any language
//! can parse it: magic `b"TNSR"`, little-endian u32 rank, rank little-endian
//! u32 extents, then the raw little-endian f32 payload in row-major order.
//! Axis roles are runtime metadata only and are not serialized; [`Tensor::load`]
//! returns `Generic` roles which callers re-tag with [`Tensor::with_roles`].
//!
//! Tensors are immutable in practice: every operation in this crate builds a
//! new tensor, so sharing across threads is safe.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Semantic tag for one tensor axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisRole {
    Batch,
    Channel,
    Time,
    Height,
    Width,
    Generic,
}

/// Role layout for a single-clip tensor `(C, T, H, W)`.
pub fn cthw() -> Vec<AxisRole> {
    vec![AxisRole::Channel, AxisRole::Time, AxisRole::Height, AxisRole::Width]
}

/// Role layout for a batched clip tensor `(B, C, T, H, W)`.
pub fn bcthw() -> Vec<AxisRole> {
    vec![
        AxisRole::Batch,
        AxisRole::Channel,
        AxisRole::Time,
        AxisRole::Height,
        AxisRole::Width,
    ]
}

/// Role layout for a per-frame batch `(N, C, H, W)`.
pub fn bchw() -> Vec<AxisRole> {
    vec![AxisRole::Batch, AxisRole::Channel, AxisRole::Height, AxisRole::Width]
}

/// Role layout for a single image `(C, H, W)`.
pub fn chw() -> Vec<AxisRole> {
    vec![AxisRole::Channel, AxisRole::Height, AxisRole::Width]
}

/// `rank` untagged axes.
pub fn generic(rank: usize) -> Vec<AxisRole> {
    vec![AxisRole::Generic; rank]
}

#[derive(Debug, Clone)]
pub struct Tensor {
    dims: Vec<usize>,
    roles: Vec<AxisRole>,
    data: Vec<f32>,
}

const MAGIC: &[u8; 4] = b"TNSR";

impl Tensor {
    fn check_dims(dims: &[usize], roles: &[AxisRole]) -> Result<usize> {
        if dims.is_empty() {
            return Err(Error::Shape("tensor rank must be at least 1".into()));
        }
        if dims.len() != roles.len() {
            return Err(Error::Shape(format!(
                "rank {} does not match {} axis roles",
                dims.len(),
                roles.len()
            )));
        }
        let mut n: usize = 1;
        for &d in dims {
            if d == 0 {
                return Err(Error::Shape("zero extent is not allowed".into()));
            }
            n = n
                .checked_mul(d)
                .ok_or_else(|| Error::Shape("element count overflows usize".into()))?;
        }
        Ok(n)
    }

    pub fn zeros(dims: &[usize], roles: &[AxisRole]) -> Result<Tensor> {
        let n = Self::check_dims(dims, roles)?;
        Ok(Tensor {
            dims: dims.to_vec(),
            roles: roles.to_vec(),
            data: vec![0.0; n],
        })
    }

    pub fn from_vec(data: Vec<f32>, dims: &[usize], roles: &[AxisRole]) -> Result<Tensor> {
        let n = Self::check_dims(dims, roles)?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "data length {} does not match element count {}",
                data.len(),
                n
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            roles: roles.to_vec(),
            data,
        })
    }

    /// Tensor filled with uniform draws from `[lo, hi)` in row-major order.
    /// A pure function of `(rng seed, dims, lo, hi)`.
    pub fn seeded_uniform(
        dims: &[usize],
        roles: &[AxisRole],
        lo: f32,
        hi: f32,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "uniform range requires lo < hi, got [{lo}, {hi})"
            )));
        }
        let n = Self::check_dims(dims, roles)?;
        let data = (0..n).map(|_| rng.uniform(lo, hi)).collect();
        Ok(Tensor {
            dims: dims.to_vec(),
            roles: roles.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn roles(&self) -> &[AxisRole] {
        &self.roles
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Row-major strides for the current dims.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for i in (0..self.dims.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.dims[i + 1];
        }
        s
    }

    /// Same buffer under new dims; element order is preserved.
    pub fn reshape(&self, dims: &[usize], roles: &[AxisRole]) -> Result<Tensor> {
        let n = Self::check_dims(dims, roles)?;
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} elements into {:?}",
                self.data.len(),
                dims
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            roles: roles.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn with_roles(mut self, roles: &[AxisRole]) -> Result<Tensor> {
        if roles.len() != self.dims.len() {
            return Err(Error::Shape(format!(
                "rank {} does not match {} axis roles",
                self.dims.len(),
                roles.len()
            )));
        }
        self.roles = roles.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            roles: self.roles.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "element-wise op on mismatched dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Tensor {
            dims: self.dims.clone(),
            roles: self.roles.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Bit-level equality of dims and payload; axis roles are ignored, matching
    /// the file format's identity.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Sum of squared elements, accumulated in f64.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&x| (x as f64) * (x as f64)).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let mut r = BufReader::new(File::open(path.as_ref())?);
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"TNSR\"",
                magic
            )));
        }
        let mut buf4 = [0u8; 4];
        read_exact(&mut r, &mut buf4, "rank")?;
        let rank = u32::from_le_bytes(buf4) as usize;
        if rank == 0 {
            return Err(Error::Format("rank 0 tensor".into()));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact(&mut r, &mut buf4, "dims")?;
            let d = u32::from_le_bytes(buf4) as usize;
            if d == 0 {
                return Err(Error::Format("zero extent in header".into()));
            }
            dims.push(d);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            read_exact(&mut r, &mut buf4, "payload")?;
            data.push(f32::from_le_bytes(buf4));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format(
                "payload longer than dims describe".into(),
            ));
        }
        Tensor::from_vec(data, &dims, &generic(rank))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], section: &str) -> Result<()> {
    r.read_exact(buf).map_err(|_| {
        Error::Format(format!("file truncated while reading {section}"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_shapes() {
        let t = Tensor::zeros(&[2, 2], &generic(2)).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.data().iter().all(|&x| x == 0.0));

        let t = Tensor::zeros(&[1, 3, 8, 4, 4], &bcthw()).unwrap();
        assert_eq!(t.len(), 384);
        assert!(t.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_dims_rejected() {
        assert!(Tensor::zeros(&[], &[]).is_err());
        assert!(Tensor::zeros(&[2, 0], &generic(2)).is_err());
    }

    #[test]
    fn seeded_uniform_deterministic() {
        let a = Tensor::seeded_uniform(&[4], &generic(1), -1.0, 1.0, &mut Rng::new(7)).unwrap();
        let b = Tensor::seeded_uniform(&[4], &generic(1), -1.0, 1.0, &mut Rng::new(7)).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn seeded_uniform_range() {
        let t =
            Tensor::seeded_uniform(&[1000], &generic(1), 0.0, 1.0, &mut Rng::new(1)).unwrap();
        assert!(t.data().iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn seeded_uniform_empty_interval_rejected() {
        let err = Tensor::seeded_uniform(&[4], &generic(1), 1.0, 1.0, &mut Rng::new(1));
        assert!(err.is_err());
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let t = Tensor::seeded_uniform(&[2, 3], &generic(2), -5.0, 5.0, &mut Rng::new(9)).unwrap();
        t.save(&path).unwrap();
        let back = Tensor::load(&path).unwrap();
        assert!(t.bitwise_eq(&back));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let t = Tensor::zeros(&[2, 3], &generic(2)).unwrap();
        t.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match Tensor::load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let t = Tensor::zeros(&[2], &generic(1)).unwrap();
        t.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match Tensor::load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tnsr");
        let t = Tensor::zeros(&[2], &generic(1)).unwrap();
        t.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(Tensor::load(&path).is_err());
    }

    #[test]
    fn elementwise_ops_commute_with_reshape() {
        let mut rng = Rng::new(21);
        for _ in 0..20 {
            let a = Tensor::seeded_uniform(&[4, 6], &generic(2), -2.0, 2.0, &mut rng).unwrap();
            let b = Tensor::seeded_uniform(&[4, 6], &generic(2), -2.0, 2.0, &mut rng).unwrap();
            let direct = a
                .add(&b)
                .unwrap()
                .reshape(&[2, 12], &generic(2))
                .unwrap();
            let reshaped = a
                .reshape(&[2, 12], &generic(2))
                .unwrap()
                .add(&b.reshape(&[2, 12], &generic(2)).unwrap())
                .unwrap();
            assert!(direct.bitwise_eq(&reshaped));

            let sig_then = a.map(crate::ops::sigmoid).reshape(&[24], &generic(1)).unwrap();
            let then_sig = a.reshape(&[24], &generic(1)).unwrap().map(crate::ops::sigmoid);
            assert!(sig_then.bitwise_eq(&then_sig));
        }
    }

    #[test]
    fn finite_after_ops_on_finite_inputs() {
        let mut rng = Rng::new(33);
        let a = Tensor::seeded_uniform(&[3, 5], &generic(2), -100.0, 100.0, &mut rng).unwrap();
        let b = Tensor::seeded_uniform(&[3, 5], &generic(2), -100.0, 100.0, &mut rng).unwrap();
        assert!(a.add(&b).unwrap().all_finite());
        assert!(a.mul(&b).unwrap().all_finite());
        assert!(a.map(crate::ops::sigmoid).all_finite());
    }
}
