//! Row-major dense n-dimensional arrays of `f64`.
//!
//! A [`Tensor`] owns a flat buffer whose length equals the product of its
//! extents. The last index varies fastest. A tensor with an empty shape is a
//! scalar holding exactly one element.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if let Some(k) = shape.iter().position(|&e| e == 0) {
        return Err(Error::extent(format!("mode {k} of {shape:?} has zero extent")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_extents(shape)?;
        if n != data.len() {
            return Err(Error::extent(format!("shape {shape:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Panics if any extent is zero.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = check_extents(shape).expect("tensor extents must be positive");
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "vector must be non-empty");
        Tensor { shape: vec![data.len()], data }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[flat_index(&self.shape, index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let i = flat_index(&self.shape, index)?;
        self.data[i] = value;
        Ok(())
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        self.clone().into_shape(new_shape)
    }

    /// Reinterprets the buffer under a new shape without copying.
    pub fn into_shape(mut self, new_shape: &[usize]) -> Result<Tensor> {
        let n = check_extents(new_shape)?;
        if n != self.data.len() {
            return Err(Error::extent(format!(
                "cannot reshape {:?} ({} elements) to {new_shape:?} ({n} elements)",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = new_shape.to_vec();
        Ok(self)
    }

    fn as_mat(&self) -> Result<MatRef<'_>> {
        if self.rank() != 2 {
            return Err(Error::extent(format!("expected a matrix, got shape {:?}", self.shape)));
        }
        Ok(MatRef::new(&self.data, self.shape[0], self.shape[1]))
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let a = self.as_mat()?;
        let b = other.as_mat()?;
        if a.cols != b.rows {
            return Err(Error::extent(format!("matmul {:?} x {:?}", self.shape, other.shape)));
        }
        let mut out = Tensor::zeros(&[a.rows, b.cols]);
        gemm(1.0, a, b, 0.0, &mut out.data);
        Ok(out)
    }

    /// Matrix-vector product for a rank-2 tensor and a rank-1 tensor.
    pub fn matvec(&self, x: &Tensor) -> Result<Tensor> {
        let a = self.as_mat()?;
        if x.len() != a.cols {
            return Err(Error::extent(format!("matvec {:?} x {:?}", self.shape, x.shape)));
        }
        let mut out = vec![0.0; a.rows];
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.data[i * a.cols..(i + 1) * a.cols], &x.data);
        }
        Ok(Tensor { shape: vec![a.rows], data: out })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        self.permute(&[1, 0])
    }

    /// Reorders modes: output mode `k` is input mode `axes[k]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if axes.len() != r || axes.iter().any(|&a| a >= r || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::extent(format!("invalid permutation {axes:?} for rank {r}")));
        }
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let in_strides = strides(&self.shape);
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut out = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; r];
        let mut offset = 0usize;
        for _ in 0..self.data.len() {
            out.push(self.data[offset]);
            for k in (0..r).rev() {
                idx[k] += 1;
                offset += src_strides[k];
                if idx[k] < new_shape[k] {
                    break;
                }
                offset -= src_strides[k] * new_shape[k];
                idx[k] = 0;
            }
        }
        Ok(Tensor { shape: new_shape, data: out })
    }

    /// Generalized tensordot. `axes` pairs a mode of `self` with a mode of
    /// `other`; the result carries the unpaired modes of `self` followed by
    /// the unpaired modes of `other`, each in original order.
    pub fn contract(&self, other: &Tensor, axes: &[(usize, usize)]) -> Result<Tensor> {
        let (ra, rb) = (self.rank(), other.rank());
        let mut used_a = vec![false; ra];
        let mut used_b = vec![false; rb];
        for &(i, j) in axes {
            if i >= ra || j >= rb || used_a[i] || used_b[j] {
                return Err(Error::extent(format!("invalid contraction axes {axes:?}")));
            }
            if self.shape[i] != other.shape[j] {
                return Err(Error::extent(format!(
                    "contracted extents differ: {:?}[{i}] vs {:?}[{j}]",
                    self.shape, other.shape
                )));
            }
            used_a[i] = true;
            used_b[j] = true;
        }
        let free_a: Vec<usize> = (0..ra).filter(|&i| !used_a[i]).collect();
        let free_b: Vec<usize> = (0..rb).filter(|&j| !used_b[j]).collect();
        let sum_a: Vec<usize> = axes.iter().map(|p| p.0).collect();
        let sum_b: Vec<usize> = axes.iter().map(|p| p.1).collect();

        let perm_a: Vec<usize> = free_a.iter().chain(&sum_a).copied().collect();
        let perm_b: Vec<usize> = sum_b.iter().chain(&free_b).copied().collect();
        let a = self.permute(&perm_a)?;
        let b = other.permute(&perm_b)?;
        let m: usize = free_a.iter().map(|&i| self.shape[i]).product();
        let k: usize = sum_a.iter().map(|&i| self.shape[i]).product();
        let n: usize = free_b.iter().map(|&j| other.shape[j]).product();

        let mut out_shape: Vec<usize> = free_a.iter().map(|&i| self.shape[i]).collect();
        out_shape.extend(free_b.iter().map(|&j| other.shape[j]));
        let mut out = vec![0.0; m * n];
        gemm(1.0, MatRef::new(&a.data, m, k), MatRef::new(&b.data, k, n), 0.0, &mut out);
        Ok(Tensor { shape: out_shape, data: out })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::extent(format!("elementwise op on {:?} and {:?}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::extent(format!("{:?} += {:?}", self.shape, other.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Rows `[start, start + count)` along the leading mode.
    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Tensor> {
        let rows = *self.shape.first().ok_or_else(|| Error::extent("slice of a scalar"))?;
        if count == 0 || start + count > rows {
            return Err(Error::IndexOutOfRange(format!("rows {start}..{} of {rows}", start + count)));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Tensor { shape, data: self.data[start * inner..(start + count) * inner].to_vec() })
    }

    /// Stacks tensors along the leading mode.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::extent("concatenation of nothing"))?;
        if first.rank() == 0 {
            return Err(Error::extent("cannot concatenate scalars"));
        }
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() == 0 || &p.shape[1..] != tail {
                return Err(Error::extent(format!("concatenating {:?} with {:?}", first.shape, p.shape)));
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor { shape, data })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `||self - other|| / ||other||`, or the absolute norm when `other` is zero.
    pub fn relative_error(&self, other: &Tensor) -> Result<f64> {
        let diff = self.sub(other)?.frobenius_norm();
        let denom = other.frobenius_norm();
        Ok(if denom > 0.0 { diff / denom } else { diff })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Row-major position of `index` within `shape`.
pub fn flat_index(shape: &[usize], index: &[usize]) -> Result<usize> {
    if index.len() != shape.len() {
        return Err(Error::IndexOutOfRange(format!(
            "index {index:?} has {} modes, shape {shape:?} has {}",
            index.len(),
            shape.len()
        )));
    }
    let mut flat = 0;
    for (&i, &e) in index.iter().zip(shape) {
        if i >= e {
            return Err(Error::IndexOutOfRange(format!("index {index:?} for shape {shape:?}")));
        }
        flat = flat * e + i;
    }
    Ok(flat)
}

/// Inverse of [`flat_index`].
pub fn unflatten(shape: &[usize], mut flat: usize) -> Result<Vec<usize>> {
    let total: usize = shape.iter().product();
    if flat >= total {
        return Err(Error::IndexOutOfRange(format!("flat index {flat} for shape {shape:?}")));
    }
    let mut index = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        index[k] = flat % shape[k];
        flat /= shape[k];
    }
    Ok(index)
}

pub const TTEN_MAGIC: &[u8; 5] = b"TTEN1";
const DTYPE_F64: u8 = 0x00;

/// Serializes in the TTEN1 layout: magic, dtype byte, u32 LE mode count,
/// u32 LE extents, then the row-major little-endian payload.
pub fn write_tten(t: &Tensor, mut w: impl Write) -> Result<()> {
    let mut buf = Vec::with_capacity(10 + 4 * t.rank() + 8 * t.len());
    buf.extend_from_slice(TTEN_MAGIC);
    buf.push(DTYPE_F64);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        let e = u32::try_from(e).map_err(|_| Error::extent(format!("extent {e} exceeds u32")))?;
        buf.extend_from_slice(&e.to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tten(mut r: impl Read) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_tten(&bytes)
}

pub fn decode_tten(bytes: &[u8]) -> Result<Tensor> {
    let header = |msg: &str| Error::MalformedHeader(format!("TTEN1: {msg}"));
    if bytes.len() < 10 || &bytes[..5] != TTEN_MAGIC {
        return Err(header("bad magic"));
    }
    if bytes[5] != DTYPE_F64 {
        return Err(Error::UnsupportedEncoding(format!("TTEN1 dtype code {:#04x}", bytes[5])));
    }
    let u32_at = |pos: usize| -> Result<usize> {
        bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or_else(|| header("truncated extents"))
    };
    let modes = u32_at(6)?;
    let mut shape = Vec::with_capacity(modes);
    for k in 0..modes {
        shape.push(u32_at(10 + 4 * k)?);
    }
    let start = 10 + 4 * modes;
    let n: usize = shape.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != 8 * n {
        return Err(Error::TruncatedPayload { expected: 8 * n, found: payload.len() });
    }
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Tensor::from_vec(&shape, data)
}

pub fn save_tten(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_tten(t, std::io::BufWriter::new(f))
}

pub fn load_tten(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tten(&std::fs::read(path)?)
}
