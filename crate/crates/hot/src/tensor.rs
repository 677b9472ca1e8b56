//! Dense 5-D tensors in (batch, channel, time, height, width) order, the
//! offset grids that describe kernel supports, and the HOT1 binary format.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::path::Path;

use crate::{Error, Result};

/// Element type selected per run. f64 is required for gradient checks.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub enum DType {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<DType> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }
}

/// Scalar element of a tensor. Implemented for f32 and f64.
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const DTYPE: DType;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const DTYPE: DType = DType::F32;
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn maximum(self, other: Self) -> Self {
        f32::max(self, other)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const DTYPE: DType = DType::F64;
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn maximum(self, other: Self) -> Self {
        f64::max(self, other)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

/// Shape of a 5-D tensor: (batch, channel, time, height, width).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape5 {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape5 {
    pub fn new(n: usize, c: usize, t: usize, h: usize, w: usize) -> Shape5 {
        Shape5 { n, c, t, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.t * self.h * self.w
    }

    /// Flat row-major offset of (n, c, t, h, w). Callers must pass in-bounds indices.
    #[inline(always)]
    pub fn flat(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> usize {
        ((((n * self.c + c) * self.t + t) * self.h + h) * self.w) + w
    }

    pub fn contains(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> bool {
        n < self.n && c < self.c && t < self.t && h < self.h && w < self.w
    }
}

impl fmt::Display for Shape5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{},{})", self.n, self.c, self.t, self.h, self.w)
    }
}

/// Dense 5-D array in row-major (n, c, t, h, w) order. Values are immutable
/// once built by an op; all ops return fresh tensors.
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor5<T> {
    shape: Shape5,
    data: Vec<T>,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(shape: Shape5) -> Tensor5<T> {
        Tensor5 {
            shape,
            data: vec![T::ZERO; shape.numel()],
        }
    }

    pub fn full(shape: Shape5, value: T) -> Tensor5<T> {
        Tensor5 {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: T) -> Tensor5<T> {
        Tensor5 {
            shape: Shape5::new(1, 1, 1, 1, 1),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: Shape5, data: Vec<T>) -> Result<Tensor5<T>> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor5 { shape, data })
    }

    pub fn shape(&self) -> Shape5 {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Checked element access.
    pub fn index(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> Result<T> {
        if !self.shape.contains(n, c, t, h, w) {
            return Err(Error::Index(format!(
                "index ({},{},{},{},{}) out of bounds for shape {}",
                n, c, t, h, w, self.shape
            )));
        }
        Ok(self.data[self.shape.flat(n, c, t, h, w)])
    }

    /// Unchecked-by-contract element access for interior loops.
    #[inline(always)]
    pub fn get(&self, n: usize, c: usize, t: usize, h: usize, w: usize) -> T {
        debug_assert!(self.shape.contains(n, c, t, h, w));
        self.data[self.shape.flat(n, c, t, h, w)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, t: usize, h: usize, w: usize, v: T) {
        debug_assert!(self.shape.contains(n, c, t, h, w));
        let i = self.shape.flat(n, c, t, h, w);
        self.data[i] = v;
    }

    /// Gathers the values at p + q for every offset q in the grid, reading 0
    /// wherever p + q falls outside the volume.
    pub fn padded_gather(
        &self,
        n: usize,
        c: usize,
        p: (usize, usize, usize),
        grid: &OffsetGrid,
    ) -> Result<Vec<T>> {
        let (t, h, w) = p;
        if !self.shape.contains(n, c, t, h, w) {
            return Err(Error::Index(format!(
                "gather position ({},{},{},{},{}) out of bounds for shape {}",
                n, c, t, h, w, self.shape
            )));
        }
        let mut out = Vec::with_capacity(grid.len());
        for &(dt, dh, dw) in grid.offsets() {
            let it = t as i64 + dt;
            let ih = h as i64 + dh;
            let iw = w as i64 + dw;
            if it >= 0
                && ih >= 0
                && iw >= 0
                && (it as usize) < self.shape.t
                && (ih as usize) < self.shape.h
                && (iw as usize) < self.shape.w
            {
                out.push(self.get(n, c, it as usize, ih as usize, iw as usize));
            } else {
                out.push(T::ZERO);
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Tensor5<T>) -> Result<Tensor5<T>> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor5<T>) -> Result<Tensor5<T>> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor5<T>) -> Result<Tensor5<T>> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Tensor5<T> {
        self.map(|v| v * k)
    }

    pub fn map<F: Fn(T) -> T>(&self, f: F) -> Tensor5<T> {
        Tensor5 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with<F: Fn(T, T) -> T>(&self, other: &Tensor5<T>, f: F) -> Result<Tensor5<T>> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on mismatched shapes {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor5 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place accumulate, used by gradient buffers.
    pub fn accumulate(&mut self, other: &Tensor5<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "accumulate on mismatched shapes {} vs {}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        let mut acc = T::ZERO;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor5<T>) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor5<U> {
        Tensor5 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// The full integer grid {|dt| <= K_t, |dh| <= K_h, |dw| <= K_w} in
/// lexicographic (dt, dh, dw) order. The order is canonical: generated
/// weight channels and convolution kernel coefficients follow it.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct OffsetGrid {
    extents: (usize, usize, usize),
    offsets: Vec<(i64, i64, i64)>,
}

impl OffsetGrid {
    /// Builds a grid from odd kernel sizes, e.g. (3, 5, 5).
    pub fn from_sizes(st: usize, sh: usize, sw: usize) -> Result<OffsetGrid> {
        for (axis, s) in [("t", st), ("h", sh), ("w", sw)] {
            if s == 0 || s % 2 == 0 {
                return Err(Error::Config(format!(
                    "kernel size along {} must be odd and positive, got {}",
                    axis, s
                )));
            }
        }
        Ok(Self::from_extents(st / 2, sh / 2, sw / 2))
    }

    /// Builds a grid from half-widths (K_t, K_h, K_w).
    pub fn from_extents(kt: usize, kh: usize, kw: usize) -> OffsetGrid {
        let mut offsets =
            Vec::with_capacity((2 * kt + 1) * (2 * kh + 1) * (2 * kw + 1));
        for dt in -(kt as i64)..=(kt as i64) {
            for dh in -(kh as i64)..=(kh as i64) {
                for dw in -(kw as i64)..=(kw as i64) {
                    offsets.push((dt, dh, dw));
                }
            }
        }
        OffsetGrid {
            extents: (kt, kh, kw),
            offsets,
        }
    }

    pub fn extents(&self) -> (usize, usize, usize) {
        self.extents
    }

    /// Kernel sizes (2K+1) per axis.
    pub fn sizes(&self) -> (usize, usize, usize) {
        (
            2 * self.extents.0 + 1,
            2 * self.extents.1 + 1,
            2 * self.extents.2 + 1,
        )
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn offsets(&self) -> &[(i64, i64, i64)] {
        &self.offsets
    }
}

impl fmt::Display for OffsetGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (st, sh, sw) = self.sizes();
        write!(f, "{}x{}x{}", st, sh, sw)
    }
}

const HOT1_MAGIC: &[u8; 4] = b"HOT1";

/// Writes a tensor in the HOT1 format: magic `HOT1`, five little-endian u32
/// dims (n, c, t, h, w), a u8 dtype tag (0 = f32, 1 = f64), then the flat
/// data little-endian.
pub fn write_hot1<T: Scalar>(tensor: &Tensor5<T>, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(4 + 20 + 1 + tensor.numel() * T::BYTES);
    out.extend_from_slice(HOT1_MAGIC);
    let s = tensor.shape();
    for dim in [s.n, s.c, s.t, s.h, s.w] {
        let dim = u32::try_from(dim).map_err(|_| {
            Error::Format {
                path: path.display().to_string(),
                msg: format!("dimension {} exceeds u32", dim),
            }
        })?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    out.push(T::DTYPE.tag());
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(&out)?;
    file.flush()?;
    Ok(())
}

/// Reads a HOT1 file, converting to the caller's dtype when the stored tag
/// differs.
pub fn read_hot1<T: Scalar>(path: &Path) -> Result<Tensor5<T>> {
    let fail = |msg: String| Error::Format {
        path: path.display().to_string(),
        msg,
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 25 {
        return Err(fail(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != HOT1_MAGIC {
        return Err(fail(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[0..4],
            HOT1_MAGIC
        )));
    }
    let mut dims = [0usize; 5];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 4 + 4 * i;
        *d = u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]])
            as usize;
    }
    let dtype = DType::from_tag(bytes[24])
        .ok_or_else(|| fail(format!("unknown dtype tag {}", bytes[24])))?;
    let shape = Shape5::new(dims[0], dims[1], dims[2], dims[3], dims[4]);
    let elem_bytes = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let expected = 25 + shape.numel() * elem_bytes;
    if bytes.len() != expected {
        return Err(fail(format!(
            "payload length {} does not match shape {} ({} bytes expected)",
            bytes.len(),
            shape,
            expected
        )));
    }
    let body = &bytes[25..];
    let data: Vec<T> = match dtype {
        DType::F32 => body
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::read_le(c).to_f64()))
            .collect(),
        DType::F64 => body
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::read_le(c)))
            .collect(),
    };
    Tensor5::from_vec(shape, data)
}
