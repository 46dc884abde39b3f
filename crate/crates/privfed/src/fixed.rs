//! Fixed-point tensors over the ring Z_2^64.
//!
//! A real value `x` is stored as `round(x * 2^f) mod 2^64` and read back under
//! the two's-complement interpretation (residues >= 2^63 are negative). All
//! ring arithmetic wraps mod 2^64 by design; wrap-around is not an error.
//! Multiplying two tensors adds their scales, and [`FixedTensor::truncate`]
//! rescales with a local arithmetic shift whose error against exact rescaling
//! is at most one unit in the last place.
//!
//! Encoding enforces `|x| < 2^20` so that sums and products of the magnitudes
//! handled here stay far from the wrap boundary.

use crate::error::{Error, Result};
use crate::tensor::PlainTensor;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// Default fractional bits; tolerances throughout the crate are stated at 16.
pub const DEFAULT_FRAC_BITS: u8 = 16;
/// Encoded magnitudes must satisfy `|x| < MAGNITUDE_BOUND`.
pub const MAGNITUDE_BOUND: f64 = (1u64 << 20) as f64;
const FRAC_BITS_MIN: u8 = 8;
const FRAC_BITS_MAX: u8 = 32;

/// An element of Z_2^64 with wrapping arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Ring64(pub u64);

impl Ring64 {
    pub const ZERO: Ring64 = Ring64(0);

    /// Signed two's-complement reading of the residue.
    pub fn to_i64(self) -> i64 {
        self.0 as i64
    }

    pub fn from_i64(v: i64) -> Self {
        Ring64(v as u64)
    }

    pub fn wrapping_shl(self, k: u32) -> Self {
        Ring64(self.0.wrapping_shl(k))
    }

    /// Arithmetic right shift of the signed interpretation.
    pub fn arith_shr(self, k: u32) -> Self {
        Ring64(((self.0 as i64) >> k) as u64)
    }
}

impl Add for Ring64 {
    type Output = Ring64;
    fn add(self, rhs: Ring64) -> Ring64 {
        Ring64(self.0.wrapping_add(rhs.0))
    }
}

impl Sub for Ring64 {
    type Output = Ring64;
    fn sub(self, rhs: Ring64) -> Ring64 {
        Ring64(self.0.wrapping_sub(rhs.0))
    }
}

impl Mul for Ring64 {
    type Output = Ring64;
    fn mul(self, rhs: Ring64) -> Ring64 {
        Ring64(self.0.wrapping_mul(rhs.0))
    }
}

impl Neg for Ring64 {
    type Output = Ring64;
    fn neg(self) -> Ring64 {
        Ring64(self.0.wrapping_neg())
    }
}

impl AddAssign for Ring64 {
    fn add_assign(&mut self, rhs: Ring64) {
        self.0 = self.0.wrapping_add(rhs.0);
    }
}

impl SubAssign for Ring64 {
    fn sub_assign(&mut self, rhs: Ring64) {
        self.0 = self.0.wrapping_sub(rhs.0);
    }
}

/// Encode one value at scale `2^frac_bits`.
pub fn encode_scalar(x: f64, frac_bits: u8) -> Result<Ring64> {
    if !x.is_finite() {
        return Err(Error::Range(format!("cannot encode non-finite value {x}")));
    }
    if x.abs() >= MAGNITUDE_BOUND {
        return Err(Error::Range(format!(
            "|{x}| exceeds the fixed-point magnitude bound 2^20"
        )));
    }
    Ok(Ring64::from_i64((x * (1u64 << frac_bits) as f64).round() as i64))
}

/// Decode one value from scale `2^frac_bits`.
pub fn decode_scalar(v: Ring64, frac_bits: u8) -> f64 {
    v.to_i64() as f64 / (1u64 << frac_bits) as f64
}

/// A tensor of ring elements sharing one fixed-point scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    pub shape: Vec<usize>,
    pub frac_bits: u8,
    pub data: Vec<Ring64>,
}

impl FixedTensor {
    pub fn zeros(shape: &[usize], frac_bits: u8) -> Self {
        let n: usize = shape.iter().product();
        FixedTensor { shape: shape.to_vec(), frac_bits, data: vec![Ring64::ZERO; n] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    fn check_same_layout(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op} on shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        if self.frac_bits != other.frac_bits {
            return Err(Error::Parameter(format!(
                "{op} mixes scales 2^{} and 2^{}",
                self.frac_bits, other.frac_bits
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_layout(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(FixedTensor { shape: self.shape.clone(), frac_bits: self.frac_bits, data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_layout(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(FixedTensor { shape: self.shape.clone(), frac_bits: self.frac_bits, data })
    }

    pub fn neg(&self) -> Self {
        FixedTensor {
            shape: self.shape.clone(),
            frac_bits: self.frac_bits,
            data: self.data.iter().map(|&a| -a).collect(),
        }
    }

    fn product_frac(a: u8, b: u8) -> Result<u8> {
        let f = a as u16 + b as u16;
        if f > 62 {
            return Err(Error::Parameter(format!(
                "product scale 2^{f} leaves no integer headroom"
            )));
        }
        Ok(f as u8)
    }

    /// Elementwise product; the result scale is the sum of the operand scales.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "mul on shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let frac_bits = Self::product_frac(self.frac_bits, other.frac_bits)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect();
        Ok(FixedTensor { shape: self.shape.clone(), frac_bits, data })
    }

    /// 2-D matrix product with wrapping accumulation; scales add.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = match self.shape[..] {
            [m, k] => (m, k),
            _ => return Err(Error::Shape(format!("matmul lhs must be 2-D, got {:?}", self.shape))),
        };
        let (k2, n) = match other.shape[..] {
            [k2, n] => (k2, n),
            _ => return Err(Error::Shape(format!("matmul rhs must be 2-D, got {:?}", other.shape))),
        };
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner dims {} vs {}", k, k2)));
        }
        let frac_bits = Self::product_frac(self.frac_bits, other.frac_bits)?;
        let mut out = vec![Ring64::ZERO; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a.0 == 0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(FixedTensor { shape: vec![m, n], frac_bits, data: out })
    }

    /// Multiply every element by a public ring constant (scale unchanged).
    pub fn mul_const(&self, c: Ring64) -> Self {
        FixedTensor {
            shape: self.shape.clone(),
            frac_bits: self.frac_bits,
            data: self.data.iter().map(|&a| a * c).collect(),
        }
    }

    /// Drop `bits` fractional bits with an arithmetic shift on the signed
    /// value. Error versus exact rescaling is at most 1 ulp of the new scale.
    pub fn truncate(&self, bits: u8) -> Result<Self> {
        if bits > self.frac_bits {
            return Err(Error::Parameter(format!(
                "cannot truncate {bits} bits from scale 2^{}",
                self.frac_bits
            )));
        }
        Ok(FixedTensor {
            shape: self.shape.clone(),
            frac_bits: self.frac_bits - bits,
            data: self.data.iter().map(|&a| a.arith_shr(bits as u32)).collect(),
        })
    }
}

/// Encode a plain tensor at scale `2^frac_bits`.
pub fn encode_fixed(t: &PlainTensor, frac_bits: u8) -> Result<FixedTensor> {
    if !(FRAC_BITS_MIN..=FRAC_BITS_MAX).contains(&frac_bits) {
        return Err(Error::Parameter(format!(
            "frac_bits {frac_bits} outside [{FRAC_BITS_MIN}, {FRAC_BITS_MAX}]"
        )));
    }
    let mut data = Vec::with_capacity(t.data.len());
    for &x in &t.data {
        data.push(encode_scalar(x, frac_bits)?);
    }
    Ok(FixedTensor { shape: t.shape.clone(), frac_bits, data })
}

/// Decode back to floats under the signed interpretation.
pub fn decode_fixed(t: &FixedTensor) -> PlainTensor {
    PlainTensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| decode_scalar(v, t.frac_bits)).collect(),
    }
}

const FXT1_MAGIC: &[u8; 4] = b"FXT1";
const FXT1_MAX_RANK: usize = 8;

/// Serialize as `FXT1`: magic, frac_bits u8, rank u8, dims u32 LE, data u64 LE.
pub fn write_fxt1(t: &FixedTensor, out: &mut Vec<u8>) {
    assert!(t.shape.len() <= FXT1_MAX_RANK, "tensor rank exceeds FXT1 limit");
    out.extend_from_slice(FXT1_MAGIC);
    out.push(t.frac_bits);
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &t.data {
        out.extend_from_slice(&v.0.to_le_bytes());
    }
}

pub fn to_fxt1_bytes(t: &FixedTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.shape.len() + 8 * t.data.len());
    write_fxt1(t, &mut out);
    out
}

/// Parse one `FXT1` record from the front of `buf`; returns the tensor and the
/// number of bytes consumed.
pub fn read_fxt1(buf: &[u8]) -> Result<(FixedTensor, usize)> {
    if buf.len() < 6 {
        return Err(Error::Format("FXT1 record truncated before header".into()));
    }
    if &buf[..4] != FXT1_MAGIC {
        return Err(Error::Format("bad FXT1 magic".into()));
    }
    let frac_bits = buf[4];
    let rank = buf[5] as usize;
    if rank > FXT1_MAX_RANK {
        return Err(Error::Format(format!("FXT1 rank {rank} exceeds limit {FXT1_MAX_RANK}")));
    }
    let mut off = 6;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let end = off + 4;
        if buf.len() < end {
            return Err(Error::Format("FXT1 record truncated in dims".into()));
        }
        shape.push(u32::from_le_bytes(buf[off..end].try_into().unwrap()) as usize);
        off = end;
    }
    let numel: usize = shape.iter().product();
    let need = numel
        .checked_mul(8)
        .and_then(|b| b.checked_add(off))
        .ok_or_else(|| Error::Format("FXT1 dims overflow".into()))?;
    if buf.len() < need {
        return Err(Error::Format(format!(
            "FXT1 record truncated: want {need} bytes, have {}",
            buf.len()
        )));
    }
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        let s = off + 8 * i;
        data.push(Ring64(u64::from_le_bytes(buf[s..s + 8].try_into().unwrap())));
    }
    Ok((FixedTensor { shape, frac_bits, data }, need))
}
