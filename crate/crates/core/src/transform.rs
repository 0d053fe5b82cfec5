//! Orthonormal 2D DCT on square blocks, JPEG zigzag ordering and coefficient
//! position masks.
//!
//! Blocks and coefficient planes are row-major `B*B` slices. Coefficients stay
//! in natural `(row, col)` layout; zigzag is only a view used to select
//! low-pass prefixes.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Block sizes accepted by the codec.
pub const BLOCK_SIZES: [usize; 4] = [4, 8, 16, 32];

pub fn check_block_size(block_size: usize) -> Result<()> {
    if BLOCK_SIZES.contains(&block_size) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "block size {block_size} not in {BLOCK_SIZES:?}"
        )))
    }
}

/// Type-II orthonormal DCT basis for one block size, applied separably.
#[derive(Debug, Clone)]
pub struct TransformKernel {
    block_size: usize,
    // basis[k * B + n] = alpha(k) * cos(pi * (2n + 1) * k / 2B)
    basis: Vec<f64>,
}

impl TransformKernel {
    pub fn new(block_size: usize) -> Result<Self> {
        check_block_size(block_size)?;
        let b = block_size;
        let mut basis = vec![0.0; b * b];
        for k in 0..b {
            let alpha = if k == 0 {
                (1.0 / b as f64).sqrt()
            } else {
                (2.0 / b as f64).sqrt()
            };
            for n in 0..b {
                basis[k * b + n] =
                    alpha * (PI * (2 * n + 1) as f64 * k as f64 / (2 * b) as f64).cos();
            }
        }
        Ok(TransformKernel { block_size, basis })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let n = self.block_size * self.block_size;
        if len == n {
            Ok(())
        } else {
            Err(Error::dims(n, len))
        }
    }

    /// `coeffs = C * block * C^T`
    pub fn forward(&self, block: &[f64]) -> Result<Vec<f64>> {
        self.check_len(block.len())?;
        let mut out = vec![0.0; block.len()];
        self.forward_into(block, &mut out);
        Ok(out)
    }

    /// `block = C^T * coeffs * C`
    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_len(coeffs.len())?;
        let mut out = vec![0.0; coeffs.len()];
        self.inverse_into(coeffs, &mut out);
        Ok(out)
    }

    /// Unchecked variant for hot loops; both slices must hold `B*B` values.
    pub(crate) fn forward_into(&self, block: &[f64], out: &mut [f64]) {
        let b = self.block_size;
        let c = &self.basis;
        let mut tmp = vec![0.0; b * b];
        // tmp = C * block
        for k in 0..b {
            let crow = &c[k * b..(k + 1) * b];
            let trow = &mut tmp[k * b..(k + 1) * b];
            for (n, &ckn) in crow.iter().enumerate() {
                let brow = &block[n * b..(n + 1) * b];
                for (t, &x) in trow.iter_mut().zip(brow) {
                    *t += ckn * x;
                }
            }
        }
        // out = tmp * C^T
        for r in 0..b {
            let trow = &tmp[r * b..(r + 1) * b];
            for k in 0..b {
                let crow = &c[k * b..(k + 1) * b];
                out[r * b + k] = trow.iter().zip(crow).map(|(t, c)| t * c).sum();
            }
        }
    }

    pub(crate) fn inverse_into(&self, coeffs: &[f64], out: &mut [f64]) {
        let b = self.block_size;
        let c = &self.basis;
        let mut tmp = vec![0.0; b * b];
        // tmp = C^T * coeffs
        for k in 0..b {
            let crow = &c[k * b..(k + 1) * b];
            let yrow = &coeffs[k * b..(k + 1) * b];
            for (n, &ckn) in crow.iter().enumerate() {
                if ckn == 0.0 {
                    continue;
                }
                let trow = &mut tmp[n * b..(n + 1) * b];
                for (t, &y) in trow.iter_mut().zip(yrow) {
                    *t += ckn * y;
                }
            }
        }
        // out = tmp * C
        out.fill(0.0);
        for r in 0..b {
            let trow = &tmp[r * b..(r + 1) * b];
            let orow = &mut out[r * b..(r + 1) * b];
            for (k, &t) in trow.iter().enumerate() {
                let crow = &c[k * b..(k + 1) * b];
                for (o, &ckn) in orow.iter_mut().zip(crow) {
                    *o += t * ckn;
                }
            }
        }
    }
}

pub fn dct2_forward(block: &[f64], kernel: &TransformKernel) -> Result<Vec<f64>> {
    kernel.forward(block)
}

pub fn dct2_inverse(coeffs: &[f64], kernel: &TransformKernel) -> Result<Vec<f64>> {
    kernel.inverse(coeffs)
}

/// JPEG anti-diagonal serpentine over a `B x B` plane.
#[derive(Debug, Clone)]
pub struct ZigzagOrder {
    block_size: usize,
    /// zigzag rank -> natural index `row * B + col`
    order: Vec<usize>,
    /// natural index -> zigzag rank
    rank: Vec<usize>,
}

impl ZigzagOrder {
    pub fn new(block_size: usize) -> Result<Self> {
        check_block_size(block_size)?;
        let b = block_size;
        let mut order = Vec::with_capacity(b * b);
        for s in 0..(2 * b - 1) {
            let lo = s.saturating_sub(b - 1);
            let hi = s.min(b - 1);
            if s % 2 == 0 {
                for row in (lo..=hi).rev() {
                    order.push(row * b + (s - row));
                }
            } else {
                for row in lo..=hi {
                    order.push(row * b + (s - row));
                }
            }
        }
        let mut rank = vec![0; b * b];
        for (r, &idx) in order.iter().enumerate() {
            rank[idx] = r;
        }
        Ok(ZigzagOrder {
            block_size,
            order,
            rank,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Natural indices in zigzag order.
    pub fn indices(&self) -> &[usize] {
        &self.order
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let b = self.block_size;
        self.order.iter().map(move |&i| (i / b, i % b))
    }

    /// Zigzag rank of a natural index.
    pub fn rank_of(&self, index: usize) -> usize {
        self.rank[index]
    }

    pub fn prefix(&self, m: usize) -> Result<PositionMask> {
        let n = self.order.len();
        if m > n {
            return Err(Error::InvalidArgument(format!(
                "prefix length {m} exceeds {n} coefficients"
            )));
        }
        let mut mask = PositionMask::empty(self.block_size);
        for &i in &self.order[..m] {
            mask.bits[i] = true;
        }
        Ok(mask)
    }
}

pub fn zigzag_prefix(block_size: usize, m: usize) -> Result<PositionMask> {
    ZigzagOrder::new(block_size)?.prefix(m)
}

/// A set of coefficient positions within one block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PositionMask {
    block_size: usize,
    bits: Vec<bool>,
}

impl PositionMask {
    pub fn empty(block_size: usize) -> Self {
        PositionMask {
            block_size,
            bits: vec![false; block_size * block_size],
        }
    }

    pub fn full(block_size: usize) -> Self {
        PositionMask {
            block_size,
            bits: vec![true; block_size * block_size],
        }
    }

    pub fn from_indices(
        block_size: usize,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut mask = PositionMask::empty(block_size);
        for i in indices {
            if i >= mask.bits.len() {
                return Err(Error::InvalidArgument(format!(
                    "position {i} outside {block_size}x{block_size} block"
                )));
            }
            mask.bits[i] = true;
        }
        Ok(mask)
    }

    pub fn from_positions(
        block_size: usize,
        positions: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut indices = Vec::new();
        for (r, c) in positions {
            if r >= block_size || c >= block_size {
                return Err(Error::InvalidArgument(format!(
                    "position ({r}, {c}) outside {block_size}x{block_size} block"
                )));
            }
            indices.push(r * block_size + c);
        }
        Self::from_indices(block_size, indices)
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn contains_index(&self, index: usize) -> bool {
        self.bits.get(index).copied().unwrap_or(false)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.block_size && col < self.block_size && self.bits[row * self.block_size + col]
    }

    /// Natural indices in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let b = self.block_size;
        self.indices().map(move |i| (i / b, i % b))
    }

    /// Indicator vector (1.0 on members) in natural layout.
    pub fn indicator(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    fn check_same(&self, other: &PositionMask) -> Result<()> {
        if self.block_size == other.block_size {
            Ok(())
        } else {
            Err(Error::BlockSizeMismatch(self.block_size, other.block_size))
        }
    }

    pub fn complement(&self) -> PositionMask {
        PositionMask {
            block_size: self.block_size,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn union(&self, other: &PositionMask) -> Result<PositionMask> {
        self.combine(other, |a, b| a || b)
    }

    pub fn difference(&self, other: &PositionMask) -> Result<PositionMask> {
        self.combine(other, |a, b| a && !b)
    }

    pub fn intersection(&self, other: &PositionMask) -> Result<PositionMask> {
        self.combine(other, |a, b| a && b)
    }

    pub fn is_subset(&self, other: &PositionMask) -> Result<bool> {
        self.check_same(other)?;
        Ok(self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b))
    }

    pub fn is_disjoint(&self, other: &PositionMask) -> Result<bool> {
        Ok(self.intersection(other)?.is_empty())
    }

    fn combine(&self, other: &PositionMask, op: impl Fn(bool, bool) -> bool) -> Result<PositionMask> {
        self.check_same(other)?;
        Ok(PositionMask {
            block_size: self.block_size,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| op(a, b))
                .collect(),
        })
    }

    /// Element-wise product of a coefficient plane with this mask's indicator.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        coeffs
            .iter()
            .zip(&self.bits)
            .map(|(&c, &b)| if b { c } else { 0.0 })
            .collect()
    }
}

pub fn mask_complement(a: &PositionMask) -> PositionMask {
    a.complement()
}

pub fn mask_union(a: &PositionMask, b: &PositionMask) -> Result<PositionMask> {
    a.union(b)
}

pub fn mask_difference(a: &PositionMask, b: &PositionMask) -> Result<PositionMask> {
    a.difference(b)
}
