//! Binary stream layout (all multi-byte fields little-endian):
//!
//! ```text
//! header:  "VALC" | version u8 | width u16 | height u16 | block u8 | gop u8
//!          | delta_key f32 | delta_nonkey f32 | allocation u8 | frames u32
//! frame:   kind u8 | m_i u16 x n_B (raster order) | values f32 x sum(m_i)
//! ```
//!
//! Values follow each block's canonical order: the zigzag prefix, then the
//! phase-2 positions in allocation rank order.

use crate::error::{Error, Result};
use crate::sensing::{Allocation, FrameKind, GridGeometry};

pub const MAGIC: [u8; 4] = *b"VALC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 2 + 2 + 1 + 1 + 4 + 4 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamHeader {
    pub width: u16,
    pub height: u16,
    pub block_size: u8,
    pub gop: u8,
    pub delta_key: f32,
    pub delta_nonkey: f32,
    pub allocation: Allocation,
    pub frame_count: u32,
}

impl StreamHeader {
    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(
            usize::from(self.width),
            usize::from(self.height),
            usize::from(self.block_size),
        )
    }

    pub fn validate(&self) -> Result<GridGeometry> {
        let geometry = self.geometry()?;
        if self.gop < 2 {
            return Err(Error::Malformed(format!("GOP size {} < 2", self.gop)));
        }
        for (name, d) in [("key", self.delta_key), ("non-key", self.delta_nonkey)] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Malformed(format!("{name} ratio {d} outside (0, 1]")));
            }
        }
        Ok(geometry)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePayload {
    pub kind: FrameKind,
    /// Measurements per block in raster order.
    pub counts: Vec<u16>,
    /// All blocks' values back to back. Held at full precision in memory;
    /// the wire format narrows them to `f32`.
    pub values: Vec<f64>,
}

impl FramePayload {
    pub fn total(&self) -> usize {
        self.counts.iter().map(|&c| usize::from(c)).sum()
    }

    /// Values narrowed to what survives serialization.
    pub fn quantized(&self) -> FramePayload {
        FramePayload {
            kind: self.kind,
            counts: self.counts.clone(),
            values: self.values.iter().map(|&v| wire(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStream {
    pub header: StreamHeader,
    pub frames: Vec<FramePayload>,
}

impl EncodedStream {
    pub fn quantized(&self) -> EncodedStream {
        EncodedStream {
            header: self.header,
            frames: self.frames.iter().map(FramePayload::quantized).collect(),
        }
    }
}

/// Rounds through the `f32` wire representation.
#[inline]
pub fn wire(v: f64) -> f64 {
    v as f32 as f64
}

pub fn write_stream(stream: &EncodedStream) -> Result<Vec<u8>> {
    let h = &stream.header;
    let geometry = h.validate()?;
    if h.frame_count as usize != stream.frames.len() {
        return Err(Error::Malformed(format!(
            "header announces {} frames, stream holds {}",
            h.frame_count,
            stream.frames.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&h.width.to_le_bytes());
    out.extend_from_slice(&h.height.to_le_bytes());
    out.push(h.block_size);
    out.push(h.gop);
    out.extend_from_slice(&h.delta_key.to_le_bytes());
    out.extend_from_slice(&h.delta_nonkey.to_le_bytes());
    out.push(h.allocation.id());
    out.extend_from_slice(&h.frame_count.to_le_bytes());

    let n_blocks = geometry.n_blocks();
    let cap = geometry.coeffs_per_block();
    for (i, f) in stream.frames.iter().enumerate() {
        if f.counts.len() != n_blocks {
            return Err(Error::Malformed(format!(
                "frame {i} has {} block counts, expected {n_blocks}",
                f.counts.len()
            )));
        }
        if let Some(&c) = f.counts.iter().find(|&&c| usize::from(c) > cap) {
            return Err(Error::Malformed(format!("frame {i} block count {c} exceeds {cap}")));
        }
        if f.total() != f.values.len() {
            return Err(Error::Malformed(format!(
                "frame {i} carries {} values for {} measurements",
                f.values.len(),
                f.total()
            )));
        }
        out.push(f.kind.id());
        for c in &f.counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for &v in &f.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: impl FnOnce() -> String) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated { section: section() }),
        }
    }

    fn array<const N: usize>(&mut self, section: impl FnOnce() -> String) -> Result<[u8; N]> {
        Ok(self.take(N, section)?.try_into().expect("length checked"))
    }
}

pub fn read_stream(bytes: &[u8]) -> Result<EncodedStream> {
    let mut r = Reader { bytes, pos: 0 };
    let hdr = || "header".to_string();
    let magic: [u8; 4] = r.array(hdr)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = r.array::<1>(hdr)?[0];
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let width = u16::from_le_bytes(r.array(hdr)?);
    let height = u16::from_le_bytes(r.array(hdr)?);
    let block_size = r.array::<1>(hdr)?[0];
    let gop = r.array::<1>(hdr)?[0];
    let delta_key = f32::from_le_bytes(r.array(hdr)?);
    let delta_nonkey = f32::from_le_bytes(r.array(hdr)?);
    let alloc_id = r.array::<1>(hdr)?[0];
    let frame_count = u32::from_le_bytes(r.array(hdr)?);
    let allocation = Allocation::from_id(alloc_id)
        .ok_or_else(|| Error::Malformed(format!("unknown allocation id {alloc_id}")))?;
    let header = StreamHeader {
        width,
        height,
        block_size,
        gop,
        delta_key,
        delta_nonkey,
        allocation,
        frame_count,
    };
    let geometry = header.validate()?;
    let n_blocks = geometry.n_blocks();
    let cap = geometry.coeffs_per_block();

    let mut frames = Vec::with_capacity((frame_count as usize).min(1 << 16));
    for i in 0..frame_count as usize {
        let kind_id = r.array::<1>(|| format!("frame {i} kind"))?[0];
        let kind = FrameKind::from_id(kind_id)
            .ok_or_else(|| Error::Malformed(format!("frame {i}: unknown kind {kind_id}")))?;
        let raw = r.take(2 * n_blocks, || format!("frame {i} block counts"))?;
        let counts: Vec<u16> = raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        if let Some(b) = counts.iter().position(|&c| usize::from(c) > cap) {
            return Err(Error::Malformed(format!(
                "frame {i} block {b}: count {} exceeds {cap}",
                counts[b]
            )));
        }
        let total: usize = counts.iter().map(|&c| usize::from(c)).sum();
        let raw = r.take(4 * total, || format!("frame {i} coefficients"))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        frames.push(FramePayload {
            kind,
            counts,
            values,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after frame {}",
            bytes.len() - r.pos,
            frame_count
        )));
    }
    Ok(EncodedStream { header, frames })
}
