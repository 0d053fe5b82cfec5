//! Block partitioning and two-phase adaptive allocation of partial-DCT
//! measurements.
//!
//! Phase 1 collects the same low-pass zigzag prefix from every block. Phase 2
//! spends the rest of the budget where the phase-1 evidence says the energy is:
//! [`thi_allocate`] thresholds the phase-1 coefficients of the whole image,
//! [`mdd_allocate`] ranks a reference frame's coefficients after refreshing
//! their low-pass region with the current frame's phase-1 values.
//!
//! Both allocators are pure functions of their inputs and break ties by
//! `(block index, zigzag rank)`, so the decoder can recompute any plan from
//! the data it already holds.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::transform::{check_block_size, PositionMask, TransformKernel, ZigzagOrder};

/// Geometry shared by a frame, its block grid and every plan made for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub block_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GridGeometry {
    pub fn new(width: usize, height: usize, block_size: usize) -> Result<Self> {
        check_block_size(block_size)?;
        if width < block_size || height < block_size {
            return Err(Error::FrameTooSmall {
                width,
                height,
                block_size,
            });
        }
        Ok(GridGeometry {
            width,
            height,
            block_size,
            rows: height / block_size,
            cols: width / block_size,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.rows * self.cols
    }

    pub fn coeffs_per_block(&self) -> usize {
        self.block_size * self.block_size
    }

    pub fn total_coeffs(&self) -> usize {
        self.n_blocks() * self.coeffs_per_block()
    }

    pub fn cropped_width(&self) -> usize {
        self.cols * self.block_size
    }

    pub fn cropped_height(&self) -> usize {
        self.rows * self.block_size
    }

    /// Top-left sample of block `i` (raster order).
    pub fn block_origin(&self, i: usize) -> (usize, usize) {
        ((i / self.cols) * self.block_size, (i % self.cols) * self.block_size)
    }

    /// Measurement budget `M = round(delta * n_B * B^2)`.
    pub fn budget(&self, delta: f64) -> usize {
        (delta * self.total_coeffs() as f64).round() as usize
    }

    pub(crate) fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.width() == self.width && frame.height() == self.height {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", frame.width(), frame.height()),
            ))
        }
    }
}

/// The cropped `B x B` tiles of a frame in raster order.
#[derive(Debug, Clone)]
pub struct BlockGrid {
    geometry: GridGeometry,
    blocks: Vec<Vec<f64>>,
}

impl BlockGrid {
    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Full DCT coefficient plane of every block.
    pub fn coefficient_planes(&self) -> Vec<Vec<f64>> {
        let kernel = TransformKernel::new(self.geometry.block_size).expect("validated block size");
        let n = self.geometry.coeffs_per_block();
        self.blocks
            .iter()
            .map(|b| {
                let mut out = vec![0.0; n];
                kernel.forward_into(b, &mut out);
                out
            })
            .collect()
    }
}

/// Crops the frame to whole blocks (top-left aligned) and tiles it.
pub fn partition(frame: &Frame, block_size: usize) -> Result<BlockGrid> {
    let geometry = GridGeometry::new(frame.width(), frame.height(), block_size)?;
    let b = block_size;
    let blocks = (0..geometry.n_blocks())
        .map(|i| {
            let (r0, c0) = geometry.block_origin(i);
            let mut tile = Vec::with_capacity(b * b);
            for r in r0..r0 + b {
                let start = r * frame.width() + c0;
                tile.extend_from_slice(&frame.data()[start..start + b]);
            }
            tile
        })
        .collect();
    Ok(BlockGrid { geometry, blocks })
}

/// Reassembles blocks into a frame; samples outside the cropped region copy
/// the nearest reconstructed sample.
pub fn assemble(geometry: &GridGeometry, blocks: &[Vec<f64>]) -> Frame {
    let b = geometry.block_size;
    let mut frame = Frame::filled(geometry.width, geometry.height, 0.0);
    for (i, block) in blocks.iter().enumerate() {
        let (r0, c0) = geometry.block_origin(i);
        for r in 0..b {
            let start = (r0 + r) * geometry.width + c0;
            frame.data_mut()[start..start + b].copy_from_slice(&block[r * b..(r + 1) * b]);
        }
    }
    fill_margins(geometry, &mut frame);
    frame
}

pub(crate) fn fill_margins(geometry: &GridGeometry, frame: &mut Frame) {
    let (cw, ch) = (geometry.cropped_width(), geometry.cropped_height());
    if cw == geometry.width && ch == geometry.height {
        return;
    }
    for r in 0..geometry.height {
        for c in 0..geometry.width {
            if r >= ch || c >= cw {
                let v = frame.get(r.min(ch - 1), c.min(cw - 1));
                frame.set(r, c, v);
            }
        }
    }
}

/// Phase-1 count per block, `floor(B^2 / (2 * C_F))`.
pub fn phase1_count(block_size: usize, compression_factor: f64) -> Result<usize> {
    if !(compression_factor >= 1.0) || !compression_factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "compression factor {compression_factor} must be >= 1"
        )));
    }
    let n = (block_size * block_size) as f64;
    // tolerance absorbs 1/delta round-off on exact quotients
    Ok((n / (2.0 * compression_factor) + 1e-9).floor() as usize)
}

/// [`phase1_count`] for a compression ratio `delta = M/N`.
pub fn phase1_count_for_ratio(block_size: usize, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "compression ratio {delta} outside (0, 1]"
        )));
    }
    phase1_count(block_size, 1.0 / delta)
}

/// Coefficients at the first `m1` zigzag positions of every block.
pub fn sense_phase1(grid: &BlockGrid, m1: usize) -> Result<Vec<Vec<f64>>> {
    let planes = grid.coefficient_planes();
    phase1_from_planes(&grid.geometry, &planes, m1)
}

pub(crate) fn phase1_from_planes(
    geometry: &GridGeometry,
    planes: &[Vec<f64>],
    m1: usize,
) -> Result<Vec<Vec<f64>>> {
    let zz = ZigzagOrder::new(geometry.block_size)?;
    if m1 > geometry.coeffs_per_block() {
        return Err(Error::InvalidArgument(format!(
            "phase-1 count {m1} exceeds {} coefficients",
            geometry.coeffs_per_block()
        )));
    }
    Ok(planes
        .iter()
        .map(|p| zz.indices()[..m1].iter().map(|&i| p[i]).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Allocation {
    Thi,
    Mdd,
    Fixed,
}

impl Allocation {
    pub fn id(self) -> u8 {
        match self {
            Allocation::Thi => 0,
            Allocation::Mdd => 1,
            Allocation::Fixed => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Allocation::Thi),
            1 => Some(Allocation::Mdd),
            2 => Some(Allocation::Fixed),
            _ => None,
        }
    }
}

/// Measurements of one block: a zigzag prefix of `m1` positions followed by
/// `m2` phase-2 positions, listed in the canonical order their values are
/// transmitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPlan {
    pub m1: usize,
    pub m2: usize,
    order: Vec<usize>,
}

impl BlockPlan {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Natural coefficient indices in transmission order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementPlan {
    geometry: GridGeometry,
    allocation: Allocation,
    blocks: Vec<BlockPlan>,
}

impl MeasurementPlan {
    /// Builds a plan from explicit per-block orders, checking every invariant.
    pub fn new(
        geometry: GridGeometry,
        allocation: Allocation,
        blocks: Vec<BlockPlan>,
    ) -> Result<Self> {
        if blocks.len() != geometry.n_blocks() {
            return Err(Error::dims(geometry.n_blocks(), blocks.len()));
        }
        let zz = ZigzagOrder::new(geometry.block_size)?;
        let n = geometry.coeffs_per_block();
        for (i, bp) in blocks.iter().enumerate() {
            let bad = |why: &str| Error::InvalidArgument(format!("block {i}: {why}"));
            if bp.m1 + bp.m2 != bp.order.len() || bp.order.len() > n {
                return Err(bad("count does not match positions"));
            }
            if bp.order[..bp.m1] != zz.indices()[..bp.m1] {
                return Err(bad("missing zigzag prefix"));
            }
            let mut seen = vec![false; n];
            for &p in &bp.order {
                if p >= n || seen[p] {
                    return Err(bad("duplicate or out-of-range position"));
                }
                seen[p] = true;
            }
        }
        Ok(MeasurementPlan {
            geometry,
            allocation,
            blocks,
        })
    }

    /// Plan whose positions in every block are the zigzag prefix of length
    /// `counts[i]`; `m1` of them are attributed to phase 1.
    pub fn zigzag_prefixes(
        geometry: GridGeometry,
        allocation: Allocation,
        m1: usize,
        counts: &[usize],
    ) -> Result<Self> {
        let zz = ZigzagOrder::new(geometry.block_size)?;
        let n = geometry.coeffs_per_block();
        let blocks = counts
            .iter()
            .map(|&m| {
                if m > n {
                    return Err(Error::InvalidArgument(format!(
                        "block count {m} exceeds {n}"
                    )));
                }
                let m1 = m1.min(m);
                Ok(BlockPlan {
                    m1,
                    m2: m - m1,
                    order: zz.indices()[..m].to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(geometry, allocation, blocks)
    }

    /// Non-adaptive plan measuring the same zigzag prefix in every block.
    pub fn fixed(geometry: GridGeometry, m: usize) -> Result<Self> {
        let counts = vec![m; geometry.n_blocks()];
        Self::zigzag_prefixes(geometry, Allocation::Fixed, m, &counts)
    }

    pub fn full(geometry: GridGeometry, allocation: Allocation) -> Result<Self> {
        let counts = vec![geometry.coeffs_per_block(); geometry.n_blocks()];
        Self::zigzag_prefixes(geometry, allocation, 0, &counts)
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn allocation(&self) -> Allocation {
        self.allocation
    }

    pub fn blocks(&self) -> &[BlockPlan] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &BlockPlan {
        &self.blocks[i]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.blocks.iter().map(BlockPlan::len).collect()
    }

    pub fn total(&self) -> usize {
        self.blocks.iter().map(BlockPlan::len).sum()
    }

    pub fn positions(&self, i: usize) -> PositionMask {
        PositionMask::from_indices(self.geometry.block_size, self.blocks[i].order.iter().copied())
            .expect("plan positions validated")
    }

    pub fn delta_realized(&self) -> f64 {
        self.total() as f64 / self.geometry.total_coeffs() as f64
    }
}

fn uniform_phase1_len(geometry: &GridGeometry, phase1: &[Vec<f64>]) -> Result<usize> {
    if phase1.len() != geometry.n_blocks() {
        return Err(Error::dims(
            format!("{} blocks", geometry.n_blocks()),
            format!("{} blocks", phase1.len()),
        ));
    }
    let m1 = phase1.first().map_or(0, Vec::len);
    if phase1.iter().any(|v| v.len() != m1) {
        return Err(Error::InvalidArgument(
            "phase-1 vectors differ in length".into(),
        ));
    }
    if m1 > geometry.coeffs_per_block() {
        return Err(Error::InvalidArgument(format!(
            "phase-1 length {m1} exceeds block"
        )));
    }
    Ok(m1)
}

/// Magnitudes below this rank as exact zeros, so transform round-off on flat
/// content (about 1e-13 for 8-bit samples) cannot win a threshold or a rank.
pub const MAGNITUDE_FLOOR: f64 = 1e-9;

fn magnitude(x: f64) -> f64 {
    let a = x.abs();
    if a < MAGNITUDE_FLOOR {
        0.0
    } else {
        a
    }
}

/// Descending magnitude; ties resolved by ascending `(block, zigzag rank)`.
fn rank_order(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Threshold-over-whole-image allocation.
///
/// `T_I` is the magnitude of the `floor(M/4)`-th largest phase-1 coefficient
/// over all blocks; each block then takes twice as many extra coefficients as
/// it has phase-1 values strictly above `T_I`, continuing its zigzag prefix and
/// capped at the block size.
pub fn thi_allocate(
    geometry: &GridGeometry,
    phase1: &[Vec<f64>],
    budget: usize,
) -> Result<MeasurementPlan> {
    let m1 = uniform_phase1_len(geometry, phase1)?;
    let total = geometry.total_coeffs();
    if budget > total {
        return Err(Error::InvalidBudget(format!(
            "budget {budget} exceeds {total} coefficients"
        )));
    }
    if budget == total {
        let counts = vec![geometry.coeffs_per_block(); geometry.n_blocks()];
        return MeasurementPlan::zigzag_prefixes(*geometry, Allocation::Thi, m1, &counts);
    }
    if m1 == 0 {
        return Err(Error::InvalidBudget(
            "phase 1 collects no coefficients".into(),
        ));
    }
    let k = budget / 4;
    let available = phase1.len() * m1;
    if k > available {
        return Err(Error::InvalidBudget(format!(
            "M/4 = {k} exceeds {available} phase-1 coefficients"
        )));
    }

    let threshold = if k == 0 {
        f64::INFINITY
    } else {
        let mut ranked: Vec<(f64, usize, usize)> = phase1
            .iter()
            .enumerate()
            .flat_map(|(b, v)| v.iter().enumerate().map(move |(r, &x)| (magnitude(x), b, r)))
            .collect();
        ranked.sort_unstable_by(rank_order);
        ranked[k - 1].0
    };

    let n = geometry.coeffs_per_block();
    let counts: Vec<usize> = phase1
        .iter()
        .map(|v| {
            let above = v.iter().filter(|&&x| magnitude(x) > threshold).count();
            m1 + (2 * above).min(n - m1)
        })
        .collect();
    MeasurementPlan::zigzag_prefixes(*geometry, Allocation::Thi, m1, &counts)
}

/// Mixed-mode DCT-domain allocation.
///
/// The reference planes get their first `m1` zigzag coefficients replaced by
/// the current frame's phase-1 values; the global top-`M` positions of the
/// mixed planes that are not already in a block's prefix become that block's
/// phase-2 positions, listed in global rank order.
pub fn mdd_allocate(
    geometry: &GridGeometry,
    phase1: &[Vec<f64>],
    reference: &[Vec<f64>],
    budget: usize,
) -> Result<MeasurementPlan> {
    let m1 = uniform_phase1_len(geometry, phase1)?;
    let n = geometry.coeffs_per_block();
    if reference.len() != geometry.n_blocks() || reference.iter().any(|p| p.len() != n) {
        return Err(Error::InvalidArgument(
            "reference planes do not cover the block grid".into(),
        ));
    }
    let total = geometry.total_coeffs();
    if budget > total {
        return Err(Error::InvalidBudget(format!(
            "budget {budget} exceeds {total} coefficients"
        )));
    }
    let zz = ZigzagOrder::new(geometry.block_size)?;

    let mut ranked: Vec<(f64, usize, usize)> = Vec::with_capacity(total);
    for (b, plane) in reference.iter().enumerate() {
        for (rank, &idx) in zz.indices().iter().enumerate() {
            let v = if rank < m1 { phase1[b][rank] } else { plane[idx] };
            ranked.push((magnitude(v), b, rank));
        }
    }
    if budget < total {
        ranked.select_nth_unstable_by(budget, rank_order);
        ranked.truncate(budget);
    }
    ranked.sort_unstable_by(rank_order);

    let mut blocks: Vec<BlockPlan> = (0..geometry.n_blocks())
        .map(|_| BlockPlan {
            m1,
            m2: 0,
            order: zz.indices()[..m1].to_vec(),
        })
        .collect();
    for &(_, b, rank) in &ranked {
        if rank >= m1 {
            let bp = &mut blocks[b];
            bp.order.push(zz.indices()[rank]);
            bp.m2 += 1;
        }
    }
    MeasurementPlan::new(*geometry, Allocation::Mdd, blocks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Key,
    NonKey,
}

impl FrameKind {
    pub fn id(self) -> u8 {
        match self {
            FrameKind::Key => 0,
            FrameKind::NonKey => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(FrameKind::Key),
            1 => Some(FrameKind::NonKey),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FrameKind::Key => "key",
            FrameKind::NonKey => "nonkey",
        }
    }
}

/// A plan plus the coefficient values measured at its positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SensedFrame {
    plan: MeasurementPlan,
    values: Vec<Vec<f64>>,
    kind: FrameKind,
}

impl SensedFrame {
    pub fn new(plan: MeasurementPlan, values: Vec<Vec<f64>>, kind: FrameKind) -> Result<Self> {
        if values.len() != plan.blocks.len() {
            return Err(Error::dims(plan.blocks.len(), values.len()));
        }
        for (i, (bp, v)) in plan.blocks.iter().zip(&values).enumerate() {
            if bp.len() != v.len() {
                return Err(Error::dims(
                    format!("{} values in block {i}", bp.len()),
                    v.len(),
                ));
            }
        }
        Ok(SensedFrame { plan, values, kind })
    }

    pub(crate) fn from_planes(plan: MeasurementPlan, planes: &[Vec<f64>], kind: FrameKind) -> Self {
        let values = plan
            .blocks
            .iter()
            .zip(planes)
            .map(|(bp, p)| bp.order.iter().map(|&i| p[i]).collect())
            .collect();
        SensedFrame { plan, values, kind }
    }

    pub fn plan(&self) -> &MeasurementPlan {
        &self.plan
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn geometry(&self) -> GridGeometry {
        self.plan.geometry
    }

    pub fn delta_realized(&self) -> f64 {
        self.plan.delta_realized()
    }

    /// Coefficient planes with zeros at unmeasured positions.
    pub fn dense_planes(&self) -> Vec<Vec<f64>> {
        let n = self.plan.geometry.coeffs_per_block();
        self.plan
            .blocks
            .iter()
            .zip(&self.values)
            .map(|(bp, v)| {
                let mut plane = vec![0.0; n];
                for (&i, &x) in bp.order.iter().zip(v) {
                    plane[i] = x;
                }
                plane
            })
            .collect()
    }

    /// The leading `m1` (zigzag prefix) values of every block.
    pub fn phase1_values(&self, m1: usize) -> Result<Vec<Vec<f64>>> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.get(..m1).map(<[f64]>::to_vec).ok_or_else(|| {
                    Error::Malformed(format!("block {i} carries fewer than {m1} values"))
                })
            })
            .collect()
    }
}

/// Measures the frame's coefficients at exactly the planned positions.
pub fn sense_with_plan(
    grid: &BlockGrid,
    plan: &MeasurementPlan,
    kind: FrameKind,
) -> Result<SensedFrame> {
    if grid.geometry != plan.geometry {
        return Err(Error::dims(
            format!("{:?}", plan.geometry),
            format!("{:?}", grid.geometry),
        ));
    }
    Ok(SensedFrame::from_planes(
        plan.clone(),
        &grid.coefficient_planes(),
        kind,
    ))
}
