//! Plug-and-play iterative denoising refinement.
//!
//! Each iteration denoises the current estimate, projects the result back
//! onto the set of frames consistent with the measured coefficients, and
//! moves a damped step towards it:
//!
//! ```text
//! x <- x + damping * (P(denoise(x, sigma_k)) - x)
//! ```
//!
//! The measurement operator keeps a subset of orthonormal DCT coefficients
//! per block, so `P` is exact: transform, overwrite the measured
//! coefficients, inverse transform.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::io::plugin::PluginBridge;
use crate::sensing::{partition, SensedFrame};
use crate::transform::TransformKernel;

pub trait Denoiser {
    /// Must preserve geometry and return finite samples for finite input.
    fn denoise(&self, frame: &Frame, sigma: f64) -> Result<Frame>;

    fn name(&self) -> &str;
}

impl fmt::Debug for dyn Denoiser + Send + Sync {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Denoiser({})", self.name())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, frame: &Frame, _sigma: f64) -> Result<Frame> {
        Ok(frame.clone())
    }

    fn name(&self) -> &str {
        "identity"
    }
}

/// Separable Gaussian blur; `sigma` is the kernel's standard deviation in
/// pixels. Borders are handled by sample replication.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianDenoiser;

impl GaussianDenoiser {
    fn kernel(sigma: f64) -> Vec<f64> {
        let radius = (3.0 * sigma).ceil().max(1.0) as usize;
        let mut k: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let sum: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= sum);
        k
    }
}

impl Denoiser for GaussianDenoiser {
    fn denoise(&self, frame: &Frame, sigma: f64) -> Result<Frame> {
        if sigma <= 0.0 {
            return Ok(frame.clone());
        }
        let k = Self::kernel(sigma);
        let r = (k.len() / 2) as isize;
        let (w, h) = (frame.width() as isize, frame.height() as isize);
        let mut tmp = Frame::filled(frame.width(), frame.height(), 0.0);
        for y in 0..h {
            for x in 0..w {
                let s: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, &kv)| {
                        let xx = (x + i as isize - r).clamp(0, w - 1);
                        kv * frame.get(y as usize, xx as usize)
                    })
                    .sum();
                tmp.set(y as usize, x as usize, s);
            }
        }
        let mut out = Frame::filled(frame.width(), frame.height(), 0.0);
        for y in 0..h {
            for x in 0..w {
                let s: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, &kv)| {
                        let yy = (y + i as isize - r).clamp(0, h - 1);
                        kv * tmp.get(yy as usize, x as usize)
                    })
                    .sum();
                out.set(y as usize, x as usize, s);
            }
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "gaussian"
    }
}

/// Soft thresholding of the detail bands of a one-level orthonormal 2D Haar
/// decomposition, averaged over the four half-pixel shifts of the 2x2 grid.
/// `sigma` is the threshold in sample units.
#[derive(Debug, Clone, Copy, Default)]
pub struct HaarShrinkDenoiser;

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl HaarShrinkDenoiser {
    fn shrink_shifted(frame: &Frame, dy: usize, dx: usize, t: f64, acc: &mut [f64]) {
        let (w, h) = (frame.width(), frame.height());
        let mut out = frame.data().to_vec();
        let mut y = dy;
        while y + 1 < h {
            let mut x = dx;
            while x + 1 < w {
                let a = frame.get(y, x);
                let b = frame.get(y, x + 1);
                let c = frame.get(y + 1, x);
                let d = frame.get(y + 1, x + 1);
                let ll = (a + b + c + d) / 2.0;
                let lh = soft((a - b + c - d) / 2.0, t);
                let hl = soft((a + b - c - d) / 2.0, t);
                let hh = soft((a - b - c + d) / 2.0, t);
                out[y * w + x] = (ll + lh + hl + hh) / 2.0;
                out[y * w + x + 1] = (ll - lh + hl - hh) / 2.0;
                out[(y + 1) * w + x] = (ll + lh - hl - hh) / 2.0;
                out[(y + 1) * w + x + 1] = (ll - lh - hl + hh) / 2.0;
                x += 2;
            }
            y += 2;
        }
        for (a, o) in acc.iter_mut().zip(out) {
            *a += o;
        }
    }
}

impl Denoiser for HaarShrinkDenoiser {
    fn denoise(&self, frame: &Frame, sigma: f64) -> Result<Frame> {
        if sigma <= 0.0 {
            return Ok(frame.clone());
        }
        let mut acc = vec![0.0; frame.data().len()];
        for dy in 0..2 {
            for dx in 0..2 {
                Self::shrink_shifted(frame, dy, dx, sigma, &mut acc);
            }
        }
        acc.iter_mut().for_each(|v| *v /= 4.0);
        Frame::new(frame.width(), frame.height(), acc)
    }

    fn name(&self) -> &str {
        "haar"
    }
}

/// Denoiser run by an external process over the plugin file protocol.
/// Plugin failures abort the reconstruction.
#[derive(Debug, Clone)]
pub struct ExternalDenoiser {
    bridge: PluginBridge,
}

impl ExternalDenoiser {
    pub fn new(bridge: PluginBridge) -> Self {
        ExternalDenoiser { bridge }
    }
}

impl Denoiser for ExternalDenoiser {
    fn denoise(&self, frame: &Frame, sigma: f64) -> Result<Frame> {
        self.bridge.denoise(frame, sigma)
    }

    fn name(&self) -> &str {
        "external"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaSchedule {
    Constant(f64),
    /// `start * ratio^k`, never below `floor`.
    Geometric { start: f64, ratio: f64, floor: f64 },
}

impl SigmaSchedule {
    pub fn at(&self, iteration: usize) -> f64 {
        match *self {
            SigmaSchedule::Constant(s) => s,
            SigmaSchedule::Geometric { start, ratio, floor } => {
                (start * ratio.powi(iteration as i32)).max(floor)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdaConfig {
    pub iterations: usize,
    pub damping: f64,
    pub schedule: SigmaSchedule,
}

impl Default for IdaConfig {
    fn default() -> Self {
        IdaConfig {
            iterations: 20,
            damping: 1.0,
            schedule: SigmaSchedule::Constant(4.0),
        }
    }
}

impl IdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("IDA needs at least one iteration".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "IDA damping {} outside (0, 1]",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Replaces the measured coefficients of every block of `x` with the measured
/// values. Samples outside the block grid are left untouched.
pub fn project_measurements(x: &Frame, sensed: &SensedFrame) -> Result<Frame> {
    let geometry = sensed.geometry();
    geometry.check_frame(x)?;
    let kernel = TransformKernel::new(geometry.block_size)?;
    let grid = partition(x, geometry.block_size)?;
    let b = geometry.block_size;
    let n = b * b;
    let mut out = x.clone();
    let mut plane = vec![0.0; n];
    let mut block = vec![0.0; n];
    for (i, tile) in grid.blocks().iter().enumerate() {
        let bp = sensed.plan().block(i);
        if bp.is_empty() {
            continue;
        }
        kernel.forward_into(tile, &mut plane);
        for (&p, &v) in bp.order().iter().zip(&sensed.values()[i]) {
            plane[p] = v;
        }
        kernel.inverse_into(&plane, &mut block);
        let (r0, c0) = geometry.block_origin(i);
        for r in 0..b {
            let start = (r0 + r) * geometry.width + c0;
            out.data_mut()[start..start + b].copy_from_slice(&block[r * b..(r + 1) * b]);
        }
    }
    Ok(out)
}

/// Runs the damped projected plug-and-play iteration from `initial`
/// (the zero-filled inverse DCT when `None`).
pub fn ida_reconstruct(
    sensed: &SensedFrame,
    config: &IdaConfig,
    denoiser: &dyn Denoiser,
    initial: Option<&Frame>,
) -> Result<Frame> {
    config.validate()?;
    let mut x = match initial {
        Some(f) => {
            sensed.geometry().check_frame(f)?;
            f.clone()
        }
        None => crate::codec::reconstruct_fast(sensed)?,
    };
    for k in 0..config.iterations {
        let sigma = config.schedule.at(k);
        let denoised = denoiser.denoise(&x, sigma)?;
        x.check_geometry(&denoised)?;
        if !denoised.is_finite() {
            return Err(Error::NonFinite(format!(
                "denoiser '{}' at iteration {k} (sigma {sigma})",
                denoiser.name()
            )));
        }
        let projected = project_measurements(&denoised, sensed)?;
        if config.damping == 1.0 {
            x = projected;
        } else {
            for (xv, pv) in x.data_mut().iter_mut().zip(projected.data()) {
                *xv += config.damping * (pv - *xv);
            }
        }
    }
    Ok(x)
}
