//! Frame interpolation between consecutive decoded key frames.

use log::warn;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::io::plugin::PluginBridge;

#[derive(Debug, Clone)]
pub struct InterpolationRequest<'a> {
    pub frame_a: &'a Frame,
    pub frame_b: &'a Frame,
    pub timestamps: Vec<f64>,
}

impl<'a> InterpolationRequest<'a> {
    pub fn new(frame_a: &'a Frame, frame_b: &'a Frame, timestamps: Vec<f64>) -> Result<Self> {
        frame_a.check_geometry(frame_b)?;
        if timestamps.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "timestamps {timestamps:?} must lie in (0, 1)"
            )));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "timestamps {timestamps:?} must be strictly increasing"
            )));
        }
        Ok(InterpolationRequest {
            frame_a,
            frame_b,
            timestamps,
        })
    }

    /// Timestamps `j / G` for the non-key offsets `j = 1..G` of one GOP.
    pub fn for_gop(frame_a: &'a Frame, frame_b: &'a Frame, gop: usize, count: usize) -> Result<Self> {
        let ts = (1..=count).map(|j| j as f64 / gop as f64).collect();
        Self::new(frame_a, frame_b, ts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    /// One frame per requested timestamp.
    pub frames: Vec<Frame>,
    /// Set when the frames come from the fallback path.
    pub degraded: bool,
}

pub trait Interpolator {
    fn interpolate(&self, request: &InterpolationRequest<'_>) -> Result<Interpolated>;
}

/// Temporal blend `(1 - t) * a + t * b`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearInterpolator;

pub fn interpolate_linear(request: &InterpolationRequest<'_>) -> Vec<Frame> {
    let a = request.frame_a;
    let b = request.frame_b;
    request
        .timestamps
        .iter()
        .map(|&t| {
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| (1.0 - t) * x + t * y)
                .collect();
            Frame::new(a.width(), a.height(), data).expect("same geometry")
        })
        .collect()
}

impl Interpolator for LinearInterpolator {
    fn interpolate(&self, request: &InterpolationRequest<'_>) -> Result<Interpolated> {
        Ok(Interpolated {
            frames: interpolate_linear(request),
            degraded: false,
        })
    }
}

/// Delegates to an external process over the file protocol and falls back to
/// [`interpolate_linear`] when the plugin fails.
#[derive(Debug, Clone)]
pub struct ExternalInterpolator {
    bridge: PluginBridge,
}

impl ExternalInterpolator {
    pub fn new(bridge: PluginBridge) -> Self {
        ExternalInterpolator { bridge }
    }
}

pub fn interpolate_external(
    request: &InterpolationRequest<'_>,
    bridge: &PluginBridge,
) -> Interpolated {
    if request.timestamps.is_empty() {
        return Interpolated {
            frames: Vec::new(),
            degraded: false,
        };
    }
    match bridge.interpolate(request) {
        Ok(frames) => Interpolated {
            frames,
            degraded: false,
        },
        Err(e) => {
            warn!("interpolation plugin failed, using linear blend: {e}");
            Interpolated {
                frames: interpolate_linear(request),
                degraded: true,
            }
        }
    }
}

impl Interpolator for ExternalInterpolator {
    fn interpolate(&self, request: &InterpolationRequest<'_>) -> Result<Interpolated> {
        Ok(interpolate_external(request, &self.bridge))
    }
}
