//! C ABI for the valc codec.
//!
//! Handles are opaque and owned by the caller once returned; each has a
//! matching `_free`. Every fallible call returns a [`ValcStatus`]; on failure
//! [`valc_last_error_message`] describes the most recent error on the calling
//! thread. Frames cross the boundary as 8-bit luminance rasters with an
//! explicit row stride.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use valc::codec::{
    rate_split, to_payload, DecodeOptions, DecodedFrame, Encoder, GopConfig, MixingMask,
    Reconstruction,
};
use valc::ida::{HaarShrinkDenoiser, IdaConfig, SigmaSchedule};
use valc::io::bitstream::{read_stream, write_stream, EncodedStream, FramePayload};
use valc::metrics::{ms_ssim, psnr};
use valc::vfi::LinearInterpolator;
use valc::{Allocation, Error, Frame, FrameKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    MalformedStream = 4,
    Io = 5,
    Plugin = 6,
    Numeric = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValcAllocation {
    Thi = 0,
    Mdd = 1,
    Fixed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValcReconstruction {
    Fast = 0,
    /// Iterative refinement with the built-in Haar shrinkage denoiser.
    Ida = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValcMixing {
    FullComplement = 0,
    KeyMeasured = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ValcEncodeParams {
    pub gop: u32,
    pub block_size: u32,
    pub delta_key: f64,
    /// Target GOP average; the non-key ratio is derived from it.
    pub delta_avg: f64,
    /// A [`ValcAllocation`] value.
    pub allocation: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ValcDecodeParams {
    /// A [`ValcReconstruction`] value.
    pub reconstruction: u32,
    pub ida_iterations: u32,
    pub ida_damping: f64,
    pub ida_sigma: f64,
    /// Best-pixel threshold; negative selects the default for the
    /// reconstruction mode.
    pub threshold: f64,
    /// A [`ValcMixing`] value.
    pub mixing: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ValcFrameInfo {
    pub index: u32,
    /// 1 for key frames, 0 otherwise.
    pub is_key: u8,
    pub delta_realized: f64,
}

/// Byte buffer allocated by the library; release with [`valc_buffer_free`].
#[repr(C)]
#[derive(Debug)]
pub struct ValcBuffer {
    pub data: *mut u8,
    pub len: usize,
}

pub struct ValcEncoder {
    encoder: Encoder,
    payloads: Vec<FramePayload>,
}

pub struct ValcDecoded {
    frames: Vec<DecodedFrame>,
    width: usize,
    height: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ValcStatus {
    match e {
        Error::InvalidConfig(_) | Error::InvalidBudget(_) => ValcStatus::InvalidConfig,
        Error::BadMagic(_)
        | Error::UnsupportedVersion(_)
        | Error::Truncated { .. }
        | Error::Malformed(_)
        | Error::PlanMismatch { .. }
        | Error::MissingKeyFrame(_) => ValcStatus::MalformedStream,
        Error::Io { .. } | Error::EmptyInput(_) => ValcStatus::Io,
        Error::Plugin(_) => ValcStatus::Plugin,
        Error::NonFinite(_) => ValcStatus::Numeric,
        _ => ValcStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic for [`valc_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), (ValcStatus, String)>) -> ValcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ValcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ValcStatus::Panic
        }
    }
}

fn lift<T>(r: valc::Result<T>) -> Result<T, (ValcStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn bad_enum(what: &str, value: u32) -> (ValcStatus, String) {
    (ValcStatus::InvalidArgument, format!("unknown {what} value {value}"))
}

fn null(what: &str) -> (ValcStatus, String) {
    (ValcStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn frame_from_raw(
    pixels: *const u8,
    width: u32,
    height: u32,
    stride: u32,
) -> Result<Frame, (ValcStatus, String)> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let (w, h, s) = (width as usize, height as usize, stride as usize);
    if w == 0 || h == 0 || s < w {
        return Err((
            ValcStatus::InvalidArgument,
            format!("bad raster {width}x{height} with stride {stride}"),
        ));
    }
    let raw = slice::from_raw_parts(pixels, s * (h - 1) + w);
    let mut data = Vec::with_capacity(w * h);
    for r in 0..h {
        data.extend(raw[r * s..r * s + w].iter().map(|&v| f64::from(v)));
    }
    lift(Frame::new(w, h, data))
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn valc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn valc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn valc_rate_split(
    delta_avg: f64,
    gop: u32,
    delta_key: f64,
    out: *mut f64,
) -> ValcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(rate_split(delta_avg, gop as usize, delta_key))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn valc_encoder_new(
    params: *const ValcEncodeParams,
    out: *mut *mut ValcEncoder,
) -> ValcStatus {
    guard(|| {
        if params.is_null() || out.is_null() {
            return Err(null("params or out"));
        }
        let p = &*params;
        let allocation = match p.allocation {
            x if x == ValcAllocation::Thi as u32 => Allocation::Thi,
            x if x == ValcAllocation::Mdd as u32 => Allocation::Mdd,
            x if x == ValcAllocation::Fixed as u32 => Allocation::Fixed,
            x => return Err(bad_enum("allocation", x)),
        };
        let cfg = lift(GopConfig::from_average(
            p.gop as usize,
            p.block_size as usize,
            p.delta_key,
            p.delta_avg,
            allocation,
        ))?;
        let encoder = lift(Encoder::new(cfg))?;
        *out = Box::into_raw(Box::new(ValcEncoder {
            encoder,
            payloads: Vec::new(),
        }));
        Ok(())
    })
}

/// Senses one frame. `stride` is the distance in bytes between rows.
#[no_mangle]
pub unsafe extern "C" fn valc_encoder_push(
    encoder: *mut ValcEncoder,
    pixels: *const u8,
    width: u32,
    height: u32,
    stride: u32,
) -> ValcStatus {
    guard(|| {
        let enc = encoder.as_mut().ok_or_else(|| null("encoder"))?;
        let frame = frame_from_raw(pixels, width, height, stride)?;
        let sensed = lift(enc.encoder.encode_frame(&frame))?;
        enc.payloads.push(to_payload(&sensed));
        Ok(())
    })
}

/// Serializes every frame pushed so far. The encoder stays usable.
#[no_mangle]
pub unsafe extern "C" fn valc_encoder_finish(
    encoder: *const ValcEncoder,
    out: *mut ValcBuffer,
) -> ValcStatus {
    guard(|| {
        let enc = encoder.as_ref().ok_or_else(|| null("encoder"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let header = lift(enc.encoder.header(enc.payloads.len()))?;
        let stream = EncodedStream {
            header,
            frames: enc.payloads.clone(),
        };
        let bytes = lift(write_stream(&stream))?.into_boxed_slice();
        let len = bytes.len();
        *out = ValcBuffer {
            data: Box::into_raw(bytes).cast(),
            len,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn valc_encoder_free(encoder: *mut ValcEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

#[no_mangle]
pub unsafe extern "C" fn valc_buffer_free(buffer: *mut ValcBuffer) {
    if let Some(b) = buffer.as_mut() {
        if !b.data.is_null() {
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(b.data, b.len)));
        }
        b.data = ptr::null_mut();
        b.len = 0;
    }
}

#[no_mangle]
pub extern "C" fn valc_decode_params_default() -> ValcDecodeParams {
    let ida = IdaConfig::default();
    ValcDecodeParams {
        reconstruction: ValcReconstruction::Fast as u32,
        ida_iterations: ida.iterations as u32,
        ida_damping: ida.damping,
        ida_sigma: ida.schedule.at(0),
        threshold: -1.0,
        mixing: ValcMixing::FullComplement as u32,
    }
}

/// Decodes a whole stream with linear interpolation between key frames.
/// `params` may be NULL for defaults.
#[no_mangle]
pub unsafe extern "C" fn valc_decode(
    data: *const u8,
    len: usize,
    params: *const ValcDecodeParams,
    out: *mut *mut ValcDecoded,
) -> ValcStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            return Err(null("data or out"));
        }
        let p = params.as_ref().copied().unwrap_or_else(|| valc_decode_params_default());
        let reconstruction = match p.reconstruction {
            x if x == ValcReconstruction::Fast as u32 => Reconstruction::Fast,
            x if x == ValcReconstruction::Ida as u32 => {
                let config = IdaConfig {
                    iterations: p.ida_iterations as usize,
                    damping: p.ida_damping,
                    schedule: SigmaSchedule::Constant(p.ida_sigma),
                };
                lift(config.validate())?;
                Reconstruction::Ida {
                    config,
                    denoiser: Arc::new(HaarShrinkDenoiser),
                }
            }
            x => return Err(bad_enum("reconstruction", x)),
        };
        let options = DecodeOptions {
            reconstruction,
            mixing: match p.mixing {
                x if x == ValcMixing::FullComplement as u32 => MixingMask::FullComplement,
                x if x == ValcMixing::KeyMeasured as u32 => MixingMask::KeyMeasured,
                x => return Err(bad_enum("mixing", x)),
            },
            threshold: (p.threshold >= 0.0).then_some(p.threshold),
        };
        let stream = lift(read_stream(slice::from_raw_parts(data, len)))?;
        let frames = lift(valc::decode_sequence(&stream, &LinearInterpolator, &options))?;
        *out = Box::into_raw(Box::new(ValcDecoded {
            frames,
            width: usize::from(stream.header.width),
            height: usize::from(stream.header.height),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn valc_decoded_count(decoded: *const ValcDecoded) -> usize {
    decoded.as_ref().map_or(0, |d| d.frames.len())
}

#[no_mangle]
pub unsafe extern "C" fn valc_decoded_size(
    decoded: *const ValcDecoded,
    width: *mut u32,
    height: *mut u32,
) -> ValcStatus {
    guard(|| {
        let d = decoded.as_ref().ok_or_else(|| null("decoded"))?;
        if width.is_null() || height.is_null() {
            return Err(null("width or height"));
        }
        *width = d.width as u32;
        *height = d.height as u32;
        Ok(())
    })
}

fn frame_at(d: &ValcDecoded, index: usize) -> Result<&DecodedFrame, (ValcStatus, String)> {
    d.frames.get(index).ok_or_else(|| {
        (
            ValcStatus::InvalidArgument,
            format!("frame {index} out of range ({} frames)", d.frames.len()),
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn valc_decoded_info(
    decoded: *const ValcDecoded,
    index: usize,
    out: *mut ValcFrameInfo,
) -> ValcStatus {
    guard(|| {
        let d = decoded.as_ref().ok_or_else(|| null("decoded"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let f = frame_at(d, index)?;
        *out = ValcFrameInfo {
            index: f.index as u32,
            is_key: u8::from(f.kind == FrameKind::Key),
            delta_realized: f.delta_realized,
        };
        Ok(())
    })
}

/// Copies frame `index`, rounded to 8 bits, into `dst` with row stride
/// `stride`. `dst_len` must cover `stride * (height - 1) + width` bytes.
#[no_mangle]
pub unsafe extern "C" fn valc_decoded_copy(
    decoded: *const ValcDecoded,
    index: usize,
    dst: *mut u8,
    dst_len: usize,
    stride: u32,
) -> ValcStatus {
    guard(|| {
        let d = decoded.as_ref().ok_or_else(|| null("decoded"))?;
        if dst.is_null() {
            return Err(null("dst"));
        }
        let f = frame_at(d, index)?;
        let (w, h, s) = (d.width, d.height, stride as usize);
        if s < w || dst_len < s * (h - 1) + w {
            return Err((
                ValcStatus::InvalidArgument,
                format!("destination of {dst_len} bytes with stride {s} cannot hold {w}x{h}"),
            ));
        }
        let out = slice::from_raw_parts_mut(dst, dst_len);
        let px = f.pixels.to_u8();
        for r in 0..h {
            out[r * s..r * s + w].copy_from_slice(&px[r * w..(r + 1) * w]);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn valc_decoded_free(decoded: *mut ValcDecoded) {
    if !decoded.is_null() {
        drop(Box::from_raw(decoded));
    }
}

/// PSNR in dB between two tightly packed 8-bit rasters; `+inf` when equal.
#[no_mangle]
pub unsafe extern "C" fn valc_psnr(
    reference: *const u8,
    test: *const u8,
    width: u32,
    height: u32,
    out: *mut f64,
) -> ValcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = frame_from_raw(reference, width, height, width)?;
        let b = frame_from_raw(test, width, height, width)?;
        *out = lift(psnr(&a, &b))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn valc_ms_ssim(
    reference: *const u8,
    test: *const u8,
    width: u32,
    height: u32,
    out: *mut f64,
) -> ValcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let a = frame_from_raw(reference, width, height, width)?;
        let b = frame_from_raw(test, width, height, width)?;
        *out = lift(ms_ssim(&a, &b))?;
        Ok(())
    })
}
