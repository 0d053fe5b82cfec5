//! Luminance extraction from raw planar video and YUV4MPEG2 files.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoFormat {
    /// Raw planar 8-bit 4:2:0; chroma planes are skipped.
    Yuv420,
    /// Raw 8-bit luminance only.
    Gray,
    /// YUV4MPEG2 stream; geometry comes from its header.
    Y4m,
}

impl FromStr for VideoFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yuv420" | "yuv" | "i420" => Ok(VideoFormat::Yuv420),
            "gray" | "y" => Ok(VideoFormat::Gray),
            "y4m" => Ok(VideoFormat::Y4m),
            other => Err(Error::InvalidArgument(format!("unknown video format {other:?}"))),
        }
    }
}

impl VideoFormat {
    /// Guesses from the file extension, defaulting to raw 4:2:0.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("y4m") => VideoFormat::Y4m,
            Some("gray") | Some("y") => VideoFormat::Gray,
            _ => VideoFormat::Yuv420,
        }
    }
}

fn chroma_420(width: usize, height: usize) -> usize {
    2 * width.div_ceil(2) * height.div_ceil(2)
}

/// Splits raw planar bytes into luminance frames.
pub fn parse_raw(
    bytes: &[u8],
    width: usize,
    height: usize,
    format: VideoFormat,
    max_frames: Option<usize>,
) -> Result<Vec<Frame>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("bad geometry {width}x{height}")));
    }
    let luma = width * height;
    let frame_len = match format {
        VideoFormat::Yuv420 => luma + chroma_420(width, height),
        VideoFormat::Gray => luma,
        VideoFormat::Y4m => return parse_y4m(bytes, max_frames),
    };
    if bytes.len() % frame_len != 0 {
        return Err(Error::Truncated {
            section: format!(
                "{} bytes is not a whole number of {width}x{height} frames ({frame_len} bytes each)",
                bytes.len()
            ),
        });
    }
    let count = (bytes.len() / frame_len).min(max_frames.unwrap_or(usize::MAX));
    (0..count)
        .map(|i| Frame::from_u8(width, height, &bytes[i * frame_len..i * frame_len + luma]))
        .collect()
}

pub fn parse_y4m(bytes: &[u8], max_frames: Option<usize>) -> Result<Vec<Frame>> {
    let line_end = |from: usize| bytes[from..].iter().position(|&b| b == b'\n').map(|p| from + p);
    let header_end = line_end(0).ok_or_else(|| Error::Truncated {
        section: "y4m header".into(),
    })?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Malformed("y4m header is not ASCII".into()))?;
    let mut tokens = header.split_ascii_whitespace();
    if tokens.next() != Some("YUV4MPEG2") {
        return Err(Error::Malformed("missing YUV4MPEG2 signature".into()));
    }
    let (mut width, mut height, mut chroma) = (0usize, 0usize, "420");
    for t in tokens {
        let (tag, val) = t.split_at(1);
        match tag {
            "W" => width = val.parse().map_err(|_| Error::Malformed(format!("bad width {val}")))?,
            "H" => height = val.parse().map_err(|_| Error::Malformed(format!("bad height {val}")))?,
            "C" => chroma = val,
            _ => {}
        }
    }
    if width == 0 || height == 0 {
        return Err(Error::Malformed("y4m header lacks geometry".into()));
    }
    let luma = width * height;
    let extra = if chroma.starts_with("420") {
        chroma_420(width, height)
    } else if chroma.starts_with("422") {
        2 * width.div_ceil(2) * height
    } else if chroma.starts_with("444") {
        2 * luma
    } else if chroma.starts_with("mono") {
        0
    } else {
        return Err(Error::Malformed(format!("unsupported y4m chroma {chroma}")));
    };
    let limit = max_frames.unwrap_or(usize::MAX);
    let mut frames = Vec::new();
    let mut pos = header_end + 1;
    while pos < bytes.len() && frames.len() < limit {
        let idx = frames.len();
        let end = line_end(pos).ok_or_else(|| Error::Truncated {
            section: format!("y4m frame {idx} header"),
        })?;
        if !bytes[pos..end].starts_with(b"FRAME") {
            return Err(Error::Malformed(format!("y4m frame {idx} lacks FRAME marker")));
        }
        pos = end + 1;
        let data = bytes.get(pos..pos + luma + extra).ok_or_else(|| Error::Truncated {
            section: format!("y4m frame {idx}"),
        })?;
        frames.push(Frame::from_u8(width, height, &data[..luma])?);
        pos += luma + extra;
    }
    Ok(frames)
}

/// Reads up to `max_frames` luminance frames. `width` and `height` are
/// required for raw formats and ignored for Y4M.
pub fn read_y_sequence(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    format: VideoFormat,
    max_frames: Option<usize>,
) -> Result<Vec<Frame>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    parse_raw(&bytes, width, height, format, max_frames)
}

/// Serializes frames as raw 4:2:0 with neutral (128) chroma, or as raw
/// luminance for [`VideoFormat::Gray`], or as a mono Y4M stream.
pub fn encode_sequence_bytes(frames: &[Frame], format: VideoFormat) -> Result<Vec<u8>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = (first.width(), first.height());
    let mut out = Vec::new();
    if format == VideoFormat::Y4m {
        out.extend(format!("YUV4MPEG2 W{w} H{h} F30:1 Ip A1:1 Cmono\n").into_bytes());
    }
    for f in frames {
        first.check_geometry(f)?;
        if format == VideoFormat::Y4m {
            out.extend(b"FRAME\n");
        }
        out.extend(f.to_u8());
        if format == VideoFormat::Yuv420 {
            out.extend(std::iter::repeat(128u8).take(chroma_420(w, h)));
        }
    }
    Ok(out)
}

pub fn write_y_sequence(path: impl AsRef<Path>, frames: &[Frame], format: VideoFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_sequence_bytes(frames, format)?).map_err(|e| Error::io(path, e))
}
