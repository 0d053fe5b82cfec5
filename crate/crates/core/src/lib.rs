//! Block compressive-sensing video codec with adaptive partial-DCT
//! measurement allocation and decoder-side transform-domain DPCM.
//!
//! Frames are split into `B x B` blocks and each block is sensed by keeping a
//! subset of its orthonormal 2-D DCT coefficients. Key frames open every GOP
//! at a high measurement ratio; the cheaper non-key frames are recovered by
//! mixing their own low-pass coefficients with those of a reference
//! interpolated from the surrounding key frames.
//!
//! ```
//! use valc::{codec, frame::Frame, sensing::Allocation, vfi::LinearInterpolator};
//!
//! let frames: Vec<Frame> = (0..5)
//!     .map(|k| Frame::from_fn(64, 48, |r, c| ((r + c + 2 * k) % 64) as f64 * 3.0))
//!     .collect();
//! let cfg = codec::GopConfig::from_average(4, 16, 0.5, 0.175, Allocation::Thi).unwrap();
//! let stream = codec::encode_sequence(&frames, &cfg).unwrap();
//! let decoded = codec::decode_sequence(&stream, &LinearInterpolator, &Default::default()).unwrap();
//! assert_eq!(decoded.len(), 5);
//! ```

pub mod cli;
pub mod codec;
pub mod error;
pub mod frame;
pub mod ida;
pub mod io;
pub mod metrics;
pub mod sensing;
pub mod transform;
pub mod vfi;

pub use codec::{
    decode_sequence, encode_sequence, rate_split, DecodeOptions, DecodedFrame, GopConfig,
    MixingMask, Reconstruction,
};
pub use error::{Error, Result};
pub use frame::Frame;
pub use io::bitstream::{read_stream, write_stream, EncodedStream};
pub use sensing::{Allocation, FrameKind};
