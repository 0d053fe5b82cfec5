//! Files, bitstreams and external processes.

pub mod bitstream;
pub mod pgm;
pub mod plugin;
pub mod yuv;
