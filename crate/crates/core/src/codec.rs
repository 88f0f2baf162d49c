//! Bit-exact file formats.
//!
//! # `.spk` spike stream
//!
//! A 32-byte little-endian header followed by the packed frames:
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 4    | magic `SPK1`                            |
//! | 4      | 4    | width, `u32`                            |
//! | 8      | 4    | height, `u32`                           |
//! | 12     | 4    | frame count, `u32`                      |
//! | 16     | 4    | sample period in nanoseconds, `u32`     |
//! | 20     | 4    | threshold `φ × 1000`, `u32`             |
//! | 24     | 8    | absolute index of the first frame, `i64`|
//!
//! Frames follow in temporal order. Each frame is stored row-major with 8
//! pixels per byte, least-significant bit = leftmost pixel, and every row padded
//! to a byte boundary, so the payload is exactly
//! `frame_count · height · ceil(width / 8)` bytes. Padding bits are written as
//! zero and ignored on read. Noise parameters are not stored; decoded streams
//! carry [`NoiseModel::off`](crate::NoiseModel::off).
//!
//! # `.pgm` images
//!
//! Binary portable graymap: `P5\n<width> <height>\n255\n` followed by
//! `width · height` bytes. Only maxval 255 is accepted.

use crate::error::{CodecError, PgmError};
use crate::gray::GrayImage;
use crate::sensor::SensorConfig;
use crate::stream::{row_bytes, SpikeFrame, SpikeStream};

pub const SPK_MAGIC: [u8; 4] = *b"SPK1";
pub const SPK_HEADER_LEN: usize = 32;

/// Decoded `.spk` header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpkFileHeader {
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub sample_period_ns: u32,
    pub threshold_milli: u32,
    pub start_index: i64,
}

impl SpkFileHeader {
    pub fn for_stream(stream: &SpikeStream) -> Self {
        Self {
            width: to_u32(stream.width() as f64),
            height: to_u32(stream.height() as f64),
            frame_count: to_u32(stream.len() as f64),
            sample_period_ns: to_u32((stream.config.sample_period * 1e9).round()),
            threshold_milli: to_u32((stream.config.threshold * 1e3).round()),
            start_index: stream.start_index,
        }
    }

    pub fn to_bytes(&self) -> [u8; SPK_HEADER_LEN] {
        let mut out = [0u8; SPK_HEADER_LEN];
        out[0..4].copy_from_slice(&SPK_MAGIC);
        out[4..8].copy_from_slice(&self.width.to_le_bytes());
        out[8..12].copy_from_slice(&self.height.to_le_bytes());
        out[12..16].copy_from_slice(&self.frame_count.to_le_bytes());
        out[16..20].copy_from_slice(&self.sample_period_ns.to_le_bytes());
        out[20..24].copy_from_slice(&self.threshold_milli.to_le_bytes());
        out[24..32].copy_from_slice(&self.start_index.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() >= 4 && bytes[0..4] != SPK_MAGIC {
            return Err(CodecError::BadMagic(bytes[0..4].try_into().unwrap()));
        }
        if bytes.len() < SPK_HEADER_LEN {
            return Err(CodecError::TruncatedHeader(bytes.len()));
        }
        let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        Ok(Self {
            width: u(4),
            height: u(8),
            frame_count: u(12),
            sample_period_ns: u(16),
            threshold_milli: u(20),
            start_index: i64::from_le_bytes(bytes[24..32].try_into().unwrap()),
        })
    }

    /// Payload length implied by the dimensions, if it fits in memory.
    pub fn payload_len(&self) -> Option<usize> {
        let rb = (self.width as usize).div_ceil(8);
        rb.checked_mul(self.height as usize)?
            .checked_mul(self.frame_count as usize)
    }
}

fn to_u32(v: f64) -> u32 {
    v.clamp(0.0, u32::MAX as f64) as u32
}

pub fn encode_stream(stream: &SpikeStream) -> Vec<u8> {
    let header = SpkFileHeader::for_stream(stream);
    let frame_len = row_bytes(stream.width()) * stream.height();
    let mut out = Vec::with_capacity(SPK_HEADER_LEN + frame_len * stream.len());
    out.extend_from_slice(&header.to_bytes());
    for frame in stream.frames() {
        out.extend_from_slice(frame.packed());
    }
    out
}

/// Total over arbitrary input: malformed bytes produce a [`CodecError`].
pub fn decode_stream(bytes: &[u8]) -> Result<SpikeStream, CodecError> {
    let header = SpkFileHeader::parse(bytes)?;
    if header.width == 0 || header.height == 0 {
        return Err(CodecError::InvalidHeader("zero resolution"));
    }
    if header.sample_period_ns == 0 {
        return Err(CodecError::InvalidHeader("zero sample period"));
    }
    if header.threshold_milli == 0 {
        return Err(CodecError::InvalidHeader("zero threshold"));
    }
    let overflow = CodecError::DimensionOverflow {
        width: header.width,
        height: header.height,
        frames: header.frame_count,
    };
    let expected = header.payload_len().ok_or(overflow.clone())?;
    if header
        .start_index
        .checked_add(header.frame_count as i64)
        .is_none()
    {
        return Err(overflow);
    }
    let payload = &bytes[SPK_HEADER_LEN..];
    if payload.len() < expected {
        return Err(CodecError::Truncated {
            expected: expected as u64,
            actual: payload.len() as u64,
        });
    }
    if payload.len() > expected {
        return Err(CodecError::TrailingBytes {
            expected: expected as u64,
            actual: payload.len() as u64,
        });
    }

    let (w, h) = (header.width as usize, header.height as usize);
    let mut config = SensorConfig::new(w, h);
    config.threshold = header.threshold_milli as f64 / 1e3;
    config.sample_period = header.sample_period_ns as f64 / 1e9;
    let frame_len = row_bytes(w) * h;
    let frames = if frame_len == 0 {
        Vec::new()
    } else {
        payload
            .chunks_exact(frame_len)
            .map(|chunk| SpikeFrame::from_packed(w, h, chunk.to_vec()).expect("exact chunk"))
            .collect()
    };
    Ok(SpikeStream::new(config, header.start_index, frames).expect("frames sized from header"))
}

pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage, PgmError> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut pos = 2;
    let width = next_header_int(bytes, &mut pos)?;
    let height = next_header_int(bytes, &mut pos)?;
    let maxval = next_header_int(bytes, &mut pos)?;
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PgmError::MalformedHeader("missing whitespace after maxval")),
    }
    if maxval != 255 {
        return Err(PgmError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader("zero dimension"));
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .ok_or(PgmError::MalformedHeader("dimensions overflow"))?;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            actual: raster.len(),
        });
    }
    Ok(
        GrayImage::new(width as usize, height as usize, raster[..expected].to_vec())
            .expect("raster sized from header"),
    )
}

/// Parses one header integer, skipping whitespace and `#` comments.
fn next_header_int(bytes: &[u8], pos: &mut usize) -> Result<u32, PgmError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_digit() => break,
            Some(_) => return Err(PgmError::MalformedHeader("unexpected byte in header")),
            None => return Err(PgmError::MalformedHeader("header ends early")),
        }
    }
    let mut value: u32 = 0;
    while let Some(&b) = bytes.get(*pos) {
        if !b.is_ascii_digit() {
            break;
        }
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((b - b'0') as u32))
            .ok_or(PgmError::MalformedHeader("number too large"))?;
        *pos += 1;
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(width: usize, height: usize, frames: Vec<SpikeFrame>) -> SpikeStream {
        SpikeStream::new(SensorConfig::new(width, height), 0, frames).unwrap()
    }

    #[test]
    fn leftmost_pixel_is_lsb() {
        let f = SpikeFrame::from_fn(8, 1, |x, _| x == 0);
        let bytes = encode_stream(&stream(8, 1, vec![f]));
        assert_eq!(&bytes[SPK_HEADER_LEN..], &[0x01]);
    }

    #[test]
    fn rows_are_padded() {
        let f = SpikeFrame::from_fn(3, 2, |_, _| true);
        let bytes = encode_stream(&stream(3, 2, vec![f]));
        assert_eq!(&bytes[SPK_HEADER_LEN..], &[0x07, 0x07]);
    }

    #[test]
    fn empty_stream_is_header_only() {
        let bytes = encode_stream(&stream(5, 5, vec![]));
        assert_eq!(bytes.len(), SPK_HEADER_LEN);
        let h = SpkFileHeader::parse(&bytes).unwrap();
        assert_eq!(h.frame_count, 0);
        assert_eq!(decode_stream(&bytes).unwrap().len(), 0);
    }

    #[test]
    fn header_layout() {
        let mut cfg = SensorConfig::new(3, 2);
        cfg.threshold = 2.5;
        let s = SpikeStream::new(cfg, -7, vec![SpikeFrame::zeros(3, 2)]).unwrap();
        let b = encode_stream(&s);
        assert_eq!(&b[0..4], b"SPK1");
        assert_eq!(&b[4..8], &3u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &50_000u32.to_le_bytes());
        assert_eq!(&b[20..24], &2500u32.to_le_bytes());
        assert_eq!(&b[24..32], &(-7i64).to_le_bytes());
        assert_eq!(decode_stream(&b).unwrap(), s);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let s = stream(4, 4, vec![SpikeFrame::from_fn(4, 4, |x, y| x == y); 10]);
        let good = encode_stream(&s);

        let mut magic = good.clone();
        magic[3] = b'2';
        assert_eq!(decode_stream(&magic), Err(CodecError::BadMagic(*b"SPK2")));

        let mut nine = good.clone();
        nine.truncate(good.len() - 4);
        assert!(matches!(
            decode_stream(&nine),
            Err(CodecError::Truncated { .. })
        ));

        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(
            decode_stream(&extra),
            Err(CodecError::TrailingBytes { .. })
        ));

        assert_eq!(
            decode_stream(&good[..10]),
            Err(CodecError::TruncatedHeader(10))
        );

        let mut huge = SpkFileHeader::parse(&good).unwrap();
        huge.width = u32::MAX;
        huge.height = u32::MAX;
        huge.frame_count = u32::MAX;
        assert!(matches!(
            decode_stream(&huge.to_bytes()),
            Err(CodecError::DimensionOverflow { .. }) | Err(CodecError::Truncated { .. })
        ));

        let mut zero = SpkFileHeader::parse(&good).unwrap();
        zero.threshold_milli = 0;
        assert!(matches!(
            decode_stream(&zero.to_bytes()),
            Err(CodecError::InvalidHeader(_))
        ));
    }

    #[test]
    fn decode_masks_padding_bits() {
        let s = stream(3, 1, vec![SpikeFrame::from_fn(3, 1, |x, _| x == 1)]);
        let mut b = encode_stream(&s);
        b[SPK_HEADER_LEN] |= 0xF8;
        assert_eq!(decode_stream(&b).unwrap(), s);
    }

    #[test]
    fn pgm_bytes() {
        let img = GrayImage::new(2, 2, vec![0, 255, 128, 1]).unwrap();
        let b = write_pgm(&img);
        assert_eq!(b, b"P5\n2 2\n255\n\x00\xFF\x80\x01");
        assert_eq!(read_pgm(&b).unwrap(), img);
    }

    #[test]
    fn pgm_header_with_comments() {
        let b = b"P5 # made by hand\n# another\n 3\t1 255 \x01\x02\x03";
        assert_eq!(read_pgm(b).unwrap().pixels(), &[1, 2, 3]);
    }

    #[test]
    fn pgm_errors() {
        assert_eq!(
            read_pgm(b"P5\n1 1\n65535\n\x00\x00"),
            Err(PgmError::UnsupportedMaxval(65535))
        );
        assert_eq!(read_pgm(b"P2\n1 1\n255\n0"), Err(PgmError::BadMagic));
        assert!(matches!(
            read_pgm(b"P5\n2 2\n255\n\x00"),
            Err(PgmError::Truncated { .. })
        ));
        assert!(matches!(
            read_pgm(b"P5\n2 x\n255\n"),
            Err(PgmError::MalformedHeader(_))
        ));
        assert!(matches!(
            read_pgm(b"P5\n2"),
            Err(PgmError::MalformedHeader(_))
        ));
        assert!(matches!(
            read_pgm(b"P5\n0 2\n255\n"),
            Err(PgmError::MalformedHeader(_))
        ));
    }
}
