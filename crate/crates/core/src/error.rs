use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "resolution mismatch: expected {expected_width}x{expected_height}, got {width}x{height}"
    )]
    ResolutionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },

    #[error("non-finite intensity at frame {frame}, pixel {pixel}")]
    NonFiniteIntensity { frame: usize, pixel: usize },

    #[error("negative intensity {value} at frame {frame}, pixel {pixel}")]
    NegativeIntensity {
        frame: usize,
        pixel: usize,
        value: f64,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("window [{k}-{delta_t}, {k}+{delta_t}] outside stream frames [{first}, {last}]")]
    WindowOutOfBounds {
        k: i64,
        delta_t: usize,
        first: i64,
        last: i64,
    },

    #[error("frame {k} outside stream frames [{first}, {last}]")]
    FrameOutOfBounds { k: i64, first: i64, last: i64 },

    #[error("ISI map has no valid pixel")]
    NoValidPixels,

    #[error("gain must be positive and finite, got {0}")]
    InvalidGain(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(transparent)]
    Codec(#[from] CodecError),

    #[error(transparent)]
    Pgm(#[from] PgmError),

    #[error("image decode failed: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures of the `.spk` decoder. Each malformed input maps to exactly one
/// variant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("bad magic {0:?}, expected \"SPK1\"")]
    BadMagic([u8; 4]),

    #[error("header truncated: {0} bytes, need 32")]
    TruncatedHeader(usize),

    #[error("payload truncated: header describes {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("trailing data: header describes {expected} payload bytes, found {actual}")]
    TrailingBytes { expected: u64, actual: u64 },

    #[error("dimensions {width}x{height}x{frames} overflow addressable size")]
    DimensionOverflow {
        width: u32,
        height: u32,
        frames: u32,
    },

    #[error("invalid header field: {0}")]
    InvalidHeader(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgmError {
    #[error("not a binary graymap (P5)")]
    BadMagic,

    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),

    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),

    #[error("pixel data truncated: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
}
