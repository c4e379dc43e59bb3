use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Hd3Error {
    #[error("resolution mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    ResolutionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("downsample factor {0} is not a power of two")]
    BadFactor(usize),

    #[error("factor {factor} does not divide {width}x{height}")]
    NotDivisible {
        factor: usize,
        width: usize,
        height: usize,
    },

    #[error("image {width}x{height} too small for {levels} pyramid levels (coarsest must be at least {min}x{min})")]
    ImageTooSmall {
        width: usize,
        height: usize,
        levels: usize,
        min: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("support mismatch between densities")]
    SupportMismatch,

    #[error("full-density enumeration needs {needed} path expansions at pixel ({x}, {y}), budget is {budget}")]
    BudgetExceeded {
        x: usize,
        y: usize,
        needed: usize,
        budget: usize,
    },

    #[error("evaluation region is empty")]
    EmptyRegion,

    #[error("format error: {0}")]
    Format(String),

    #[error("value {value} cannot be encoded: {reason}")]
    Unrepresentable { value: f64, reason: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("png decoding failed: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encoding failed: {0}")]
    PngEncode(#[from] png::EncodingError),
}

pub type Result<T> = std::result::Result<T, Hd3Error>;

pub(crate) fn check_same_size(
    expected: (usize, usize),
    got: (usize, usize),
) -> Result<()> {
    if expected != got {
        return Err(Hd3Error::ResolutionMismatch {
            expected_w: expected.0,
            expected_h: expected.1,
            got_w: got.0,
            got_h: got.1,
        });
    }
    Ok(())
}
