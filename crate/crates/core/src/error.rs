use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the registration pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two buffers that must share a size do not.
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A value violates a documented precondition.
    InvalidArgument(&'static str),
    /// Pixel data outside `[0, 1]` or with the wrong length.
    InvalidImage(&'static str),
    /// Pixel set too small or collinear for an ellipse fit.
    DegenerateEllipse,
    /// No component passed the carotid candidate filter.
    CcaNotFound,
    /// No component passed the IJV selection filters.
    IjvNotFound,
    /// Belt region rasterized to zero pixels.
    EmptyBelt,
    /// Cumulative explained variance is undefined for zero total variance.
    ZeroVariance,
    /// Vessel placement failed within the attempt budget.
    PlacementFailed { attempts: usize },
    /// Network configuration is unusable.
    InvalidNetConfig(&'static str),
    /// `backward` was called before `forward`.
    MissingForwardCache,
    /// A loss term became non-finite during training.
    Diverged { epoch: usize, term: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => write!(
                f,
                "dimension mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidImage(msg) => write!(f, "invalid image: {msg}"),
            Error::DegenerateEllipse => f.write_str("degenerate pixel set for ellipse fit"),
            Error::CcaNotFound => f.write_str("CCA not found: no component in the admissible area range"),
            Error::IjvNotFound => f.write_str("IJV not found"),
            Error::EmptyBelt => f.write_str("belt mask is empty"),
            Error::ZeroVariance => f.write_str("total variance is zero"),
            Error::PlacementFailed { attempts } => {
                write!(f, "could not place vessels without overlap after {attempts} attempts")
            }
            Error::InvalidNetConfig(msg) => write!(f, "invalid network config: {msg}"),
            Error::MissingForwardCache => f.write_str("backward called without a cached forward pass"),
            Error::Diverged { epoch, term } => {
                write!(f, "training diverged at epoch {epoch}: {term} is not finite")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
