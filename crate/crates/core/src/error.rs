use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {what} ({expected_w}x{expected_h} vs {got_w}x{got_h})")]
    DimensionMismatch {
        what: &'static str,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid gaussian {index}: {reason}")]
    InvalidGaussian { index: usize, reason: &'static str },
    #[error("reference view {id} out of range for {count} views")]
    ReferenceOutOfRange { id: usize, count: usize },
    #[error("singular depth fit: {0}")]
    SingularFit(&'static str),
    #[error("empty mask")]
    EmptyMask,
    #[error("empty pixel set: {0}")]
    EmptyRegion(&'static str),
    #[error("image {width}x{height} too small: {reason}")]
    TooSmall { width: usize, height: usize, reason: &'static str },
    #[error("poisson region touches the image border at ({x}, {y})")]
    RegionTouchesBorder { x: usize, y: usize },
    #[error("poisson solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },
    #[error("invalid synthetic scene: {0}")]
    Synth(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn check_dims(what: &'static str, expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected_w: expected.0,
            expected_h: expected.1,
            got_w: got.0,
            got_h: got.1,
        });
    }
    Ok(())
}
