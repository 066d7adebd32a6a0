use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument is outside the domain of the operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A scale-shift product whose shift is not an integer vector.
    #[error("shift {z:?} is not divisible by 2^{k}; the product has no integer representative")]
    NonRepresentable { k: u32, z: [i64; 2] },

    /// A dilation that would require a negative scale (an upscaling).
    #[error("dilation is not a contraction: {0}")]
    InvalidDilation(String),

    /// Tensor shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A layer received a different number of channels than it declares.
    #[error("layer {layer}: expected {expected} input channels, found {found}")]
    ChannelMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },

    /// A table violates the axioms of a semigroup or of a left action.
    #[error("invalid table: {0}")]
    InvalidTable(String),

    /// The reference activation of an equivariance measurement is (numerically) zero.
    #[error("reference activation norm {norm:e} at ell={ell}, k={k} is too small for a relative error")]
    DegenerateActivation { ell: usize, k: usize, norm: f64 },

    /// Malformed file contents.
    #[error("{0}")]
    Format(String),

    /// Malformed network description.
    #[error("network spec line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
