use thiserror::Error;

/// Errors raised by the pricing engine and its oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("contour violation: Im(omega) = {omega_i} is outside the admissible strip {strip}")]
    ContourViolation { omega_i: f64, strip: &'static str },

    #[error("pole hit: 1 + 4 omega^2 vanishes at omega = {re} + {im}i")]
    PoleHit { re: f64, im: f64 },

    #[error(
        "Laplace argument outside the admissible domain: Re(lambda) = {re} must exceed {bound}"
    )]
    DomainViolation { re: f64, bound: f64 },

    #[error("quadrature did not converge: {0}")]
    NonConvergent(String),

    #[error("price {price} is outside the no-arbitrage band ({lower}, {upper})")]
    OutOfBand { price: f64, lower: f64, upper: f64 },

    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    #[error("time step too coarse: dt_factor = {0} exceeds 1/50")]
    StepTooCoarse(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(
            name,
            format!("must be finite and > 0, got {value}"),
        ))
    }
}

pub(crate) fn require_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite, got {value}")))
    }
}
