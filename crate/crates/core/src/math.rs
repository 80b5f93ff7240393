//! Float math that resolves to `std` intrinsics when available and to `libm`
//! under `no_std`. Modules needing transcendentals on a `no_std` build import
//! [`Libm`]; with `std` enabled the inherent methods win and the trait is
//! never consulted.

/// `no_std` stand-ins for the `std` float methods used in this crate.
#[cfg(not(feature = "std"))]
pub(crate) trait Libm {
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn ln(self) -> Self;
    fn floor(self) -> Self;
    fn round(self) -> Self;
    fn hypot(self, other: Self) -> Self;
}

#[cfg(not(feature = "std"))]
impl Libm for f64 {
    fn sqrt(self) -> f64 {
        libm::sqrt(self)
    }
    fn sin(self) -> f64 {
        libm::sin(self)
    }
    fn cos(self) -> f64 {
        libm::cos(self)
    }
    fn tan(self) -> f64 {
        libm::tan(self)
    }
    fn ln(self) -> f64 {
        libm::log(self)
    }
    fn floor(self) -> f64 {
        libm::floor(self)
    }
    fn round(self) -> f64 {
        libm::round(self)
    }
    fn hypot(self, other: f64) -> f64 {
        libm::hypot(self, other)
    }
}

#[cfg(not(feature = "std"))]
impl Libm for f32 {
    fn sqrt(self) -> f32 {
        libm::sqrtf(self)
    }
    fn sin(self) -> f32 {
        libm::sinf(self)
    }
    fn cos(self) -> f32 {
        libm::cosf(self)
    }
    fn tan(self) -> f32 {
        libm::tanf(self)
    }
    fn ln(self) -> f32 {
        libm::logf(self)
    }
    fn floor(self) -> f32 {
        libm::floorf(self)
    }
    fn round(self) -> f32 {
        libm::roundf(self)
    }
    fn hypot(self, other: f32) -> f32 {
        libm::hypotf(self, other)
    }
}

/// Gauss error function (not available on `f64`; via `libm`).
pub(crate) fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Standard normal CDF.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / core::f64::consts::SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-9);
        assert!((normal_cdf(-1.959963984540054) - 0.025).abs() < 1e-9);
    }
}
