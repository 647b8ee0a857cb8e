//! Scalar math shims so the crate builds both with `std` and with `libm`.

#![allow(dead_code)]

#[cfg(feature = "std")]
mod imp {
    pub fn cos(x: f64) -> f64 {
        x.cos()
    }
    pub fn sin(x: f64) -> f64 {
        x.sin()
    }
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    pub fn powi(x: f64, n: i32) -> f64 {
        x.powi(n)
    }
    pub fn abs(x: f64) -> f64 {
        x.abs()
    }
    pub fn floor(x: f64) -> f64 {
        x.floor()
    }
    pub fn round(x: f64) -> f64 {
        x.round()
    }
    pub fn ceil(x: f64) -> f64 {
        x.ceil()
    }
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
mod imp {
    pub fn cos(x: f64) -> f64 {
        libm::cos(x)
    }
    pub fn sin(x: f64) -> f64 {
        libm::sin(x)
    }
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    pub fn powi(x: f64, n: i32) -> f64 {
        libm::pow(x, n as f64)
    }
    pub fn abs(x: f64) -> f64 {
        libm::fabs(x)
    }
    pub fn floor(x: f64) -> f64 {
        libm::floor(x)
    }
    pub fn round(x: f64) -> f64 {
        libm::round(x)
    }
    pub fn ceil(x: f64) -> f64 {
        libm::ceil(x)
    }
}

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("streamgp-core requires either the `std` or the `libm` feature");

pub use imp::*;
