//! Small differentiable function-approximation stack: dense networks,
//! stochastic policy heads, Adam, and finite-difference gradient checks.
//!
//! Everything is generic over [`Real`] so that production code runs in `f32`
//! while gradient checks instantiate the very same code paths in `f64`.

mod adam;
mod gradcheck;
mod network;
mod policy;

pub use adam::Adam;
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use network::{Activation, Network, Tape};
pub use policy::{ActionBatch, CategoricalPolicy, GaussianPolicy, PolicyGrad, PolicyHead, PolicyOptimizer};

use ndarray::NdFloat;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Log-std clamp applied after every gaussian policy update.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Floating point type usable for parameters.
pub trait Real: NdFloat + Serialize + DeserializeOwned + Send + Sync + Default {
    fn c(x: f64) -> Self;
    fn f64(self) -> f64;
    /// Hidden-layer tanh. `f32` uses a rational approximation (a few ulp)
    /// that vectorizes; `f64` is exact.
    fn act_tanh(self) -> Self;
}

impl Real for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn act_tanh(self) -> Self {
        tanh_f32(self)
    }
}

impl Real for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    #[inline]
    fn act_tanh(self) -> Self {
        self.tanh()
    }
}

/// Odd rational minimax fit of tanh on [-7.9, 7.9]; saturated outside.
#[inline]
fn tanh_f32(x: f32) -> f32 {
    const CLAMP: f32 = 7.905_311;
    const A: [f32; 7] = [
        4.893_524_6e-3,
        6.372_619_3e-4,
        1.485_722_4e-5,
        5.122_297e-8,
        -8.604_672e-11,
        2.000_188e-13,
        -2.760_768_5e-16,
    ];
    const B: [f32; 4] = [4.893_525e-3, 2.268_434_6e-3, 1.185_347_1e-4, 1.198_258_4e-6];
    let x = x.clamp(-CLAMP, CLAMP);
    let x2 = x * x;
    let mut p = A[6];
    for &a in A[..6].iter().rev() {
        p = p * x2 + a;
    }
    let mut q = B[3];
    for &b in B[..3].iter().rev() {
        q = q * x2 + b;
    }
    x * p / q
}

#[cfg(test)]
mod tests {
    use super::tanh_f32;

    #[test]
    fn fast_tanh_accuracy() {
        let mut worst = 0.0f64;
        for i in -200_000..=200_000 {
            let x = i as f32 * 1e-4;
            let err = (tanh_f32(x) as f64 - (x as f64).tanh()).abs();
            worst = worst.max(err);
        }
        assert!(worst < 5e-7, "max abs error {worst}");
        assert_eq!(tanh_f32(0.0), 0.0);
        assert_eq!(tanh_f32(100.0), tanh_f32(-100.0).abs());
        assert!(tanh_f32(f32::MAX) <= 1.0);
    }
}
