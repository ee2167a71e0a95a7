pub mod benchmarking;
pub mod calibration;
pub mod circuit;
pub mod effective;
pub mod error;
pub mod noise;
pub mod numerics;
pub mod propagation;
pub mod pulse;
pub mod transfer;
pub mod units;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/circuit.md")]
    mod circuit {}
    #[doc = include_str!("../../../book/src/driving.md")]
    mod driving {}
    #[doc = include_str!("../../../book/src/line_and_noise.md")]
    mod line_and_noise {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
}
