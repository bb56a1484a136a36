//! A numerical laboratory for space-time periodic homogenization of
//! parabolic operators `∂_t − div(A(x/ε, t/ε^k)∇)`.

// index loops read closer to the stencils; `!(x > 0.0)` also rejects NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod correctors;
pub mod effective;
pub mod error;
pub mod expansion;
pub mod fit;
pub mod ivp;
pub mod linalg;
pub mod mesh;
pub mod rates;
pub mod smoothing;
pub mod torus;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    mod coefficients {}
    #[doc = include_str!("../../../book/src/correctors.md")]
    mod correctors {}
    #[doc = include_str!("../../../book/src/dual.md")]
    mod dual {}
    #[doc = include_str!("../../../book/src/ivp.md")]
    mod ivp {}
    #[doc = include_str!("../../../book/src/smoothing.md")]
    mod smoothing {}
    #[doc = include_str!("../../../book/src/rates.md")]
    mod rates {}
}
