pub mod config;
pub mod error;
pub mod eval;
pub mod fit;
pub mod geom;
pub mod io;
pub mod loss;
pub mod post;
pub mod repr;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../README.md")]
    pub mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/representation.md")]
    pub mod representation {}
    #[doc = include_str!("../../../book/src/losses.md")]
    pub mod losses {}
    #[doc = include_str!("../../../book/src/post_processing.md")]
    pub mod post_processing {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/data.md")]
    pub mod data {}
}
