//! Trainable threshold/sigmoid activation functions (ReSKU, RePSU and
//! relatives) with a from-scratch f64 CNN stack, finite-difference gradient
//! checking and a seeded Monte Carlo harness.
//!
//! The guide in `book/` walks through each module; its code blocks run as
//! doctests of this crate.

pub mod activations;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod identities;
pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/activations.md")]
    mod activations {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/gradcheck.md")]
    mod gradcheck {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    mod sweeps {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
