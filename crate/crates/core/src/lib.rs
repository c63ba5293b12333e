//! Parameter-efficient masking networks.
//!
//! A network's weights are fixed and generated from a small random prototype
//! (a whole layer, the largest layer, or a short vector). Training learns only
//! a binary mask per layer. A model is then fully described by a seed or a
//! prototype vector plus one bit per weight, which the [`container`] module
//! serializes.

pub mod container;
pub mod data;
pub mod error;
pub mod gradcore;
pub mod protogen;
pub mod select;
pub mod tensor;

pub use error::{ContainerError, DataError, NetError, ProtoError, SelectError, ShapeError};
pub use tensor::{Scalar, Tensor};
