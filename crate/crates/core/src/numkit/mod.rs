//! Dense numeric kernels and reproducible randomness.

pub mod binio;
mod rng;
mod tensor;

pub use binio::{ByteReader, ByteWriter};
pub use rng::{label_hash, sample_normal, sample_uniform, RngKey, RngStream};
pub use tensor::{
    affine, global_norm, global_norm_all, matmul, matmul_into, sigmoid, softmax_in_place, Tensor,
};
