//! Deterministic neural-network core: tensors, a reverse-mode tape, layers,
//! two attention variants at a matched parameter budget, small task models,
//! and a training loop.
//!
//! Everything is reproducible to the bit: random draws come from a pinned
//! generator, reductions accumulate in a fixed order, and the rayon-backed
//! kernels (feature `parallel`, on by default) share their inner loops with
//! the sequential fallback so results do not depend on thread count.

pub mod attention;
pub mod data;
pub mod dtype;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod verify;

pub use dtype::{Dtype, Element};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tape::{Activation, Gradients, Tape, Var, MASK_SENTINEL};
pub use tensor::Tensor;
