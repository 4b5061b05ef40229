//! Sequential recommendation with interchangeable attention mechanisms.
//!
//! A bidirectional transformer encoder is trained on masked item prediction
//! over user interaction sequences and evaluated by leave-one-out ranking.
//! The attention layer is one of softmax dot-product, ELU+1 linear, or a
//! fused L2-normalized cosine kernel whose working memory does not grow
//! with sequence length.
//!
//! Everything is `f64` and hand-differentiated; there is no autodiff or BLAS
//! dependency. With the `parallel` feature (default) sequences, heads and
//! evaluation users fan out over rayon with order-preserving reductions, so
//! results are bit-identical for any thread count.

pub mod attention;
pub mod bench;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod parallel;
pub mod report;
pub mod training;

pub use error::{Error, Result};

#[cfg(feature = "track-alloc")]
#[global_allocator]
static GLOBAL: bench::alloc::TrackingAllocator = bench::alloc::TrackingAllocator;
