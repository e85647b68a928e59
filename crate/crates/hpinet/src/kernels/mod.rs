//! Raw compute kernels over flat slices.
//!
//! Each kernel fills a caller-provided output buffer and parallelizes in
//! gather style via [`crate::parallel::for_each_chunk`], so parallel and
//! sequential execution produce bit-identical results. The tape wraps these
//! with shape checking and backward rules.

pub mod conv;
pub mod dense;
pub mod layout;
pub mod norm;
