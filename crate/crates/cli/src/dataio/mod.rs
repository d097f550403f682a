//! File formats and persistence: IDX parsing, MNIST assembly, and result
//! tables.

pub mod idx;
pub mod mnist;
pub mod results;
