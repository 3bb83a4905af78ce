//! File formats of the `hetacc` driver, shared with its tests.

pub mod output;
