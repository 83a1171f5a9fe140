// SPDX-License-Identifier: Apache-2.0

//! Table union search over contrastively trained column embeddings.
//!
//! Pipeline: [`corpus`] ingestion, [`encoder`] base embeddings, a trainable
//! [`projection`] head optimized by [`contrast`], [`lsh`] indexes plus
//! [`syntactic`] measures, and top-k [`search`]. [`model`] persists models
//! and indexes; [`bench`] generates benchmarks and evaluates them.

pub mod bench;
pub mod contrast;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod lsh;
pub mod model;
pub mod projection;
pub mod search;
pub mod syntactic;
pub mod util;

pub use error::{Error, ErrorCategory, Result};
