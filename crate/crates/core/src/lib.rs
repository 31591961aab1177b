// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod activation_store;
pub mod decomposition;
pub mod error;
pub mod pipeline;
pub mod probe;
pub mod reference;
pub mod seed;
pub mod steering;
pub mod synthetic;
pub mod taxonomy;
pub mod tom_eval;
pub mod toy_lm;

pub use error::{Error, Result};
