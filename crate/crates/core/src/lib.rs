pub mod baseline;
pub mod bits;
pub mod blocking;
pub mod bloom;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod memory;
pub mod protocol;
pub mod record;
pub mod report;
pub mod securesum;

pub use error::{Error, Result};
