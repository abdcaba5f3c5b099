//! Knowledge distillation for small autoregressive language models with
//! sequence-, token- and span-level semantic revision.
//!
//! The crate is organised bottom-up: [`lm`] holds the transformer and
//! decoding, [`divergences`] the token and span objectives, [`scrg`] the
//! corrected-sequence generator and replay buffer, [`trainer`] the training
//! loops, and [`eval`] the metrics and synthetic corpus.

/// Serializes a type through its `Display` / `FromStr` spelling.
macro_rules! serde_via_str {
    ($t:ty) => {
        impl serde::Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> serde::Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

pub mod checkpoint;
pub mod data;
pub mod divergences;
pub mod error;
pub mod eval;
pub mod lm;
pub mod params;
pub mod prob;
pub mod scrg;
pub mod spans;
pub mod trainer;

pub use error::{Error, Result};
pub use prob::ProbVector;
