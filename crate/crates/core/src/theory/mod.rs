//! Early-time predictions of the centered alignment.
//!
//! The quadratic theory net draws first-layer entries with variance `1/k`
//! (width), unlike training nets which scale by fan-in; the two agree only
//! for square layers.

mod complex;
mod free;
mod grams;

pub use complex::{random_unitary, CMatrix};
pub use free::*;
pub use grams::*;
