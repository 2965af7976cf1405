#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN.

pub mod error;
pub mod functionals;
pub mod heat;
pub mod timecurve;
pub mod weights;

pub use error::{Error, Result};
pub use timecurve::{TimeCurve, TimeGrid};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
