//! Learning approximately revenue-optimal multi-item auctions from samples or
//! from approximate distributions, with brute-force oracles for desk-scale checks.

pub mod converge;
pub mod curve;
pub mod dist;
pub mod error;
pub mod exante;
pub mod io;
pub mod learn;
pub mod lp;
pub mod mech;
pub mod oracle;
pub mod valuation;

pub use error::{Error, Result};
