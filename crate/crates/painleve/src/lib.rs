//! Higher-order Painleve systems with coupled P_IV, P_V and P_VI
//! Hamiltonians, their Lax pairs in `sl_N[z, 1/z]` and the affine Weyl
//! group action.

pub mod error;
pub mod flow;
pub mod laxpair;
pub mod loopalg;
pub mod psys;
pub mod sample;
pub mod scalar;
pub mod weyl;

pub use error::{PainleveError, Result};
