//! Linear stability of a phototactic algal suspension lit by an oblique
//! collimated beam, in a layer that absorbs and scatters light.
//!
//! The pipeline runs from dimensionless parameters to the self-consistent
//! basic state (light field plus cell concentration), then to the perturbed
//! radiation operators and the generalized eigenproblem whose leading
//! eigenvalue decides stability.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basic_state;
pub mod config;
pub mod error;
pub mod grid;
pub mod oracles;
pub mod params;
pub mod perturbed;
pub mod radiation;
pub mod special;
pub mod stability;


pub use error::{Error, Result};
pub use params::{NumericsConfig, SuspensionInput, SuspensionParams, TaxisSpec};
pub use basic_state::{solve_basic_state, BasicState};
