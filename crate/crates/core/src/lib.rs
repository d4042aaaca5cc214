//! Barrier-certificate synthesis and verification for quantum circuits.

pub mod grover;
pub mod lp;
pub mod par;
pub mod quantum;
pub mod regions;
pub mod smt;
pub mod sobol;
mod sobol_table;
pub mod symbolic;
pub mod synth;
pub mod system;
pub mod templates;
